#include "qmrf/optim.hpp"

#include <cmath>

#include "qmrf/io.hpp"

namespace qmrf::ad {

NonFiniteGradient::NonFiniteGradient(const std::string& param, std::size_t index)
    : std::runtime_error("non-finite gradient in parameter '" + param + "' at element " +
                         std::to_string(index)),
      param_(param) {}

void adam_step(ParameterList& params, AdamState& state, const AdamConfig& cfg) {
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), {});
    state.v.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].tensor.numel(), 0.0);
      state.v[i].assign(params[i].tensor.numel(), 0.0);
    }
    state.step = 0;
  }
  // Validate everything before mutating anything.
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    const auto g = p.tensor.grad();
    for (std::size_t j = 0; j < g.size(); ++j)
      if (!std::isfinite(g[j])) throw NonFiniteGradient(p.name, j);
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& t = params[i].tensor;
    auto w = t.mutable_values();
    const auto g = t.grad();
    const bool has = t.has_grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = (has ? g[j] : 0.0) + cfg.weight_decay * w[j];
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
      const double mh = m[j] / bc1;
      const double vh = v[j] / bc2;
      w[j] -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

std::size_t parameter_count(const ParameterList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

std::string parameter_hash(const ParameterList& params) {
  io::Hasher h;
  for (const auto& p : params) {
    h.str(p.name);
    for (auto d : p.tensor.shape()) h.pod(static_cast<std::uint64_t>(d));
    h.doubles(p.tensor.values());
  }
  return h.hex();
}

void save_checkpoint(const std::filesystem::path& stem, const ParameterList& params,
                     const nlohmann::json& extra) {
  std::vector<double> flat;
  flat.reserve(parameter_count(params));
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& p : params) {
    entries.push_back({{"name", p.name}, {"shape", p.tensor.shape()}, {"offset", flat.size()}});
    flat.insert(flat.end(), p.tensor.values().begin(), p.tensor.values().end());
  }
  auto bin = stem;
  bin += ".bin";
  auto man = stem;
  man += ".json";
  io::write_f64(bin, flat);
  nlohmann::json j = extra;
  j["format"] = "qmrf-checkpoint-v1";
  j["dtype"] = "float64-le";
  j["count"] = flat.size();
  j["hash"] = parameter_hash(params);
  j["tensors"] = entries;
  io::write_json(man, j);
}

nlohmann::json load_checkpoint(const std::filesystem::path& stem, ParameterList& params) {
  auto bin = stem;
  bin += ".bin";
  auto man = stem;
  man += ".json";
  const auto j = io::read_json(man);
  const auto flat = io::read_f64(bin);
  const auto& entries = j.at("tensors");
  if (entries.size() != params.size())
    throw io::FormatError(man.string() + ": expected " + std::to_string(params.size()) +
                          " tensors, found " + std::to_string(entries.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& e = entries[i];
    auto& p = params[i];
    if (e.at("name").get<std::string>() != p.name)
      throw io::FormatError("checkpoint tensor " + std::to_string(i) + " is '" +
                            e.at("name").get<std::string>() + "', expected '" + p.name + "'");
    if (e.at("shape").get<Shape>() != p.tensor.shape())
      throw io::FormatError("checkpoint tensor '" + p.name + "' has shape " +
                            shape_str(e.at("shape").get<Shape>()) + ", expected " +
                            shape_str(p.tensor.shape()));
    const auto off = e.at("offset").get<std::size_t>();
    if (off + p.tensor.numel() > flat.size())
      throw io::FormatError("checkpoint tensor '" + p.name + "' runs past end of " + bin.string());
    auto w = p.tensor.mutable_values();
    std::copy(flat.begin() + static_cast<long>(off),
              flat.begin() + static_cast<long>(off + w.size()), w.begin());
  }
  return j;
}

}  // namespace qmrf::ad
