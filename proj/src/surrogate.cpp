#include "qmrf/surrogate.hpp"

#include <cmath>
#include <random>

#include "qmrf/acquisition.hpp"
#include "qmrf/io.hpp"

namespace qmrf {

using ad::Tensor;

namespace {

constexpr double kLogFloor = 1e-3;

Tensor he_normal(ad::Shape s, std::size_t fan_in, double gain, std::mt19937_64& g) {
  std::normal_distribution<double> N(0.0, gain * std::sqrt(2.0 / static_cast<double>(fan_in)));
  std::vector<double> v(ad::shape_numel(s));
  for (auto& x : v) x = N(g);
  return Tensor::from(std::move(s), std::move(v), true);
}

}  // namespace

BlochSurrogate::BlochSurrogate(std::size_t t, std::uint64_t seed, std::size_t hidden) : t_(t), hidden_(hidden) {
  if (t == 0 || hidden == 0) throw std::invalid_argument("BlochSurrogate: t and hidden must be positive");
  std::mt19937_64 g(seed);
  const std::size_t h = hidden;
  params_ = {{"l1.weight", he_normal({h, 2, 1, 1}, 2, 1.0, g)},
             {"l1.bias", Tensor::zeros({h}, true)},
             {"l2.weight", he_normal({h, h, 1, 1}, h, 1.0, g)},
             {"l2.bias", Tensor::zeros({h}, true)},
             {"l3.weight", he_normal({2 * t, h, 1, 1}, h, 0.5, g)},
             {"l3.bias", Tensor::zeros({2 * t}, true)}};
}

void BlochSurrogate::freeze() {
  for (auto& p : params_) p.tensor.set_requires_grad(false);
  frozen_ = true;
}

Tensor BlochSurrogate::normalise(const Tensor& t1t2) const {
  const Tensor l = ad::log_floor(t1t2, kLogFloor);
  auto affine = [&](std::size_t c, double lo, double hi) {
    const double a = std::log(lo), b = std::log(hi);
    return ad::add_scalar(ad::scale(ad::slice_channels(l, c, 1), 2.0 / (b - a)), -1.0 - 2.0 * a / (b - a));
  };
  return ad::concat_channels({affine(0, kT1Min, kT1Max), affine(1, kT2Min, kT2Max)});
}

Tensor BlochSurrogate::network(const Tensor& t1t2) const {
  if (t1t2.rank() != 4 || t1t2.dim(1) != 2)
    throw ad::ShapeError("BlochSurrogate::network: expected [N,2,H,W], got " + ad::shape_str(t1t2.shape()));
  const auto& p = params_;
  Tensor z = ad::relu(ad::conv2d(normalise(t1t2), p[0].tensor, p[1].tensor));
  z = ad::relu(ad::conv2d(z, p[2].tensor, p[3].tensor));
  return ad::conv2d(z, p[4].tensor, p[5].tensor);
}

Tensor BlochSurrogate::apply(const Tensor& q) const {
  if (q.rank() != 4 || q.dim(1) != 4)
    throw ad::ShapeError("BlochSurrogate::apply: expected [N,4,H,W], got " + ad::shape_str(q.shape()));
  const Tensor u = network(ad::slice_channels(q, 0, 2));
  const Tensor ur = ad::slice_channels(u, 0, t_), ui = ad::slice_channels(u, t_, t_);
  const Tensor pr = ad::slice_channels(q, 2, 1), pi = ad::slice_channels(q, 3, 1);
  const Tensor re = ad::sub(ad::mul_channel_broadcast(ur, pr), ad::mul_channel_broadcast(ui, pi));
  const Tensor im = ad::add(ad::mul_channel_broadcast(ui, pr), ad::mul_channel_broadcast(ur, pi));
  return ad::concat_channels({re, im});
}

Tensor BlochSurrogate::apply_at(const Tensor& q, std::span<const std::size_t> idx) const {
  if (q.rank() != 4 || q.dim(1) != 4)
    throw ad::ShapeError("BlochSurrogate::apply_at: expected [N,4,H,W], got " + ad::shape_str(q.shape()));
  return ad::scatter_pixels(apply(ad::gather_pixels(q, idx)), idx, q.dim(0), q.dim(2), q.dim(3));
}

CVector BlochSurrogate::evaluate(double t1_s, double t2_s) const {
  const Tensor u = network(Tensor::from({1, 2, 1, 1}, {t1_s, t2_s}));
  CVector v(static_cast<Eigen::Index>(t_));
  for (std::size_t j = 0; j < t_; ++j) v[static_cast<Eigen::Index>(j)] = cd(u.values()[j], u.values()[t_ + j]);
  return v;
}

FingerprintModel BlochSurrogate::as_model() const {
  return [this](double t1, double t2) { return evaluate(t1, t2); };
}

SurrogateFit train_surrogate(BlochSurrogate& b, const Dictionary& dict, const SurrogateConfig& cfg) {
  if (b.frozen()) throw std::logic_error("train_surrogate: surrogate is frozen");
  if (dict.size() == 0) throw std::invalid_argument("train_surrogate: empty dictionary");
  if (dict.length() != b.t())
    throw std::invalid_argument("train_surrogate: dictionary length " + std::to_string(dict.length()) +
                                " differs from surrogate t=" + std::to_string(b.t()));
  const std::size_t N = dict.size(), t = b.t();
  std::vector<double> in(2 * N), target(2 * t * N);
  for (std::size_t i = 0; i < N; ++i) {
    in[i] = dict.grid[i].t1_s;
    in[N + i] = dict.grid[i].t2_s;
    for (std::size_t j = 0; j < t; ++j) {
      const cd a = dict.atoms(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      target[j * N + i] = a.real();
      target[(t + j) * N + i] = a.imag();
    }
  }
  // The whole grid as a 1 x N image.
  const Tensor x = Tensor::from({1, 2, 1, N}, in);
  const Tensor y = Tensor::from({1, 2 * t, 1, N}, target);
  ad::AdamConfig ac;
  ac.lr = cfg.lr;
  ad::Adam opt(b.parameters(), ac);
  const auto drop_epoch = static_cast<std::size_t>(std::llround(cfg.lr_drop_at * static_cast<double>(cfg.epochs)));
  SurrogateFit fit;
  fit.loss_history.reserve(cfg.epochs);
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    if (e == drop_epoch && cfg.lr_drop_at < 1.0) opt.set_lr(cfg.lr * cfg.lr_drop_factor);
    opt.zero_grad();
    Tensor L = ad::mse_loss(b.network(x), y);
    const double l = L.item();
    if (!std::isfinite(l))
      throw SurrogateDiverged("train_surrogate: loss became non-finite at epoch " + std::to_string(e) +
                              " (last finite loss " +
                              (fit.loss_history.empty() ? std::string("n/a") : std::to_string(fit.loss_history.back())) +
                              ", lr " + std::to_string(opt.lr()) + ")");
    L.backward();
    opt.step();
    fit.loss_history.push_back(l);
  }
  const Tensor out = b.network(x);
  fit.final_mse = ad::mse_loss(out, y).item();
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < y.numel(); ++i) {
    const double d = out.values()[i] - y.values()[i];
    num += d * d;
    den += y.values()[i] * y.values()[i];
  }
  fit.train_rel_rms = std::sqrt(num / den);
  b.basis_hash = dict.basis_hash;
  return fit;
}

double surrogate_rel_rms(const BlochSurrogate& b, const std::vector<GridPoint>& probes, const FingerprintModel& ref) {
  double num = 0.0, den = 0.0;
  for (const auto& p : probes) {
    const CVector r = ref(p.t1_s, p.t2_s);
    num += (b.evaluate(p.t1_s, p.t2_s) - r).squaredNorm();
    den += r.squaredNorm();
  }
  return std::sqrt(num / den);
}

std::vector<GridPoint> random_probes(const GridSpec& spec, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 g(seed);
  std::uniform_real_distribution<double> u1(std::log(spec.t1_min), std::log(spec.t1_max));
  std::uniform_real_distribution<double> u2(std::log(spec.t2_min), std::log(spec.t2_max));
  std::vector<GridPoint> out;
  while (out.size() < n) {
    GridPoint p{std::exp(u1(g)), std::exp(u2(g))};
    if (spec.require_t2_le_t1 && p.t2_s > p.t1_s) continue;
    out.push_back(p);
  }
  return out;
}

void save_surrogate(const std::filesystem::path& stem, const BlochSurrogate& b) {
  ad::save_checkpoint(stem, b.parameters(),
                      {{"kind", "bloch-surrogate"},
                       {"t", b.t()},
                       {"hidden", b.hidden()},
                       {"t1_range", {kT1Min, kT1Max}},
                       {"t2_range", {kT2Min, kT2Max}},
                       {"input_log_floor", kLogFloor},
                       {"basis_hash", b.basis_hash},
                       {"frozen", b.frozen()}});
}

BlochSurrogate load_surrogate(const std::filesystem::path& stem) {
  auto man = stem;
  man += ".json";
  const auto j = io::read_json(man);
  if (j.value("kind", "") != "bloch-surrogate") throw io::FormatError(man.string() + ": not a surrogate checkpoint");
  BlochSurrogate b(j.at("t").get<std::size_t>(), 0, j.at("hidden").get<std::size_t>());
  ad::load_checkpoint(stem, b.parameters());
  b.basis_hash = j.at("basis_hash");
  if (j.at("frozen").get<bool>()) b.freeze();
  return b;
}

}  // namespace qmrf
