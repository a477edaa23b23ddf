#include "qmrf/dataset.hpp"

#include <cmath>
#include <cstring>
#include <map>

#include "qmrf/io.hpp"

namespace qmrf {

AcquisitionSetup AcquisitionSetup::create(SequenceSchedule schedule, std::shared_ptr<const TemporalBasis> basis,
                                          Pattern pattern, std::size_t H, std::size_t W, std::size_t m,
                                          std::size_t n_states) {
  AcquisitionSetup s;
  s.schedule = std::move(schedule);
  s.basis = std::move(basis);
  s.mask = std::make_shared<const SamplingMask>(make_mask(pattern, H, W, m, s.schedule.length()));
  s.op = std::make_shared<const AcquisitionOperator>(s.mask, s.basis);
  s.n_states = n_states;
  return s;
}

std::size_t samples_for_ratio(std::size_t H, std::size_t W, double ratio) {
  if (!(ratio >= 1.0)) throw std::invalid_argument("samples_for_ratio: ratio must be >= 1");
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(static_cast<double>(H * W) / ratio)));
}

std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

std::vector<std::size_t> MrfDataset::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < items.size(); ++i)
    if (items[i].split == s) out.push_back(i);
  return out;
}

std::string MrfDataset::manifest_hash() const {
  io::Hasher h;
  h.str(basis_hash).str(mask_hash).pod(static_cast<std::uint64_t>(H)).pod(static_cast<std::uint64_t>(W));
  for (const auto& it : items) {
    h.str(it.id).pod(static_cast<int>(it.split)).pod(it.seed);
    h.bytes(it.kspace.samples.data(), sizeof(cd) * static_cast<std::size_t>(it.kspace.samples.size()));
    h.bytes(it.head_mask.data(), it.head_mask.size());
    if (it.truth) h.doubles(it.truth->t1_s).doubles(it.truth->t2_s).doubles(it.truth->pd_re).doubles(it.truth->pd_im);
  }
  return h.hex();
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

FingerprintModel cached_model(FingerprintModel inner) {
  auto cache = std::make_shared<std::map<std::pair<std::uint64_t, std::uint64_t>, CVector>>();
  return [inner = std::move(inner), cache](double t1, double t2) {
    std::uint64_t a, b;
    std::memcpy(&a, &t1, sizeof a);
    std::memcpy(&b, &t2, sizeof b);
    auto it = cache->find({a, b});
    if (it != cache->end()) return it->second;
    CVector v = inner(t1, t2);
    cache->emplace(std::make_pair(a, b), v);
    return v;
  };
}

MrfDataset build_dataset(const DatasetConfig& config, const AcquisitionSetup& setup) {
  if (config.n_train < 1 || config.n_test < 1) throw std::invalid_argument("build_dataset: counts must be >= 1");
  if (setup.op->H() != config.H || setup.op->W() != config.W)
    throw std::invalid_argument("build_dataset: operator grid does not match dataset size");
  MrfDataset ds;
  ds.config = config;
  ds.H = config.H;
  ds.W = config.W;
  ds.basis_hash = setup.basis->hash();
  ds.mask_hash = setup.mask->hash();
  const auto model = cached_model(make_epg_model(setup.schedule, setup.basis, setup.n_states));
  const std::size_t total = config.n_train + config.n_test;
  for (std::size_t i = 0; i < total; ++i) {
    DatasetItem it;
    it.split = i < config.n_train ? Split::train : Split::test;
    it.id = to_string(it.split) + "_" + std::to_string(it.split == Split::train ? i : i - config.n_train);
    it.seed = splitmix64(config.seed * 0x100000001B3ULL + i);
    QMaps q = make_brain_phantom(config.H, config.W, it.seed, PhantomOptions{config.smooth});
    const Tsmi x = synthesize_tsmi(q, model, ds.basis_hash);
    it.kspace = simulate_kspace(x, *setup.op);
    it.head_mask = q.head_mask;
    if (it.split == Split::test || config.keep_train_truth) it.truth = std::move(q);
    ds.items.push_back(std::move(it));
  }
  return ds;
}

SelfSupervisedReader::SelfSupervisedReader(const MrfDataset& ds, Split split)
    : ds_(&ds), idx_(ds.indices(split)) {}

SupervisedReader::SupervisedReader(const MrfDataset& ds, Split split) : ds_(&ds), idx_(ds.indices(split)) {
  for (auto i : idx_)
    if (!ds.items[i].truth)
      throw MissingGroundTruth("supervised access to '" + ds.items[i].id + "' which stores no ground truth");
}

void save_dataset(const std::filesystem::path& dir, const MrfDataset& ds) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  io::json splits{{"train", io::json::array()}, {"test", io::json::array()}};
  for (const auto& it : ds.items) {
    const fs::path d = dir / it.id;
    fs::create_directories(d);
    io::write_c128(d / "kspace.bin",
                   std::span<const cd>(it.kspace.samples.data(), static_cast<std::size_t>(it.kspace.samples.size())));
    io::write_u8(d / "head_mask.bin", it.head_mask);
    io::json man{{"id", it.id},
                 {"split", to_string(it.split)},
                 {"seed", it.seed},
                 {"H", ds.H},
                 {"W", ds.W},
                 {"m", it.kspace.samples.rows()},
                 {"T", it.kspace.samples.cols()},
                 {"kspace", {{"file", "kspace.bin"}, {"dtype", "complex-as-float64-pairs-le"}, {"layout", "row-major m x T"}}},
                 {"mask_ref", it.kspace.mask_ref},
                 {"pattern", to_string(ds.config.pattern)},
                 {"basis_hash", ds.basis_hash},
                 {"has_truth", it.truth.has_value()}};
    if (it.truth) {
      io::write_f64(d / "t1_s.bin", it.truth->t1_s);
      io::write_f64(d / "t2_s.bin", it.truth->t2_s);
      io::write_f64(d / "pd_re.bin", it.truth->pd_re);
      io::write_f64(d / "pd_im.bin", it.truth->pd_im);
    }
    io::write_json(d / "manifest.json", man);
    splits[to_string(it.split)].push_back(it.id);
  }
  const auto& c = ds.config;
  io::write_json(dir / "dataset.json", {{"format", "qmrf-dataset-v1"},
                                        {"H", ds.H},
                                        {"W", ds.W},
                                        {"n_train", c.n_train},
                                        {"n_test", c.n_test},
                                        {"pattern", to_string(c.pattern)},
                                        {"seed", c.seed},
                                        {"keep_train_truth", c.keep_train_truth},
                                        {"smooth", c.smooth},
                                        {"basis_hash", ds.basis_hash},
                                        {"mask_hash", ds.mask_hash},
                                        {"manifest_hash", ds.manifest_hash()},
                                        {"splits", splits}});
}

MrfDataset load_dataset(const std::filesystem::path& dir) {
  const auto j = io::read_json(dir / "dataset.json");
  MrfDataset ds;
  ds.H = j.at("H");
  ds.W = j.at("W");
  ds.config.H = ds.H;
  ds.config.W = ds.W;
  ds.config.n_train = j.at("n_train");
  ds.config.n_test = j.at("n_test");
  ds.config.pattern = pattern_from_string(j.at("pattern"));
  ds.config.seed = j.at("seed");
  ds.config.keep_train_truth = j.at("keep_train_truth");
  ds.config.smooth = j.at("smooth");
  ds.basis_hash = j.at("basis_hash");
  ds.mask_hash = j.at("mask_hash");
  for (const char* split : {"train", "test"}) {
    for (const auto& id : j.at("splits").at(split)) {
      const auto d = dir / id.get<std::string>();
      const auto man = io::read_json(d / "manifest.json");
      DatasetItem it;
      it.id = man.at("id");
      it.split = std::string(split) == "train" ? Split::train : Split::test;
      it.seed = man.at("seed");
      const std::size_t m = man.at("m"), T = man.at("T");
      const auto flat = io::read_c128(d / "kspace.bin");
      if (flat.size() != m * T) throw io::FormatError((d / "kspace.bin").string() + ": size mismatch");
      it.kspace.samples.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(T));
      std::copy(flat.begin(), flat.end(), it.kspace.samples.data());
      it.kspace.mask_ref = man.at("mask_ref");
      it.head_mask = io::read_u8(d / "head_mask.bin");
      if (man.at("has_truth").get<bool>()) {
        QMaps q;
        q.H = ds.H;
        q.W = ds.W;
        q.t1_s = io::read_f64(d / "t1_s.bin");
        q.t2_s = io::read_f64(d / "t2_s.bin");
        q.pd_re = io::read_f64(d / "pd_re.bin");
        q.pd_im = io::read_f64(d / "pd_im.bin");
        q.head_mask = it.head_mask;
        q.validate();
        it.truth = std::move(q);
      }
      ds.items.push_back(std::move(it));
    }
  }
  if (ds.manifest_hash() != j.at("manifest_hash").get<std::string>())
    throw io::FormatError((dir / "dataset.json").string() + ": manifest hash mismatch");
  return ds;
}

}  // namespace qmrf
