#include "qmrf/experiment.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include <Eigen/Core>

#include "qmrf/io.hpp"
#include "qmrf/subspace.hpp"

namespace qmrf {

namespace fs = std::filesystem;
using io::json;

namespace {

void say(const Log& log, const std::string& s) {
  if (log) log(s);
}

template <class F>
auto stage(const std::string& name, F&& f) -> decltype(f()) {
  using K = StageError::Kind;
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const ad::NonFiniteGradient& e) {
    throw StageError(name, K::numerical, e.what());
  } catch (const SurrogateDiverged& e) {
    throw StageError(name, K::numerical, e.what());
  } catch (const SimulationError& e) {
    throw StageError(name, K::numerical, e.what());
  } catch (const MissingGroundTruth& e) {
    throw StageError(name, K::config, e.what());
  } catch (const std::invalid_argument& e) {
    throw StageError(name, K::config, e.what());
  } catch (const io::FormatError& e) {
    throw StageError(name, K::config, e.what());
  } catch (const json::exception& e) {
    throw StageError(name, K::config, e.what());
  } catch (const std::exception& e) {
    throw StageError(name, K::other, e.what());
  }
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument(where + ": expected a JSON object");
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || k == a;
    if (!ok) throw std::invalid_argument(where + ": unknown key '" + k + "'");
  }
}

template <class T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

// --- configuration -----------------------------------------------------------

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
  check_keys(j, {"mode", "alpha", "epochs", "batch_size", "lr", "lr_drop_epoch", "lr_drop_factor", "weight_decay",
                 "n_transforms", "seed", "stop_grad_ei", "independent_transforms", "fixed_transforms",
                 "checkpoint_every", "net"},
             "train config");
  if (j.contains("mode")) c.mode = train_mode_from_string(j.at("mode").get<std::string>());
  maybe(j, "alpha", c.alpha);
  maybe(j, "epochs", c.epochs);
  maybe(j, "batch_size", c.batch_size);
  maybe(j, "lr", c.lr);
  maybe(j, "lr_drop_epoch", c.lr_drop_epoch);
  maybe(j, "lr_drop_factor", c.lr_drop_factor);
  maybe(j, "weight_decay", c.weight_decay);
  maybe(j, "n_transforms", c.n_transforms);
  maybe(j, "seed", c.seed);
  maybe(j, "stop_grad_ei", c.stop_grad_ei);
  maybe(j, "independent_transforms", c.independent_transforms);
  maybe(j, "fixed_transforms", c.fixed_transforms);
  maybe(j, "checkpoint_every", c.checkpoint_every);
  if (j.contains("net")) {
    const auto& n = j.at("net");
    check_keys(n, {"depth", "base", "zero_init_head", "head_bias"}, "net config");
    maybe(n, "depth", c.net.depth);
    maybe(n, "base", c.net.base);
    maybe(n, "zero_init_head", c.net.zero_init_head);
    maybe(n, "head_bias", c.net.head_bias);
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::desk(Pattern p) {
  ExperimentConfig c;
  c.pattern = p;
  return c;
}

ExperimentConfig ExperimentConfig::full_scale(Pattern p) {
  ExperimentConfig c;
  c.pattern = p;
  c.size = 224;
  c.n_train = 105;
  c.n_test = 15;
  for (auto m : {TrainMode::nlei, TrainMode::ei, TrainMode::supervised}) {
    TrainConfig tc = TrainConfig::full_scale(m, p);
    tc.net.base = 64;
    tc.net.depth = 4;
    c.train[to_string(m)] = tc;
  }
  return c;
}

TrainConfig ExperimentConfig::train_config(TrainMode mode) const {
  auto it = train.find(to_string(mode));
  TrainConfig c = it != train.end() ? it->second : TrainConfig::desk(mode, pattern);
  c.mode = mode;
  return c;
}

json ExperimentConfig::to_json() const {
  json tr = json::object();
  for (const auto& [k, v] : train) tr[k] = qmrf::to_json(v);
  return {{"pattern", to_string(pattern)},
          {"size", size},
          {"n_train", n_train},
          {"n_test", n_test},
          {"ratio", ratio},
          {"t", t},
          {"seed", seed},
          {"schedule", schedule},
          {"grid", {{"t1_min", grid.t1_min}, {"t1_max", grid.t1_max}, {"n_t1", grid.n_t1}, {"t2_min", grid.t2_min},
                    {"t2_max", grid.t2_max}, {"n_t2", grid.n_t2}, {"require_t2_le_t1", grid.require_t2_le_t1}}},
          {"surrogate", {{"epochs", surrogate.epochs}, {"lr", surrogate.lr}, {"seed", surrogate.seed},
                         {"hidden", surrogate.hidden}, {"lr_drop_at", surrogate.lr_drop_at},
                         {"lr_drop_factor", surrogate.lr_drop_factor}}},
          {"methods", methods},
          {"train", tr},
          {"deterministic", deterministic}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  check_keys(j, {"pattern", "size", "n_train", "n_test", "ratio", "t", "seed", "schedule", "grid", "surrogate",
                 "methods", "train", "deterministic"},
             "experiment config");
  ExperimentConfig c = desk(j.contains("pattern") ? pattern_from_string(j.at("pattern")) : Pattern::spiral);
  maybe(j, "size", c.size);
  maybe(j, "n_train", c.n_train);
  maybe(j, "n_test", c.n_test);
  maybe(j, "ratio", c.ratio);
  maybe(j, "t", c.t);
  maybe(j, "seed", c.seed);
  maybe(j, "schedule", c.schedule);
  maybe(j, "methods", c.methods);
  maybe(j, "deterministic", c.deterministic);
  if (j.contains("grid")) {
    const auto& g = j.at("grid");
    check_keys(g, {"t1_min", "t1_max", "n_t1", "t2_min", "t2_max", "n_t2", "require_t2_le_t1"}, "grid");
    maybe(g, "t1_min", c.grid.t1_min);
    maybe(g, "t1_max", c.grid.t1_max);
    maybe(g, "n_t1", c.grid.n_t1);
    maybe(g, "t2_min", c.grid.t2_min);
    maybe(g, "t2_max", c.grid.t2_max);
    maybe(g, "n_t2", c.grid.n_t2);
    maybe(g, "require_t2_le_t1", c.grid.require_t2_le_t1);
  }
  if (j.contains("surrogate")) {
    const auto& s = j.at("surrogate");
    check_keys(s, {"epochs", "lr", "seed", "hidden", "lr_drop_at", "lr_drop_factor"}, "surrogate");
    maybe(s, "epochs", c.surrogate.epochs);
    maybe(s, "lr", c.surrogate.lr);
    maybe(s, "seed", c.surrogate.seed);
    maybe(s, "hidden", c.surrogate.hidden);
    maybe(s, "lr_drop_at", c.surrogate.lr_drop_at);
    maybe(s, "lr_drop_factor", c.surrogate.lr_drop_factor);
  }
  if (j.contains("train"))
    for (const auto& [k, v] : j.at("train").items()) {
      const TrainMode m = train_mode_from_string(k);
      TrainConfig tc = train_config_from_json(v, TrainConfig::desk(m, c.pattern));
      tc.mode = m;
      c.train[to_string(m)] = tc;
    }
  c.validate();
  return c;
}

std::string ExperimentConfig::hash() const {
  io::Hasher h;
  h.str(to_json().dump());
  return h.hex();
}

void ExperimentConfig::validate() const {
  if (size < 8) throw std::invalid_argument("experiment: size must be >= 8");
  if (n_train < 1 || n_test < 1) throw std::invalid_argument("experiment: n_train and n_test must be >= 1");
  if (!(ratio >= 1)) throw std::invalid_argument("experiment: ratio must be >= 1");
  if (t < 1) throw std::invalid_argument("experiment: t must be >= 1");
  if (methods.empty()) throw std::invalid_argument("experiment: no methods");
  for (const auto& m : methods)
    if (m != "svd-mrf") train_mode_from_string(m);
  grid.validate();
  for (const auto& [k, v] : train) v.validate();
}

// --- pipeline ----------------------------------------------------------------

namespace {

std::string dictionary_key(const SequenceSchedule& s, const GridSpec& g, std::size_t t) {
  io::Hasher h;
  h.str(s.hash()).pod(g.t1_min).pod(g.t1_max).pod(static_cast<std::uint64_t>(g.n_t1)).pod(g.t2_min).pod(g.t2_max);
  h.pod(static_cast<std::uint64_t>(g.n_t2)).pod(static_cast<unsigned char>(g.require_t2_le_t1));
  h.pod(static_cast<std::uint64_t>(t)).pod(static_cast<std::uint64_t>(kDefaultEpgStates));
  return h.hex();
}

std::string surrogate_key(const std::string& dict_key, const SurrogateConfig& s) {
  io::Hasher h;
  h.str(dict_key).pod(static_cast<std::uint64_t>(s.epochs)).pod(s.lr).pod(s.seed);
  h.pod(static_cast<std::uint64_t>(s.hidden)).pod(s.lr_drop_at).pod(s.lr_drop_factor);
  return h.hex();
}

bool cached(const fs::path& stem) {
  auto j = stem;
  j += ".json";
  return fs::exists(j);
}

}  // namespace

Pipeline prepare_pipeline(const ExperimentConfig& cfg, const fs::path& cache_dir, const Log& log) {
  cfg.validate();
  if (cfg.deterministic) Eigen::setNbThreads(1);
  Pipeline p;
  p.schedule = stage("schedule", [&] {
    return cfg.schedule.empty() ? default_flip_schedule() : load_schedule_csv(cfg.schedule);
  });
  const std::string key = dictionary_key(p.schedule, cfg.grid, cfg.t);
  const fs::path dstem = cache_dir.empty() ? fs::path{} : cache_dir / ("dict_" + key);
  const fs::path bstem = cache_dir.empty() ? fs::path{} : cache_dir / ("basis_" + key);
  stage("dictionary", [&] {
    if (!cache_dir.empty() && cached(dstem) && cached(bstem)) {
      p.basis = std::make_shared<const TemporalBasis>(load_basis(bstem));
      p.dict = load_dictionary(dstem);
      if (p.dict.basis_hash != p.basis->hash()) throw io::FormatError("cached dictionary and basis disagree");
      say(log, "dictionary: loaded " + std::to_string(p.dict.size()) + " atoms from cache");
      return 0;
    }
    const auto t0 = std::chrono::steady_clock::now();
    const Dictionary full = build_dictionary(p.schedule, cfg.grid);
    p.basis = std::make_shared<const TemporalBasis>(fit_basis(full, cfg.t));
    p.dict = compress_dictionary(full, *p.basis);
    say(log, "dictionary: " + std::to_string(p.dict.size()) + " atoms, t = " + std::to_string(cfg.t) + " (" +
                 std::to_string(seconds_since(t0)) + " s)");
    if (!cache_dir.empty()) {
      fs::create_directories(cache_dir);
      save_basis(bstem, *p.basis);
      save_dictionary(dstem, p.dict);
    }
    return 0;
  });
  stage("dataset", [&] {
    const auto t0 = std::chrono::steady_clock::now();
    p.setup = AcquisitionSetup::create(p.schedule, p.basis, cfg.pattern, cfg.size, cfg.size, cfg.samples_per_frame());
    DatasetConfig dc;
    dc.H = dc.W = cfg.size;
    dc.n_train = cfg.n_train;
    dc.n_test = cfg.n_test;
    dc.pattern = cfg.pattern;
    dc.seed = cfg.seed;
    dc.keep_train_truth = std::find(cfg.methods.begin(), cfg.methods.end(), "supervised") != cfg.methods.end();
    p.ds = build_dataset(dc, p.setup);
    say(log, "dataset: " + std::to_string(cfg.n_train) + " train / " + std::to_string(cfg.n_test) + " test slices, " +
                 to_string(cfg.pattern) + ", m = " + std::to_string(p.op().m()) + " (" +
                 std::to_string(seconds_since(t0)) + " s)");
    return 0;
  });
  return p;
}

BlochSurrogate& ensure_surrogate(Pipeline& p, const ExperimentConfig& cfg, const fs::path& cache_dir, const Log& log) {
  if (p.surrogate) return *p.surrogate;
  return stage("surrogate", [&]() -> BlochSurrogate& {
    const fs::path stem = cache_dir.empty()
                              ? fs::path{}
                              : cache_dir / ("surrogate_" + surrogate_key(dictionary_key(p.schedule, cfg.grid, cfg.t),
                                                                          cfg.surrogate));
    if (!cache_dir.empty() && cached(stem)) {
      p.surrogate = std::make_shared<BlochSurrogate>(load_surrogate(stem));
      if (p.surrogate->basis_hash != p.basis->hash()) throw io::FormatError("cached surrogate has a different basis");
      say(log, "surrogate: loaded from cache");
    } else {
      const auto t0 = std::chrono::steady_clock::now();
      p.surrogate = std::make_shared<BlochSurrogate>(cfg.t, cfg.surrogate.seed, cfg.surrogate.hidden);
      const auto fit = train_surrogate(*p.surrogate, p.dict, cfg.surrogate);
      p.surrogate->basis_hash = p.basis->hash();
      char buf[160];
      std::snprintf(buf, sizeof buf, "surrogate: %zu epochs, train rel RMS %.4f (%.1f s)", cfg.surrogate.epochs,
                    fit.train_rel_rms, seconds_since(t0));
      say(log, buf);
    }
    p.surrogate->freeze();
    if (!cache_dir.empty()) {
      fs::create_directories(cache_dir);
      save_surrogate(stem, *p.surrogate);
    }
    return *p.surrogate;
  });
}

MrfDataset without_train_truth(const MrfDataset& ds) {
  MrfDataset out = ds;
  out.config.keep_train_truth = false;
  for (auto& it : out.items)
    if (it.split == Split::train) it.truth.reset();
  return out;
}

// --- methods -----------------------------------------------------------------

MethodRun run_method(const std::string& method, const ExperimentConfig& cfg, Pipeline& p, const fs::path& run_dir,
                     const fs::path& cache_dir, const TrainConfig* override_cfg, const Log& log) {
  MethodRun r;
  r.method = method;
  const auto t0 = std::chrono::steady_clock::now();
  const auto test = p.ds.indices(Split::test);
  if (method == "svd-mrf") {
    stage("svd-mrf", [&] {
      for (auto i : test) {
        const auto& it = p.ds.items[i];
        r.test_maps.push_back(svd_mrf_reconstruct(it.kspace, p.op(), p.dict, it.head_mask).to_qmaps());
      }
      return 0;
    });
    r.seconds = seconds_since(t0);
    return r;
  }
  const TrainMode mode = stage("config", [&] { return train_mode_from_string(method); });
  const TrainConfig tc = override_cfg ? *override_cfg : cfg.train_config(mode);
  const BlochSurrogate* B = nullptr;
  if (mode == TrainMode::nlei || mode == TrainMode::mc_only) B = &ensure_surrogate(p, cfg, cache_dir, log);
  const MrfDataset train_ds = mode == TrainMode::supervised ? p.ds : without_train_truth(p.ds);
  const std::size_t report_every = std::max<std::size_t>(1, tc.epochs / 10);
  TrainResult res = stage("train:" + method, [&] {
    return train(tc, train_ds, p.op(), B, run_dir, [&](const EpochLoss& e) {
      if (e.epoch == 1 || e.epoch % report_every == 0) {
        char buf[200];
        std::snprintf(buf, sizeof buf, "  %s epoch %zu/%zu  L_MC %.4g  L_EI %.4g  total %.4g  (%.0f s)",
                      method.c_str(), e.epoch, tc.epochs, e.mc, e.ei, e.total, seconds_since(t0));
        say(log, buf);
      }
    });
  });
  stage("reconstruct:" + method, [&] {
    for (auto i : test) {
      const auto& it = p.ds.items[i];
      if (mode == TrainMode::ei)
        r.test_maps.push_back(ei_to_qmaps(res.net, it.kspace, p.op(), p.dict, it.head_mask).to_qmaps());
      else
        r.test_maps.push_back(reconstruct_qmaps(res.net, it.kspace, p.op(), it.head_mask));
    }
    return 0;
  });
  r.history = std::move(res.history);
  r.seconds = seconds_since(t0);
  return r;
}

MetricReport evaluate_method(const MethodRun& run, const Pipeline& p, const std::string& config_hash) {
  return stage("evaluate:" + run.method, [&] {
    const auto test = p.ds.indices(Split::test);
    if (run.test_maps.size() != test.size()) throw std::invalid_argument("evaluate: one map set per test slice needed");
    std::vector<SliceMetrics> slices;
    for (std::size_t k = 0; k < test.size(); ++k) {
      const auto& it = p.ds.items[test[k]];
      if (!it.truth) throw MissingGroundTruth("evaluate: test slice '" + it.id + "' has no ground truth");
      slices.push_back(evaluate_slice(it.id, run.test_maps[k], *it.truth));
    }
    return make_report(run.method, std::move(slices), config_hash);
  });
}

namespace {

void write_images(const fs::path& dir, const std::string& tag, const QMaps& q, const QMaps& truth) {
  fs::create_directories(dir);
  const auto& mask = truth.head_mask;
  double t1max = 0, t2max = 0;
  for (std::size_t v = 0; v < truth.size(); ++v)
    if (mask[v]) {
      t1max = std::max(t1max, truth.t1_s[v]);
      t2max = std::max(t2max, truth.t2_s[v]);
    }
  std::vector<double> t1(q.size(), 0.0), t2(q.size(), 0.0);
  for (std::size_t v = 0; v < q.size(); ++v)
    if (mask[v]) {
      t1[v] = q.t1_s[v];
      t2[v] = q.t2_s[v];
    }
  const auto pd = normalised_pd(q, mask);
  write_pgm16(dir / (tag + "_T1.pgm"), t1, q.H, q.W, t1max > 0 ? t1max : 1.0);
  write_pgm16(dir / (tag + "_T2.pgm"), t2, q.H, q.W, t2max > 0 ? t2max : 1.0);
  write_pgm16(dir / (tag + "_PD.pgm"), pd, q.H, q.W, 1.0);
  io::write_f64(dir / (tag + "_T1.f64"), t1);
  io::write_f64(dir / (tag + "_T2.f64"), t2);
  io::write_f64(dir / (tag + "_PD.f64"), pd);
}

}  // namespace

namespace {

std::string summary_line(const std::string& name, const MetricReport& rep, double seconds) {
  char buf[200];
  std::snprintf(buf, sizeof buf, "  %s: T1 MAPE %.2f%%  T2 MAPE %.2f%%  PD MAE %.4f  (%.0f s)", name.c_str(),
                rep.t1.mape, rep.t2.mape, rep.pd.mae, seconds);
  return buf;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg, const fs::path& out_dir, const fs::path& cache_dir,
                                const Log& log) {
  fs::create_directories(out_dir);
  io::write_json(out_dir / "config.json", cfg.to_json());
  Pipeline p = prepare_pipeline(cfg, cache_dir, log);
  const std::string chash = cfg.hash();
  ExperimentResult result;
  const auto test = p.ds.indices(Split::test);
  const QMaps& truth0 = *p.ds.items[test.front()].truth;
  write_images(out_dir / "images", "truth", truth0, truth0);
  for (const auto& m : cfg.methods) {
    say(log, "method " + m);
    MethodRun run = run_method(m, cfg, p, m == "svd-mrf" ? fs::path{} : out_dir / m, cache_dir, nullptr, log);
    MetricReport rep = evaluate_method(run, p, chash);
    fs::create_directories(out_dir / m);
    write_per_slice_csv(out_dir / m / "per_slice.csv", rep);
    write_images(out_dir / "images", m, run.test_maps.front(), truth0);
    say(log, summary_line(m, rep, run.seconds));
    result.reports.push_back(std::move(rep));
    result.runs.push_back(std::move(run));
    // Rewritten after every method so a later failure keeps what finished.
    write_results_csv(out_dir / "results.csv", result.reports);
    std::ofstream(out_dir / "results.txt") << format_results(result.reports);
  }
  return result;
}

SweepResult alpha_sweep(const ExperimentConfig& cfg, TrainMode mode, const std::vector<double>& alphas,
                        const fs::path& out_dir, const fs::path& cache_dir, const Log& log) {
  if (alphas.empty()) throw StageError("config", StageError::Kind::config, "alpha_sweep: empty alpha list");
  if (mode != TrainMode::nlei && mode != TrainMode::ei)
    throw StageError("config", StageError::Kind::config, "alpha_sweep: mode must be nlei or ei");
  fs::create_directories(out_dir);
  io::write_json(out_dir / "config.json", cfg.to_json());
  ExperimentConfig c = cfg;
  c.methods = {to_string(mode)};
  Pipeline p = prepare_pipeline(c, cache_dir, log);
  SweepResult out;
  for (double a : alphas) {
    TrainConfig tc = c.train_config(mode);
    tc.alpha = a;
    char tag[64];
    std::snprintf(tag, sizeof tag, "alpha_%g", a);
    say(log, std::string("sweep ") + tag);
    const MethodRun run = run_method(to_string(mode), c, p, out_dir / tag, cache_dir, &tc, log);
    MetricReport rep = evaluate_method(run, p, c.hash());
    rep.method = tag;
    say(log, summary_line(tag, rep, run.seconds));
    write_per_slice_csv(out_dir / tag / "per_slice.csv", rep);
    out.rows.push_back({a, rep.qmap_mean(Metric::mape), rep.qmap_mean(Metric::mae), rep.qmap_mean(Metric::psnr),
                        rep.qmap_mean(Metric::ssim)});
    out.reports.push_back(std::move(rep));
    write_results_csv(out_dir / "results.csv", out.reports);
  }
  out.choice = select_alpha(out.rows);
  std::ofstream f(out_dir / "sweep.csv");
  f << "alpha,MAPE,MAE,PSNR,SSIM,votes,selected\n";
  char buf[256];
  for (std::size_t i = 0; i < out.rows.size(); ++i) {
    const auto& r = out.rows[i];
    std::snprintf(buf, sizeof buf, "%g,%.10g,%.10g,%.10g,%.10g,%zu,%d\n", r.alpha, r.mape, r.mae, r.psnr, r.ssim,
                  out.choice.votes[i], i == out.choice.index ? 1 : 0);
    f << buf;
  }
  write_results_csv(out_dir / "results.csv", out.reports);
  return out;
}

std::vector<double> decade_alpha_grid() {
  std::vector<double> a{0.0};
  for (int e = -12; e <= 6; ++e) a.push_back(std::pow(10.0, e));
  return a;
}

}  // namespace qmrf
