// Command-line front end. Exit codes: 0 success, 2 configuration error, 3 numerical failure.
#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

#include "qmrf/experiment.hpp"
#include "qmrf/io.hpp"
#include "qmrf/subspace.hpp"

using namespace qmrf;
namespace fs = std::filesystem;

namespace {

constexpr int kConfigError = 2, kNumericalError = 3;

struct Globals {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool deterministic = false;
  std::string pattern;
  std::size_t size = 0;
  std::string cache = "qmrf_cache";
};

ExperimentConfig load_config(const Globals& g) {
  ExperimentConfig c = g.config.empty() ? ExperimentConfig::desk(Pattern::spiral)
                                        : ExperimentConfig::from_json(io::read_json(g.config));
  if (!g.pattern.empty()) c.pattern = pattern_from_string(g.pattern);
  if (g.size) c.size = g.size;
  if (g.seed_set) c.seed = g.seed;
  if (g.deterministic) c.deterministic = true;
  c.validate();
  return c;
}

void log_line(const std::string& s) { std::cerr << s << std::endl; }

std::vector<double> parse_alphas(const std::string& s) {
  if (s == "decades") return decade_alpha_grid();
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const auto comma = s.find(',', pos);
    const std::string tok = s.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    std::size_t used = 0;
    const double v = std::stod(tok, &used);
    if (used != tok.size()) throw std::invalid_argument("bad alpha '" + tok + "'");
    out.push_back(v);
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-supervised MRF reconstruction: simulation, training and evaluation"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Experiment configuration (JSON)");
  app.add_option_function<std::uint64_t>("--seed", [&](std::uint64_t s) { g.seed = s, g.seed_set = true; },
                                         "Master seed");
  app.add_flag("--deterministic", g.deterministic, "Single-threaded kernels for bit-reproducible runs");
  app.add_option("--pattern", g.pattern, "Sampling pattern")->check(CLI::IsMember({"spiral", "epi"}));
  app.add_option("--size", g.size, "Image size H = W");
  app.add_option("--cache", g.cache, "Cache directory for dictionary, basis and surrogate");

  auto* sim = app.add_subcommand("simulate-dict", "Simulate the FISP dictionary over the configured grid");
  std::string sim_out = "dictionary", schedule_path;
  sim->add_option("--out", sim_out, "Output stem (<stem>.bin/.json)");
  sim->add_option("--schedule", schedule_path, "Flip-angle schedule CSV (default: bundled stand-in)");

  auto* fit = app.add_subcommand("fit-basis", "Fit the temporal SVD basis and compress a dictionary");
  std::string fit_dict, fit_out = "basis";
  std::size_t fit_t = 10;
  fit->add_option("--dict", fit_dict, "Dictionary stem")->required();
  fit->add_option("--t", fit_t, "Subspace dimension");
  fit->add_option("--out", fit_out, "Output stem; writes <stem> (basis) and <stem>_dict (compressed)");

  auto* mk = app.add_subcommand("make-dataset", "Simulate phantoms and k-space and write the dataset");
  std::string mk_out = "dataset";
  mk->add_option("--out", mk_out, "Output directory");

  auto* tr = app.add_subcommand("train", "Train one reconstruction network");
  std::string tr_mode = "nlei", tr_out = "run";
  double tr_alpha = -1;
  std::size_t tr_epochs = 0;
  tr->add_option("--mode", tr_mode, "nlei, ei, supervised or mc-only");
  tr->add_option("--alpha", tr_alpha, "EI weight (default from the configuration)");
  tr->add_option("--epochs", tr_epochs, "Epochs (default from the configuration)");
  tr->add_option("--out", tr_out, "Run directory");

  auto* ev = app.add_subcommand("evaluate", "Evaluate a trained run (or svd-mrf) on the test split");
  std::string ev_run, ev_method;
  ev->add_option("--run", ev_run, "Run directory written by 'train'");
  ev->add_option("--method", ev_method, "Evaluate 'svd-mrf' instead of a trained run");

  auto* rx = app.add_subcommand("run-experiment", "Train and evaluate every configured method");
  std::string rx_out = "experiment";
  rx->add_option("--out", rx_out, "Output directory");

  auto* sw = app.add_subcommand("alpha-sweep", "Train one model per alpha and select by the vote rule");
  std::string sw_mode = "nlei", sw_alphas = "0,1e-8,1e-6,1e-4,1e-2,1", sw_out = "sweep";
  sw->add_option("--mode", sw_mode, "nlei or ei");
  sw->add_option("--alphas", sw_alphas, "Comma-separated list, or 'decades' for 0 and 1e-12..1e6");
  sw->add_option("--out", sw_out, "Output directory");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every autodiff op and both losses");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kConfigError;
  }

  try {
    const fs::path cache = g.cache;
    if (*sim) {
      ExperimentConfig c = load_config(g);
      const auto schedule = schedule_path.empty() ? default_flip_schedule() : load_schedule_csv(schedule_path);
      const Dictionary d = build_dictionary(schedule, c.grid);
      save_dictionary(sim_out, d);
      std::printf("%zu atoms x %zu frames -> %s.bin\n", d.size(), d.length(), sim_out.c_str());
    } else if (*fit) {
      const Dictionary d = load_dictionary(fit_dict);
      const TemporalBasis b = fit_basis(d, fit_t);
      save_basis(fit_out, b);
      save_dictionary(fit_out + "_dict", compress_dictionary(d, b));
      std::printf("basis t = %zu, tail energy %.3e -> %s\n", fit_t, tail_energy(b, fit_t), fit_out.c_str());
    } else if (*mk) {
      ExperimentConfig c = load_config(g);
      Pipeline p = prepare_pipeline(c, cache, log_line);
      save_dataset(mk_out, p.ds);
      save_basis(fs::path(mk_out) / "basis", *p.basis);
      save_mask(fs::path(mk_out) / "mask", *p.setup.mask);
      std::printf("%zu slices -> %s\n", p.ds.items.size(), mk_out.c_str());
    } else if (*tr) {
      ExperimentConfig c = load_config(g);
      const TrainMode mode = train_mode_from_string(tr_mode);
      TrainConfig tc = c.train_config(mode);
      if (tr_alpha >= 0) tc.alpha = tr_alpha;
      if (tr_epochs) tc.epochs = tr_epochs;
      if (g.seed_set) tc.seed = g.seed;
      tc.validate();
      if (mode == TrainMode::supervised) c.methods = {"supervised"};
      Pipeline p = prepare_pipeline(c, cache, log_line);
      fs::create_directories(tr_out);
      io::write_json(fs::path(tr_out) / "experiment.json", c.to_json());
      const MethodRun run = run_method(to_string(mode), c, p, tr_out, cache, &tc, log_line);
      const MetricReport rep = evaluate_method(run, p, c.hash());
      write_per_slice_csv(fs::path(tr_out) / "per_slice.csv", rep);
      std::cout << format_results({rep});
    } else if (*ev) {
      if (ev_run.empty() == ev_method.empty()) throw std::invalid_argument("evaluate: give exactly one of --run or --method");
      if (!ev_method.empty()) {
        if (ev_method != "svd-mrf") throw std::invalid_argument("evaluate: --method supports only svd-mrf");
        ExperimentConfig c = load_config(g);
        Pipeline p = prepare_pipeline(c, cache, log_line);
        std::cout << format_results({evaluate_method(run_method("svd-mrf", c, p, {}, cache), p, c.hash())});
      } else {
        const fs::path run = ev_run;
        ExperimentConfig c = ExperimentConfig::from_json(io::read_json(run / "experiment.json"));
        const TrainConfig tc = train_config_from_json(io::read_json(run / "config.json"), TrainConfig{});
        if (tc.mode == TrainMode::supervised) c.methods = {"supervised"};
        Pipeline p = prepare_pipeline(c, cache, log_line);
        const auto man = io::read_json(run / "manifest.json");
        if (man.at("dataset_hash").get<std::string>() != (tc.mode == TrainMode::supervised
                                                              ? p.ds.manifest_hash()
                                                              : without_train_truth(p.ds).manifest_hash()))
          throw std::invalid_argument("evaluate: rebuilt dataset differs from the one the run was trained on");
        ReconNetwork net(tc.mode == TrainMode::ei ? OutputMode::tsmi : OutputMode::qmap, c.t, tc.net, tc.seed,
                         man.at("normalization").get<double>());
        ad::load_checkpoint(run / "final", net.parameters());
        MethodRun mr;
        mr.method = to_string(tc.mode);
        for (auto i : p.ds.indices(Split::test)) {
          const auto& it = p.ds.items[i];
          mr.test_maps.push_back(tc.mode == TrainMode::ei
                                     ? ei_to_qmaps(net, it.kspace, p.op(), p.dict, it.head_mask).to_qmaps()
                                     : reconstruct_qmaps(net, it.kspace, p.op(), it.head_mask));
        }
        const MetricReport rep = evaluate_method(mr, p, c.hash());
        write_per_slice_csv(run / "per_slice.csv", rep);
        std::cout << format_results({rep});
      }
    } else if (*rx) {
      const ExperimentConfig c = load_config(g);
      const auto res = run_experiment(c, rx_out, cache, log_line);
      std::cout << format_results(res.reports);
    } else if (*sw) {
      const ExperimentConfig c = load_config(g);
      const auto res = alpha_sweep(c, train_mode_from_string(sw_mode), parse_alphas(sw_alphas), sw_out, cache, log_line);
      for (std::size_t i = 0; i < res.rows.size(); ++i) {
        const auto& r = res.rows[i];
        std::printf("alpha %-8g MAPE %8.3f  MAE %8.5f  PSNR %7.3f  SSIM %6.4f  votes %zu%s\n", r.alpha, r.mape, r.mae,
                    r.psnr, r.ssim, res.choice.votes[i], i == res.choice.index ? "  <- selected" : "");
      }
    } else if (*gc) {
      bool ok = true;
      auto show = [&](const ad::GradcheckResult& r) {
        const bool pass = r.passed(1e-4);
        ok = ok && pass;
        std::printf("%-24s max rel err %.3e over %zu probes  %s\n", r.name.c_str(), r.max_rel_err, r.n_checked,
                    pass ? "ok" : "FAIL");
      };
      const std::uint64_t seed = g.seed_set ? g.seed : 1;
      for (const auto& r : ad::op_gradcheck_suite(seed)) show(r);
      for (const auto& r : loss_gradcheck_suite(seed)) show(r);
      return ok ? 0 : kNumericalError;
    }
    return 0;
  } catch (const StageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.kind() == StageError::Kind::numerical ? kNumericalError : e.kind() == StageError::Kind::config ? kConfigError : 1;
  } catch (const ad::NonFiniteGradient& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kNumericalError;
  } catch (const SurrogateDiverged& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kNumericalError;
  } catch (const SimulationError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kNumericalError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const io::FormatError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const MissingGroundTruth& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
