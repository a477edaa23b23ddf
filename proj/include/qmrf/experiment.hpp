#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "qmrf/eval.hpp"
#include "qmrf/recon.hpp"

namespace qmrf {

/// Failure of one pipeline stage; `kind` decides the CLI exit code.
class StageError : public std::runtime_error {
 public:
  enum class Kind { config, numerical, other };
  StageError(const std::string& stage, Kind kind, const std::string& what)
      : std::runtime_error("stage '" + stage + "': " + what), stage_(stage), kind_(kind) {}
  const std::string& stage() const { return stage_; }
  Kind kind() const { return kind_; }

 private:
  std::string stage_;
  Kind kind_;
};

struct ExperimentConfig {
  Pattern pattern = Pattern::spiral;
  std::size_t size = 64;
  std::size_t n_train = 20, n_test = 5;
  double ratio = 65.0;  // spatial compression H*W : m
  std::size_t t = 10;
  std::uint64_t seed = 1;
  std::string schedule;  // empty: bundled stand-in schedule
  GridSpec grid;         // 60 x 50 = 3000 atoms
  SurrogateConfig surrogate;
  std::vector<std::string> methods{"svd-mrf", "ei", "nlei", "supervised"};
  /// Per-mode training settings, keyed by mode name; missing modes use TrainConfig::desk.
  std::map<std::string, TrainConfig> train;
  bool deterministic = true;

  static ExperimentConfig desk(Pattern p);
  /// 224x224, m = 771 (65:1), 105 train / 15 test slices, full-scale training settings.
  static ExperimentConfig full_scale(Pattern p);

  TrainConfig train_config(TrainMode mode) const;
  std::size_t samples_per_frame() const { return samples_for_ratio(size, size, ratio); }
  nlohmann::json to_json() const;
  /// Starts from desk(pattern) and overrides the keys present; unknown keys are errors.
  static ExperimentConfig from_json(const nlohmann::json& j);
  std::string hash() const;
  void validate() const;
};

/// Overrides the fields of `base` present in `j`; unknown keys are errors.
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base);

using Log = std::function<void(const std::string&)>;

/// Everything shared by the methods of one experiment.
struct Pipeline {
  SequenceSchedule schedule;
  std::shared_ptr<const TemporalBasis> basis;
  Dictionary dict;  // compressed to t
  AcquisitionSetup setup;
  MrfDataset ds;    // training truth kept only if a supervised method is requested
  std::shared_ptr<BlochSurrogate> surrogate;  // fitted on demand, frozen

  const AcquisitionOperator& op() const { return *setup.op; }
};

/// Builds the dictionary, basis, operator and dataset. Dictionary, basis and surrogate are
/// cached under cache_dir (when non-empty), keyed by everything they depend on.
Pipeline prepare_pipeline(const ExperimentConfig& cfg, const std::filesystem::path& cache_dir, const Log& log = {});
/// Fits (or loads from cache) and freezes the surrogate.
BlochSurrogate& ensure_surrogate(Pipeline& p, const ExperimentConfig& cfg, const std::filesystem::path& cache_dir,
                                 const Log& log = {});

/// Copy of the dataset with training-slice ground truth removed.
MrfDataset without_train_truth(const MrfDataset& ds);

/// Test-split QMaps of one method: "svd-mrf", or a training mode name ("ei", "nlei", "supervised", "mc-only").
struct MethodRun {
  std::string method;
  std::vector<QMaps> test_maps;  // in test-split order
  std::vector<EpochLoss> history;
  double seconds = 0;
};

MethodRun run_method(const std::string& method, const ExperimentConfig& cfg, Pipeline& p,
                     const std::filesystem::path& run_dir, const std::filesystem::path& cache_dir,
                     const TrainConfig* override_cfg = nullptr, const Log& log = {});

MetricReport evaluate_method(const MethodRun& run, const Pipeline& p, const std::string& config_hash);

struct ExperimentResult {
  std::vector<MetricReport> reports;
  std::vector<MethodRun> runs;
};

/// Builds the pipeline, runs every method, evaluates on the test split and writes
/// config.json, results.csv, results.txt, per-method per_slice.csv and images under out_dir.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                                const std::filesystem::path& cache_dir = {}, const Log& log = {});

struct SweepResult {
  std::vector<SweepRow> rows;
  std::vector<MetricReport> reports;
  AlphaChoice choice;
};

/// One model per α (shared dataset and seed); writes sweep.csv with the averaged-QMap
/// metrics per α and the selection.
SweepResult alpha_sweep(const ExperimentConfig& cfg, TrainMode mode, const std::vector<double>& alphas,
                        const std::filesystem::path& out_dir, const std::filesystem::path& cache_dir = {},
                        const Log& log = {});

/// Decades 1e-12 .. 1e6, plus 0.
std::vector<double> decade_alpha_grid();

}  // namespace qmrf
