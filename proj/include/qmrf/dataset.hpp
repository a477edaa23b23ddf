#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "qmrf/acquisition.hpp"
#include "qmrf/epg.hpp"
#include "qmrf/phantom.hpp"
#include "qmrf/subspace.hpp"

namespace qmrf {

/// Everything fixed about the simulated acquisition: sequence, subspace and k-space sampling.
struct AcquisitionSetup {
  SequenceSchedule schedule;
  std::shared_ptr<const TemporalBasis> basis;
  std::shared_ptr<const SamplingMask> mask;
  std::shared_ptr<const AcquisitionOperator> op;
  std::size_t n_states = kDefaultEpgStates;

  static AcquisitionSetup create(SequenceSchedule schedule, std::shared_ptr<const TemporalBasis> basis,
                                 Pattern pattern, std::size_t H, std::size_t W, std::size_t m,
                                 std::size_t n_states = kDefaultEpgStates);
};

/// Samples per frame giving the closest ratio to `ratio`:1 on an H x W grid.
std::size_t samples_for_ratio(std::size_t H, std::size_t W, double ratio);

enum class Split { train, test };
std::string to_string(Split s);

struct DatasetConfig {
  std::size_t n_train = 20;
  std::size_t n_test = 5;
  std::size_t H = 64, W = 64;
  Pattern pattern = Pattern::spiral;
  std::uint64_t seed = 1;
  /// Also keep ground truth for training slices (needed only by the supervised baseline).
  bool keep_train_truth = false;
  bool smooth = true;

  static DatasetConfig desk() { return {}; }
  static DatasetConfig full_scale() { return {105, 15, 224, 224, Pattern::spiral, 1, false, false}; }
};

struct DatasetItem {
  std::string id;
  Split split = Split::train;
  std::uint64_t seed = 0;
  KSpaceData kspace;
  std::vector<std::uint8_t> head_mask;
  std::optional<QMaps> truth;
};

struct MrfDataset {
  DatasetConfig config;
  std::size_t H = 0, W = 0;
  std::string basis_hash, mask_hash;
  std::vector<DatasetItem> items;

  std::vector<std::size_t> indices(Split s) const;
  std::string manifest_hash() const;
};

/// Phantoms -> TSMIs (exact EPG) -> k-space. Training slices drop ground truth
/// unless config.keep_train_truth is set; test slices always keep it.
MrfDataset build_dataset(const DatasetConfig& config, const AcquisitionSetup& setup);

/// Read-only access to measurements and head masks of one split; no ground truth.
class SelfSupervisedReader {
 public:
  SelfSupervisedReader(const MrfDataset& ds, Split split);
  std::size_t size() const { return idx_.size(); }
  const KSpaceData& kspace(std::size_t i) const { return ds_->items[idx_[i]].kspace; }
  const std::vector<std::uint8_t>& head_mask(std::size_t i) const { return ds_->items[idx_[i]].head_mask; }
  std::size_t H() const { return ds_->H; }
  std::size_t W() const { return ds_->W; }

 private:
  const MrfDataset* ds_;
  std::vector<std::size_t> idx_;
};

/// Like SelfSupervisedReader but also exposes ground truth; throws if any item lacks it.
class SupervisedReader {
 public:
  SupervisedReader(const MrfDataset& ds, Split split);
  std::size_t size() const { return idx_.size(); }
  const KSpaceData& kspace(std::size_t i) const { return ds_->items[idx_[i]].kspace; }
  const std::vector<std::uint8_t>& head_mask(std::size_t i) const { return ds_->items[idx_[i]].head_mask; }
  const QMaps& truth(std::size_t i) const { return *ds_->items[idx_[i]].truth; }
  std::size_t H() const { return ds_->H; }
  std::size_t W() const { return ds_->W; }

 private:
  const MrfDataset* ds_;
  std::vector<std::size_t> idx_;
};

class MissingGroundTruth : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One directory per slice (kspace.bin, head_mask.bin, optional truth maps, manifest.json)
/// plus a top-level dataset.json listing splits.
void save_dataset(const std::filesystem::path& dir, const MrfDataset& ds);
MrfDataset load_dataset(const std::filesystem::path& dir);

/// Memoises a fingerprint model on exact (T1, T2) bit patterns.
FingerprintModel cached_model(FingerprintModel inner);

}  // namespace qmrf
