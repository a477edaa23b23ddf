#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "qmrf/epg.hpp"
#include "qmrf/types.hpp"

namespace qmrf {

struct GridPoint {
  double t1_s = 0.0;
  double t2_s = 0.0;
  bool operator==(const GridPoint&) const = default;
};

/// Independent log-spaced T1 and T2 axes. The grid is row-major: T1 outer, T2 inner.
struct GridSpec {
  double t1_min = 0.01, t1_max = 6.0;
  std::size_t n_t1 = 60;
  double t2_min = 0.004, t2_max = 4.0;
  std::size_t n_t2 = 50;
  /// Drop pairs with T2 > T1.
  bool require_t2_le_t1 = false;

  std::vector<GridPoint> points() const;
  void validate() const;
};

/// Inclusive parameter domain accepted by the simulator and surrogate.
constexpr double kT1Min = 0.01, kT1Max = 6.0, kT2Min = 0.004, kT2Max = 4.0;

/// Simulated fingerprints with their (T1, T2) coordinates.
///
/// `atoms` is N x L where L is either the sequence length T or, once
/// compressed, the subspace dimension t. Zero atoms never enter a dictionary.
struct Dictionary {
  CMatrix atoms;
  std::vector<GridPoint> grid;
  CMatrix normalized;      // unit-norm rows of `atoms`
  Eigen::VectorXd norms;   // ‖atoms.row(i)‖
  GridSpec spec;
  std::string schedule_hash;
  std::string basis_hash;  // empty when uncompressed

  std::size_t size() const { return grid.size(); }
  std::size_t length() const { return static_cast<std::size_t>(atoms.cols()); }
  bool compressed() const { return !basis_hash.empty(); }

  /// Builds the cached normalisation; drops zero rows.
  static Dictionary from_atoms(CMatrix atoms, std::vector<GridPoint> grid, GridSpec spec,
                               std::string schedule_hash, std::string basis_hash = {});
};

Dictionary build_dictionary(const SequenceSchedule& schedule, const GridSpec& spec,
                            std::size_t n_states = kDefaultEpgStates);
Dictionary build_dictionary(const SequenceSchedule& schedule, const std::vector<GridPoint>& grid,
                            std::size_t n_states = kDefaultEpgStates);

/// `<stem>.bin`: row-major atoms as little-endian float64 (re, im) pairs.
/// `<stem>.json`: N, length, grid ranges and points, schedule and basis hashes.
void save_dictionary(const std::filesystem::path& stem, const Dictionary& d);
Dictionary load_dictionary(const std::filesystem::path& stem);

}  // namespace qmrf
