#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "qmrf/types.hpp"

namespace qmrf {

/// Inversion-prepared FISP timing and flip-angle train. Times in seconds.
struct SequenceSchedule {
  std::vector<double> flip_angles_deg;
  double inversion_time_s = 0.018;
  double repetition_time_s = 0.010;
  double echo_time_s = 0.0018;
  bool inversion = true;

  std::size_t length() const { return flip_angles_deg.size(); }
  /// Throws std::invalid_argument on T == 0, non-positive times, TE > TR or angles outside [0, 180].
  void validate() const;
  std::string hash() const;
};

struct Fingerprint {
  CVector signal;
  /// T2 > T1 is simulated anyway but reported, since it is non-physical.
  bool t2_exceeds_t1 = false;
};

class SimulationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

constexpr std::size_t kDefaultEpgStates = 128;  // > T/2 for T = 200, so truncation is exact there

/// Extended phase graph simulation of a gradient-spoiled FISP train.
///
/// Per repetition: RF rotation of (F+, F-, Z) about x, relaxation over TE,
/// sample F0+, relaxation over TR - TE, then one dephasing shift. An optional
/// ideal inversion followed by TI of recovery precedes the train.
/// Equilibrium magnetisation is 1; states with index >= n_states are dropped.
Fingerprint epg_fisp(double t1_s, double t2_s, const SequenceSchedule& schedule,
                     std::size_t n_states = kDefaultEpgStates);

/// Path of the 200-entry stand-in flip train shipped under data/.
std::filesystem::path default_schedule_path();

/// Loads the shipped stand-in schedule with default timing (TI 18 ms, TR 10 ms, TE 1.8 ms).
SequenceSchedule default_flip_schedule();

/// CSV with header `index,flip_deg`. Timing fields are not stored in the file.
SequenceSchedule load_schedule_csv(const std::filesystem::path& path);
void save_schedule_csv(const std::filesystem::path& path, const SequenceSchedule& schedule);

}  // namespace qmrf
