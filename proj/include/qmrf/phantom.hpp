#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "qmrf/acquisition.hpp"
#include "qmrf/epg.hpp"
#include "qmrf/subspace.hpp"

namespace qmrf {

/// Per-voxel tissue parameter maps, row-major H x W. T1/T2 in seconds.
struct QMaps {
  std::size_t H = 0, W = 0;
  std::vector<double> t1_s, t2_s, pd_re, pd_im;
  std::vector<std::uint8_t> head_mask;

  static QMaps zeros(std::size_t H, std::size_t W);
  std::size_t size() const { return H * W; }
  cd pd(std::size_t v) const { return {pd_re[v], pd_im[v]}; }
  /// Throws if in-mask T1/T2 leave the dictionary domain, out-of-mask values are nonzero,
  /// or the mask disagrees with |PD| > 0.
  void validate() const;
};

struct PhantomOptions {
  bool smooth = true;  // 3x3 in-mask averaging of T1/T2
};

/// Procedural head phantom: elliptical head with a CSF rim, gray and white
/// matter ellipses, ventricles and randomised blobs from a synthetic tissue palette,
/// plus a smooth PD phase. Deterministic in seed.
QMaps make_brain_phantom(std::size_t H, std::size_t W, std::uint64_t seed,
                         const PhantomOptions& opt = {});

/// Unit-PD compressed fingerprint for (T1, T2).
using FingerprintModel = std::function<CVector(double t1_s, double t2_s)>;

/// Exact EPG simulation followed by subspace compression.
FingerprintModel make_epg_model(SequenceSchedule schedule, std::shared_ptr<const TemporalBasis> basis,
                                std::size_t n_states = kDefaultEpgStates);

/// x_v = PD_v · model(T1_v, T2_v) inside the head mask, zero outside.
Tsmi synthesize_tsmi(const QMaps& q, const FingerprintModel& model, const std::string& basis_hash);

KSpaceData simulate_kspace(const Tsmi& x, const AcquisitionOperator& op);

}  // namespace qmrf
