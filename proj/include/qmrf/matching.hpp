#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "qmrf/acquisition.hpp"
#include "qmrf/dictionary.hpp"
#include "qmrf/phantom.hpp"

namespace qmrf {

class BasisMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct MatchResult {
  std::size_t H = 0, W = 0;
  std::vector<double> t1_s, t2_s, pd_re, pd_im, correlation;
  /// Matched atom per voxel; -1 outside the mask or for a zero query.
  std::vector<std::int64_t> index;
  std::vector<std::uint8_t> head_mask;

  /// Maps with the head mask attached (not validated: matched PD may be zero).
  QMaps to_qmaps() const;
};

/// Per in-mask voxel, the atom maximising |<x_v, d̂_i>| (lowest index on ties),
/// with PD = <x_v, d̂_i*> / ‖d_i*‖ and correlation |<x_v, d̂_i*>| / ‖x_v‖.
/// Zero queries give (T1, T2, PD, correlation) = 0 and index -1.
/// Voxels are processed in blocks of `block` rows against the whole dictionary.
MatchResult dictionary_match(const Tsmi& x, const Dictionary& dict, const std::vector<std::uint8_t>& head_mask,
                             std::size_t block = 512);

/// Backprojection followed by dictionary matching.
MatchResult svd_mrf_reconstruct(const KSpaceData& y, const AcquisitionOperator& op, const Dictionary& dict,
                                const std::vector<std::uint8_t>& head_mask);

}  // namespace qmrf
