#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "qmrf/subspace.hpp"
#include "qmrf/tensor.hpp"
#include "qmrf/types.hpp"

namespace qmrf {

/// k-space grid location in the centred convention: (W/2, H/2) is the DC sample.
struct KIndex {
  std::uint32_t kx = 0;  // column
  std::uint32_t ky = 0;  // row
  bool operator==(const KIndex&) const = default;
};

enum class Pattern { spiral, epi };
std::string to_string(Pattern p);
Pattern pattern_from_string(const std::string& s);

struct SamplingMask {
  std::size_t H = 0, W = 0, m = 0;
  std::vector<std::vector<KIndex>> frames;
  std::string pattern;

  std::size_t frame_count() const { return frames.size(); }
  /// Throws unless every frame holds exactly m unique in-bounds indices.
  void validate() const;
  std::string hash() const;
};

constexpr double kGoldenAngleDeg = 137.50776405003785;

/// Single-arm Archimedean spiral from the k-space centre, rotated by
/// frame * rotation_increment_deg, rasterised and deduplicated along the arm,
/// then trimmed to exactly m points.
SamplingMask make_spiral_mask(std::size_t H, std::size_t W, std::size_t m, std::size_t T,
                              double rotation_increment_deg = kGoldenAngleDeg);

/// Default EPI row stride: round(H·0.618...) moved to the nearest integer coprime with H.
std::size_t default_epi_stride(std::size_t H);

/// ceil(m/W) horizontal lines per frame, evenly spaced, whose base row advances by
/// `stride` each frame. The last line keeps its central m - (lines-1)·W samples.
SamplingMask make_epi_mask(std::size_t H, std::size_t W, std::size_t m, std::size_t T,
                           std::size_t stride = 0);

SamplingMask make_mask(Pattern p, std::size_t H, std::size_t W, std::size_t m, std::size_t T);

/// `<stem>.json` header (H, W, m, T, pattern, convention) and `<stem>.bin`
/// with uint32 (kx, ky) pairs, frame-major.
void save_mask(const std::filesystem::path& stem, const SamplingMask& mask);
SamplingMask load_mask(const std::filesystem::path& stem);

/// Spatial compression ratio n/m.
double compression_ratio(std::size_t H, std::size_t W, std::size_t m);

/// Time-series of magnetisation images in the subspace: (H·W) x t, voxel index row*W + col.
struct Tsmi {
  CMatrix data;
  std::size_t H = 0, W = 0;
  std::string basis_hash;
};

/// Undersampled measurements: m x T, column = frame.
struct KSpaceData {
  CMatrix samples;
  std::string mask_ref;
};

/// y = A x: expand the subspace TSMI to T frames with Vᴴ, unitary 2-D FFT per
/// frame, keep the mask samples. The adjoint zero-fills, inverse-FFTs and
/// contracts with V.
///
/// Internally the FFT is applied to the t subspace images and frames are
/// formed in k-space, which is the same linear map at t/T of the cost.
class AcquisitionOperator {
 public:
  AcquisitionOperator(std::shared_ptr<const SamplingMask> mask,
                      std::shared_ptr<const TemporalBasis> basis);
  ~AcquisitionOperator();
  AcquisitionOperator(const AcquisitionOperator&) = delete;
  AcquisitionOperator& operator=(const AcquisitionOperator&) = delete;

  KSpaceData forward(const Tsmi& x) const;
  Tsmi backproject(const KSpaceData& y) const;

  std::size_t H() const { return mask_->H; }
  std::size_t W() const { return mask_->W; }
  std::size_t m() const { return mask_->m; }
  std::size_t frames() const { return mask_->frame_count(); }
  std::size_t t() const { return basis_->dim(); }
  const SamplingMask& mask() const { return *mask_; }
  const TemporalBasis& basis() const { return *basis_; }
  const std::string& mask_hash() const { return mask_hash_; }
  const std::string& basis_hash() const { return basis_hash_; }

  /// Real-pair view for the autodiff engine: input [2t, H, W] with channels
  /// (re_0..re_{t-1}, im_0..im_{t-1}); output [2, T, m].
  ad::LinearOperator as_linear() const;
  /// The adjoint as a forward map ([2, T, m] -> [2t, H, W]).
  ad::LinearOperator adjoint_as_linear() const;

  void forward_raw(const cd* x, cd* y) const;   // x: HW*t row-major, y: m*T row-major
  void adjoint_raw(const cd* y, cd* x) const;

 private:
  struct Plans;
  std::shared_ptr<const SamplingMask> mask_;
  std::shared_ptr<const TemporalBasis> basis_;
  std::vector<std::vector<std::size_t>> fft_index_;  // per frame, flat FFT-layout index of each sample
  std::unique_ptr<Plans> plans_;
  std::string mask_hash_, basis_hash_;
};

// Conversions between complex TSMIs / k-space and real channel tensors.
std::vector<double> tsmi_to_channels(const CMatrix& x, std::size_t H, std::size_t W);
CMatrix channels_to_tsmi(std::span<const double> ch, std::size_t t, std::size_t H, std::size_t W);
std::vector<double> kspace_to_channels(const CMatrix& y);
CMatrix channels_to_kspace(std::span<const double> ch, std::size_t m, std::size_t T);

/// Power-iteration estimate of ‖A‖₂.
double operator_norm_estimate(const AcquisitionOperator& op, std::size_t iters, std::uint64_t seed);

}  // namespace qmrf
