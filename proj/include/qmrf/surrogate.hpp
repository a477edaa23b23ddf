#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "qmrf/dictionary.hpp"
#include "qmrf/optim.hpp"
#include "qmrf/phantom.hpp"
#include "qmrf/tensor.hpp"

namespace qmrf {

class SurrogateDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Voxel-wise network (T1, T2) -> compressed unit-PD fingerprint (2t real channels:
/// re_0..re_{t-1}, im_0..im_{t-1}), realised as 1x1 convolutions 2 -> h -> h -> 2t with
/// ReLU on the hidden layers. Inputs go through log then an affine map of the
/// dictionary ranges onto [-1, 1]. PD multiplies the output outside the network.
class BlochSurrogate {
 public:
  BlochSurrogate(std::size_t t, std::uint64_t seed, std::size_t hidden = 300);

  std::size_t t() const { return t_; }
  std::size_t hidden() const { return hidden_; }

  /// [N,2,H,W] (T1, T2 in seconds) -> [N,2t,H,W].
  ad::Tensor network(const ad::Tensor& t1t2) const;
  /// [N,4,H,W] (T1, T2, PD_re, PD_im) -> [N,2t,H,W] complex TSMI channels, PD·network(T1, T2).
  ad::Tensor apply(const ad::Tensor& q) const;
  /// As apply, but evaluates the network only at the flat pixel indices `idx`
  /// (n*H*W + p); every other voxel of the result is zero.
  ad::Tensor apply_at(const ad::Tensor& q, std::span<const std::size_t> idx) const;

  /// Unit-PD compressed fingerprint.
  CVector evaluate(double t1_s, double t2_s) const;
  FingerprintModel as_model() const;

  ad::ParameterList& parameters() { return params_; }
  const ad::ParameterList& parameters() const { return params_; }
  std::size_t parameter_count() const { return ad::parameter_count(params_); }
  std::string hash() const { return ad::parameter_hash(params_); }

  /// Frozen parameters do not require grad; gradients still reach the inputs.
  void freeze();
  bool frozen() const { return frozen_; }

  std::string basis_hash;  // basis of the dictionary it was fitted to

 private:
  ad::Tensor normalise(const ad::Tensor& t1t2) const;
  std::size_t t_, hidden_;
  ad::ParameterList params_;
  bool frozen_ = false;
};

struct SurrogateConfig {
  std::size_t epochs = 2000;
  double lr = 1e-3;
  std::uint64_t seed = 1;
  std::size_t hidden = 300;
  /// Multiply the learning rate by lr_drop_factor at this fraction of the epochs (1 disables).
  double lr_drop_at = 0.75;
  double lr_drop_factor = 0.1;
};

struct SurrogateFit {
  std::vector<double> loss_history;  // full-batch MSE per epoch
  double final_mse = 0.0;
  double train_rel_rms = 0.0;
};

/// Full-batch Adam on the MSE between network outputs and the compressed dictionary atoms.
/// Throws SurrogateDiverged if the loss becomes non-finite and std::logic_error if frozen.
SurrogateFit train_surrogate(BlochSurrogate& b, const Dictionary& compressed, const SurrogateConfig& cfg);

/// sqrt(Σ‖B(p) - ref(p)‖² / Σ‖ref(p)‖²) over the probe points.
double surrogate_rel_rms(const BlochSurrogate& b, const std::vector<GridPoint>& probes, const FingerprintModel& ref);

/// `n` log-uniform (T1, T2) points inside the hull of the grid spec.
std::vector<GridPoint> random_probes(const GridSpec& spec, std::size_t n, std::uint64_t seed);

/// Checkpoint `<stem>.bin/.json`; the manifest records t, hidden, grid ranges, basis hash and frozen flag.
void save_surrogate(const std::filesystem::path& stem, const BlochSurrogate& b);
BlochSurrogate load_surrogate(const std::filesystem::path& stem);

}  // namespace qmrf
