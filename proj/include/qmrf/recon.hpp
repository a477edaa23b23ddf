#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "qmrf/acquisition.hpp"
#include "qmrf/dataset.hpp"
#include "qmrf/gradcheck.hpp"
#include "qmrf/matching.hpp"
#include "qmrf/optim.hpp"
#include "qmrf/surrogate.hpp"
#include "qmrf/tensor.hpp"

namespace qmrf {

struct UNetConfig {
  std::size_t depth = 2;
  std::size_t base = 16;
  /// All-zero final 1x1 layer (weights and bias), so an untrained network outputs zeros.
  bool zero_init_head = false;
  /// Optional initial bias of the final layer, one value per output channel.
  std::vector<double> head_bias;
};

/// Encoder/decoder with 3x3 conv + ReLU pairs, 2x average pooling, nearest
/// upsampling and channel-concatenation skips; no input-to-output residual.
class UNet {
 public:
  UNet(std::size_t in_channels, std::size_t out_channels, const UNetConfig& cfg, std::uint64_t seed);
  ad::Tensor forward(const ad::Tensor& x) const;
  ad::ParameterList& parameters() { return params_; }
  const ad::ParameterList& parameters() const { return params_; }
  std::size_t in_channels() const { return in_; }
  std::size_t out_channels() const { return out_; }
  const UNetConfig& config() const { return cfg_; }

 private:
  std::size_t in_, out_;
  UNetConfig cfg_;
  ad::ParameterList params_;
};

enum class OutputMode { qmap, tsmi };

/// f: normalised backprojection (2t channels) -> QMaps (T1, T2, PD_re, PD_im) or TSMI (2t channels).
/// In tsmi mode the output is multiplied by the normalisation constant, so it is in TSMI units.
class ReconNetwork {
 public:
  ReconNetwork(OutputMode mode, std::size_t t, const UNetConfig& cfg, std::uint64_t seed, double norm = 1.0);

  OutputMode mode() const { return mode_; }
  std::size_t t() const { return t_; }
  double norm() const { return norm_; }
  void set_norm(double s) { norm_ = s; }
  std::size_t in_channels() const { return 2 * t_; }
  std::size_t out_channels() const { return mode_ == OutputMode::qmap ? 4 : 2 * t_; }

  /// x: backprojection channels [N,2t,H,W] in TSMI units; divides by norm internally.
  ad::Tensor forward(const ad::Tensor& backprojection) const;

  ad::ParameterList& parameters() { return net_.parameters(); }
  const ad::ParameterList& parameters() const { return net_.parameters(); }
  std::string hash() const { return ad::parameter_hash(parameters()); }
  const UNet& unet() const { return net_; }

 private:
  OutputMode mode_;
  std::size_t t_;
  double norm_;
  UNet net_;
};

/// Median over the given slices of in-mask |(AᴴY)_{v,0}|, the magnitude of the first subspace coefficient.
double normalization_constant(const MrfDataset& ds, Split split, const AcquisitionOperator& op);

/// Inference: backproject, run f. In qmap mode T1/T2 are clamped to the dictionary domain
/// and every map is zeroed outside the head mask.
QMaps reconstruct_qmaps(const ReconNetwork& f, const KSpaceData& y, const AcquisitionOperator& op,
                        const std::vector<std::uint8_t>& head_mask);
Tsmi reconstruct_tsmi(const ReconNetwork& f, const KSpaceData& y, const AcquisitionOperator& op);

/// TSMI from f_ei, then dictionary matching.
MatchResult ei_to_qmaps(const ReconNetwork& f_ei, const KSpaceData& y, const AcquisitionOperator& op,
                        const Dictionary& dict, const std::vector<std::uint8_t>& head_mask);

// --- losses ------------------------------------------------------------------

using NetFn = std::function<ad::Tensor(const ad::Tensor&)>;

/// Flat (n*H*W + p) indices of nonzero mask entries of a [N, H, W] mask.
std::vector<std::size_t> mask_indices(const std::vector<std::uint8_t>& mask);
/// [N,1,H,W] 0/1 tensor from a [N,H,W] mask.
ad::Tensor mask_tensor(const std::vector<std::uint8_t>& mask, std::size_t N, std::size_t H, std::size_t W);

/// Everything a loss needs about the forward model.
struct ForwardModel {
  ad::LinearOperator A;   // [2t,H,W] -> [2,T,m]
  ad::LinearOperator AH;  // [2,T,m] -> [2t,H,W]
  const BlochSurrogate* B = nullptr;  // required for qmap-mode losses
  std::size_t H = 0, W = 0;
  static ForwardModel from(const AcquisitionOperator& op, const BlochSurrogate* B);
};

/// MSE(A B(q), y) with B evaluated inside the head mask only (TSMI zero outside).
ad::Tensor loss_mc_qmap(const ad::Tensor& q, const ad::Tensor& y, const std::vector<std::uint8_t>& mask,
                        const ForwardModel& fm);
/// MSE(A x, y) for a TSMI-channel estimate x.
ad::Tensor loss_mc_tsmi(const ad::Tensor& x, const ad::Tensor& y, const ForwardModel& fm);

/// Transform ids per batch item; a single list is shared by every item.
using TransformDraw = std::vector<std::vector<int>>;

/// Mean over items and transforms of MSE(M_T ⊙ f(Aᴴ A B(T q)), M_T ⊙ T q), with every
/// transformed copy stacked into one batch. With stop_grad, T q comes from a detached q.
ad::Tensor loss_ei_qmap(const NetFn& f, const ad::Tensor& q, const std::vector<std::uint8_t>& mask,
                        const TransformDraw& transforms, const ForwardModel& fm, bool stop_grad = false);
/// Linear EI: the same with B removed and x a TSMI-channel estimate.
ad::Tensor loss_ei_tsmi(const NetFn& f, const ad::Tensor& x, const std::vector<std::uint8_t>& mask,
                        const TransformDraw& transforms, const ForwardModel& fm, bool stop_grad = false);
/// MSE(M ⊙ q, M ⊙ q_truth).
ad::Tensor loss_supervised(const ad::Tensor& q, const ad::Tensor& truth, const std::vector<std::uint8_t>& mask);

// --- training ----------------------------------------------------------------

/// nlei: L_MC + α L_EI through B; ei: linear EI on TSMIs; supervised: masked MSE to ground truth;
/// mc_only: NLEI without the EI branch.
enum class TrainMode { nlei, ei, supervised, mc_only };
std::string to_string(TrainMode m);
TrainMode train_mode_from_string(const std::string& s);

struct TrainConfig {
  TrainMode mode = TrainMode::nlei;
  double alpha = 0.0;
  std::size_t epochs = 1000;
  std::size_t batch_size = 2;
  double lr = 5e-4;
  std::size_t lr_drop_epoch = 300;
  double lr_drop_factor = 10.0;
  double weight_decay = 1e-8;
  std::size_t n_transforms = 3;
  std::uint64_t seed = 1;
  bool stop_grad_ei = false;
  /// Each batch item draws its own transforms instead of sharing one draw per iteration.
  bool independent_transforms = false;
  /// Overrides random sampling (debug; may include the identity 0).
  std::vector<int> fixed_transforms;
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only
  UNetConfig net;

  /// Full-scale schedule: 1000 epochs, batch 2, lr 5e-4 dropped x10 at 300, weight decay 1e-8, 3 transforms.
  static TrainConfig full_scale(TrainMode mode, Pattern pattern);
  /// 64x64 settings: 150 epochs, batch 1, lr 1e-3 dropped x10 at 120; the pattern is currently unused.
  static TrainConfig desk(TrainMode mode, Pattern pattern);
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);

/// α used by the full-scale configuration.
double full_scale_alpha(TrainMode mode, Pattern pattern);

struct EpochLoss {
  std::size_t epoch = 0;
  double mc = 0.0, ei = 0.0, total = 0.0;
};

struct TrainResult {
  ReconNetwork net;
  std::vector<EpochLoss> history;
  double seconds = 0.0;
};

/// Trains f on the train split. Writes config.json, loss.csv, checkpoints and manifest.json
/// under run_dir when it is non-empty. The surrogate, if given, must be frozen and is never updated.
TrainResult train(const TrainConfig& cfg, const MrfDataset& ds, const AcquisitionOperator& op,
                  const BlochSurrogate* B, const std::filesystem::path& run_dir = {},
                  const std::function<void(const EpochLoss&)>& on_epoch = {});

/// Samples k of the 7 non-identity transforms without replacement.
std::vector<int> sample_transforms(std::size_t k, std::mt19937_64& rng);

/// Finite-difference checks of L_MC and L_EI (qmap and tsmi forms) w.r.t. the parameters of a
/// 2-layer conv net on an 8x8 toy problem with a random frozen surrogate.
std::vector<ad::GradcheckResult> loss_gradcheck_suite(std::uint64_t seed);

}  // namespace qmrf
