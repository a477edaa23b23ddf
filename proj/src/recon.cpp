#include "qmrf/recon.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <Eigen/QR>

#include "qmrf/io.hpp"
#include "qmrf/transforms.hpp"

namespace qmrf {

using ad::Tensor;

namespace {

Tensor he_conv(std::size_t cout, std::size_t cin, std::size_t k, std::mt19937_64& g) {
  std::normal_distribution<double> N(0.0, std::sqrt(2.0 / static_cast<double>(cin * k * k)));
  std::vector<double> v(cout * cin * k * k);
  for (auto& x : v) x = N(g);
  return Tensor::from({cout, cin, k, k}, std::move(v), true);
}

}  // namespace

// --- U-Net -------------------------------------------------------------------

UNet::UNet(std::size_t in_channels, std::size_t out_channels, const UNetConfig& cfg, std::uint64_t seed)
    : in_(in_channels), out_(out_channels), cfg_(cfg) {
  if (cfg.depth == 0 || cfg.base == 0) throw std::invalid_argument("UNet: depth and base must be positive");
  if (!cfg.head_bias.empty() && cfg.head_bias.size() != out_channels)
    throw std::invalid_argument("UNet: head_bias needs one value per output channel");
  std::mt19937_64 g(seed);
  auto block = [&](const std::string& name, std::size_t cin, std::size_t cout) {
    params_.push_back({name + ".conv1.weight", he_conv(cout, cin, 3, g)});
    params_.push_back({name + ".conv1.bias", Tensor::zeros({cout}, true)});
    params_.push_back({name + ".conv2.weight", he_conv(cout, cout, 3, g)});
    params_.push_back({name + ".conv2.bias", Tensor::zeros({cout}, true)});
  };
  const std::size_t b = cfg.base;
  std::size_t c = in_channels;
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    block("enc" + std::to_string(l), c, b << l);
    c = b << l;
  }
  block("mid", c, b << cfg.depth);
  for (std::size_t l = cfg.depth; l-- > 0;) block("dec" + std::to_string(l), (b << (l + 1)) + (b << l), b << l);
  Tensor hw = cfg.zero_init_head ? Tensor::zeros({out_channels, b, 1, 1}, true) : he_conv(out_channels, b, 1, g);
  if (!cfg.zero_init_head) {
    auto v = hw.mutable_values();
    for (auto& x : v) x *= 0.1;
  }
  Tensor hb = cfg.head_bias.empty() || cfg.zero_init_head ? Tensor::zeros({out_channels}, true)
                                                          : Tensor::from({out_channels}, cfg.head_bias, true);
  params_.push_back({"head.weight", hw});
  params_.push_back({"head.bias", hb});
}

Tensor UNet::forward(const Tensor& x) const {
  if (x.rank() != 4 || x.dim(1) != in_)
    throw ad::ShapeError("UNet: expected [N," + std::to_string(in_) + ",H,W], got " + ad::shape_str(x.shape()));
  const std::size_t f = std::size_t{1} << cfg_.depth;
  if (x.dim(2) % f != 0 || x.dim(3) % f != 0)
    throw ad::ShapeError("UNet: H and W must be divisible by " + std::to_string(f));
  std::size_t i = 0;
  auto block = [&](Tensor h) {
    h = ad::relu(ad::conv2d(h, params_[i].tensor, params_[i + 1].tensor));
    h = ad::relu(ad::conv2d(h, params_[i + 2].tensor, params_[i + 3].tensor));
    i += 4;
    return h;
  };
  std::vector<Tensor> skips;
  Tensor h = x;
  for (std::size_t l = 0; l < cfg_.depth; ++l) {
    h = block(h);
    skips.push_back(h);
    h = ad::avgpool2(h);
  }
  h = block(h);
  for (std::size_t l = cfg_.depth; l-- > 0;) h = block(ad::concat_channels({ad::upsample2_nearest(h), skips[l]}));
  return ad::conv2d(h, params_[i].tensor, params_[i + 1].tensor);
}

// --- ReconNetwork ------------------------------------------------------------

ReconNetwork::ReconNetwork(OutputMode mode, std::size_t t, const UNetConfig& cfg, std::uint64_t seed, double norm)
    : mode_(mode), t_(t), norm_(norm), net_(2 * t, mode == OutputMode::qmap ? 4 : 2 * t, cfg, seed) {
  if (!(norm > 0)) throw std::invalid_argument("ReconNetwork: normalisation constant must be > 0");
}

Tensor ReconNetwork::forward(const Tensor& bp) const {
  const Tensor o = net_.forward(ad::scale(bp, 1.0 / norm_));
  return mode_ == OutputMode::tsmi ? ad::scale(o, norm_) : o;
}

double normalization_constant(const MrfDataset& ds, Split split, const AcquisitionOperator& op) {
  std::vector<double> mags;
  for (auto i : ds.indices(split)) {
    const auto& it = ds.items[i];
    const Tsmi bp = op.backproject(it.kspace);
    for (std::size_t v = 0; v < it.head_mask.size(); ++v)
      if (it.head_mask[v]) mags.push_back(std::abs(bp.data(static_cast<Eigen::Index>(v), 0)));
  }
  if (mags.empty()) throw std::invalid_argument("normalization_constant: no in-mask voxels");
  auto mid = mags.begin() + static_cast<long>(mags.size() / 2);
  std::nth_element(mags.begin(), mid, mags.end());
  if (!(*mid > 0)) throw std::invalid_argument("normalization_constant: median backprojection magnitude is zero");
  return *mid;
}

namespace {

Tensor bp_tensor(const AcquisitionOperator& op, const KSpaceData& y) {
  const Tsmi bp = op.backproject(y);
  return Tensor::from({1, 2 * op.t(), op.H(), op.W()}, tsmi_to_channels(bp.data, op.H(), op.W()));
}

}  // namespace

QMaps reconstruct_qmaps(const ReconNetwork& f, const KSpaceData& y, const AcquisitionOperator& op,
                        const std::vector<std::uint8_t>& head_mask) {
  if (f.mode() != OutputMode::qmap) throw std::invalid_argument("reconstruct_qmaps: network is in tsmi mode");
  if (f.t() != op.t()) throw std::invalid_argument("reconstruct_qmaps: network t differs from operator t");
  const std::size_t HW = op.H() * op.W();
  if (head_mask.size() != HW) throw std::invalid_argument("reconstruct_qmaps: head mask size mismatch");
  const Tensor q = f.forward(bp_tensor(op, y));
  const auto v = q.values();
  QMaps out = QMaps::zeros(op.H(), op.W());
  out.head_mask = head_mask;
  for (std::size_t p = 0; p < HW; ++p) {
    if (!head_mask[p]) continue;
    out.t1_s[p] = std::clamp(v[p], kT1Min, kT1Max);
    out.t2_s[p] = std::clamp(v[HW + p], kT2Min, kT2Max);
    out.pd_re[p] = v[2 * HW + p];
    out.pd_im[p] = v[3 * HW + p];
  }
  return out;
}

Tsmi reconstruct_tsmi(const ReconNetwork& f, const KSpaceData& y, const AcquisitionOperator& op) {
  if (f.mode() != OutputMode::tsmi) throw std::invalid_argument("reconstruct_tsmi: network is in qmap mode");
  if (f.t() != op.t()) throw std::invalid_argument("reconstruct_tsmi: network t differs from operator t");
  const Tensor x = f.forward(bp_tensor(op, y));
  return Tsmi{channels_to_tsmi(x.values(), op.t(), op.H(), op.W()), op.H(), op.W(), op.basis_hash()};
}

MatchResult ei_to_qmaps(const ReconNetwork& f_ei, const KSpaceData& y, const AcquisitionOperator& op,
                        const Dictionary& dict, const std::vector<std::uint8_t>& head_mask) {
  return dictionary_match(reconstruct_tsmi(f_ei, y, op), dict, head_mask);
}

// --- losses ------------------------------------------------------------------

std::vector<std::size_t> mask_indices(const std::vector<std::uint8_t>& mask) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) idx.push_back(i);
  return idx;
}

Tensor mask_tensor(const std::vector<std::uint8_t>& mask, std::size_t N, std::size_t H, std::size_t W) {
  if (mask.size() != N * H * W) throw ad::ShapeError("mask_tensor: mask size does not match N*H*W");
  std::vector<double> v(mask.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = mask[i] ? 1.0 : 0.0;
  return Tensor::from({N, 1, H, W}, std::move(v));
}

ForwardModel ForwardModel::from(const AcquisitionOperator& op, const BlochSurrogate* B) {
  return ForwardModel{op.as_linear(), op.adjoint_as_linear(), B, op.H(), op.W()};
}

Tensor loss_mc_qmap(const Tensor& q, const Tensor& y, const std::vector<std::uint8_t>& mask, const ForwardModel& fm) {
  if (!fm.B) throw std::invalid_argument("loss_mc_qmap: no surrogate");
  const auto idx = mask_indices(mask);
  return ad::mse_loss(ad::apply_linear(fm.A, fm.B->apply_at(q, idx)), y);
}

Tensor loss_mc_tsmi(const Tensor& x, const Tensor& y, const ForwardModel& fm) {
  return ad::mse_loss(ad::apply_linear(fm.A, x), y);
}

namespace {

// Stacks every (item, transform) copy of z and its mask, item-major.
std::pair<Tensor, std::vector<std::uint8_t>> transformed_stack(const Tensor& z, const std::vector<std::uint8_t>& mask,
                                                               const TransformDraw& draw, std::size_t H, std::size_t W) {
  const std::size_t N = z.dim(0), HW = H * W;
  if (draw.size() != 1 && draw.size() != N)
    throw std::invalid_argument("EI loss: need one transform list, or one per batch item");
  if (mask.size() != N * HW) throw ad::ShapeError("EI loss: mask size does not match the batch");
  std::vector<Tensor> parts;
  std::vector<std::uint8_t> maskT;
  for (std::size_t b = 0; b < N; ++b) {
    const Tensor zb = N == 1 ? z : ad::slice_batch(z, b, 1);
    const std::vector<std::uint8_t> mb(mask.begin() + static_cast<long>(b * HW),
                                       mask.begin() + static_cast<long>((b + 1) * HW));
    for (int k : draw.size() == 1 ? draw[0] : draw[b]) {
      const auto perm = transform_permutation(k, H, W);
      parts.push_back(ad::permute_pixels(zb, perm));
      const auto mt = apply_permutation(mb, perm);
      maskT.insert(maskT.end(), mt.begin(), mt.end());
    }
  }
  if (parts.empty()) throw std::invalid_argument("EI loss: empty transform list");
  return {parts.size() == 1 ? parts[0] : ad::concat_batch(parts), std::move(maskT)};
}

}  // namespace

Tensor loss_ei_qmap(const NetFn& f, const Tensor& q, const std::vector<std::uint8_t>& mask, const TransformDraw& draw,
                    const ForwardModel& fm, bool stop_grad) {
  if (!fm.B) throw std::invalid_argument("loss_ei_qmap: no surrogate");
  auto [qT, maskT] = transformed_stack(stop_grad ? q.detach() : q, mask, draw, fm.H, fm.W);
  const std::size_t NT = qT.dim(0);
  const Tensor x = fm.B->apply_at(qT, mask_indices(maskT));
  const Tensor qEI = f(ad::apply_linear(fm.AH, ad::apply_linear(fm.A, x)));
  const Tensor M = mask_tensor(maskT, NT, fm.H, fm.W);
  return ad::mse_loss(ad::mul_channel_broadcast(qEI, M), ad::mul_channel_broadcast(qT, M));
}

Tensor loss_ei_tsmi(const NetFn& f, const Tensor& x, const std::vector<std::uint8_t>& mask, const TransformDraw& draw,
                    const ForwardModel& fm, bool stop_grad) {
  auto [xT, maskT] = transformed_stack(stop_grad ? x.detach() : x, mask, draw, fm.H, fm.W);
  const std::size_t NT = xT.dim(0);
  const Tensor M = mask_tensor(maskT, NT, fm.H, fm.W);
  const Tensor xT_m = ad::mul_channel_broadcast(xT, M);
  const Tensor xEI = f(ad::apply_linear(fm.AH, ad::apply_linear(fm.A, xT_m)));
  return ad::mse_loss(ad::mul_channel_broadcast(xEI, M), xT_m);
}

Tensor loss_supervised(const Tensor& q, const Tensor& truth, const std::vector<std::uint8_t>& mask) {
  const Tensor M = mask_tensor(mask, q.dim(0), q.dim(2), q.dim(3));
  return ad::mse_loss(ad::mul_channel_broadcast(q, M), ad::mul_channel_broadcast(truth, M));
}

// --- training ----------------------------------------------------------------

std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::nlei: return "nlei";
    case TrainMode::ei: return "ei";
    case TrainMode::supervised: return "supervised";
    case TrainMode::mc_only: return "mc-only";
  }
  return "?";
}

TrainMode train_mode_from_string(const std::string& s) {
  if (s == "nlei") return TrainMode::nlei;
  if (s == "ei") return TrainMode::ei;
  if (s == "supervised") return TrainMode::supervised;
  if (s == "mc-only" || s == "mc_only") return TrainMode::mc_only;
  throw std::invalid_argument("unknown training mode '" + s + "' (nlei, ei, supervised, mc-only)");
}

double full_scale_alpha(TrainMode mode, Pattern pattern) {
  if (mode == TrainMode::nlei) return pattern == Pattern::spiral ? 1e-8 : 1e-4;
  if (mode == TrainMode::ei) return pattern == Pattern::spiral ? 1e-5 : 1e-2;
  return 0.0;
}

TrainConfig TrainConfig::full_scale(TrainMode mode, Pattern pattern) {
  TrainConfig c;
  c.mode = mode;
  c.alpha = full_scale_alpha(mode, pattern);
  return c;
}

TrainConfig TrainConfig::desk(TrainMode mode, Pattern) {
  TrainConfig c;
  c.mode = mode;
  c.epochs = 150;
  c.batch_size = 1;
  c.lr = 1e-3;
  c.lr_drop_epoch = 120;
  c.checkpoint_every = 50;
  c.alpha = mode == TrainMode::nlei ? 1e-2 : mode == TrainMode::ei ? 1e-1 : 0.0;
  if (mode != TrainMode::ei) c.net.head_bias = {1.0, 0.1, 0.0, 0.0};
  return c;
}

void TrainConfig::validate() const {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw std::invalid_argument("train config: alpha must be >= 0");
  if (epochs == 0) throw std::invalid_argument("train config: epochs must be >= 1");
  if (batch_size == 0) throw std::invalid_argument("train config: batch_size must be >= 1");
  if (!(lr > 0)) throw std::invalid_argument("train config: lr must be > 0");
  if (!(lr_drop_factor > 0)) throw std::invalid_argument("train config: lr_drop_factor must be > 0");
  if (!(weight_decay >= 0)) throw std::invalid_argument("train config: weight_decay must be >= 0");
  if ((mode == TrainMode::nlei || mode == TrainMode::ei) && fixed_transforms.empty() &&
      (n_transforms == 0 || n_transforms > static_cast<std::size_t>(kNumTransforms)))
    throw std::invalid_argument("train config: n_transforms must be in 1..7");
  for (int k : fixed_transforms)
    if (k < 0 || k > kNumTransforms) throw std::invalid_argument("train config: transform ids must be in 0..7");
}

std::vector<int> sample_transforms(std::size_t k, std::mt19937_64& rng) {
  if (k > static_cast<std::size_t>(kNumTransforms)) throw std::invalid_argument("sample_transforms: k > 7");
  std::vector<int> pool{1, 2, 3, 4, 5, 6, 7};
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + std::uniform_int_distribution<std::size_t>(0, pool.size() - 1 - i)(rng);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

namespace {

struct SliceData {
  std::vector<double> bp;  // 2t*H*W
  std::vector<double> y;   // 2*T*m
  std::vector<std::uint8_t> mask;
  std::vector<double> truth;  // 4*H*W, empty if absent
};

}  // namespace

nlohmann::json to_json(const TrainConfig& c) {
  return {{"mode", to_string(c.mode)},
          {"alpha", c.alpha},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"lr_drop_epoch", c.lr_drop_epoch},
          {"lr_drop_factor", c.lr_drop_factor},
          {"weight_decay", c.weight_decay},
          {"n_transforms", c.n_transforms},
          {"seed", c.seed},
          {"stop_grad_ei", c.stop_grad_ei},
          {"independent_transforms", c.independent_transforms},
          {"fixed_transforms", c.fixed_transforms},
          {"checkpoint_every", c.checkpoint_every},
          {"net", {{"depth", c.net.depth}, {"base", c.net.base}, {"zero_init_head", c.net.zero_init_head},
                   {"head_bias", c.net.head_bias}}}};
}

TrainResult train(const TrainConfig& cfg, const MrfDataset& ds, const AcquisitionOperator& op,
                  const BlochSurrogate* B, const std::filesystem::path& run_dir,
                  const std::function<void(const EpochLoss&)>& on_epoch) {
  cfg.validate();
  const auto t_start = std::chrono::steady_clock::now();
  const bool qmap = cfg.mode != TrainMode::ei;
  const bool uses_B = cfg.mode == TrainMode::nlei || cfg.mode == TrainMode::mc_only;
  const bool uses_ei = cfg.mode == TrainMode::nlei || cfg.mode == TrainMode::ei;
  if (uses_B) {
    if (!B) throw std::invalid_argument("train: mode " + to_string(cfg.mode) + " needs a Bloch surrogate");
    if (!B->frozen()) throw std::invalid_argument("train: the Bloch surrogate must be frozen");
    if (B->t() != op.t()) throw std::invalid_argument("train: surrogate t differs from operator t");
    if (!B->basis_hash.empty() && B->basis_hash != op.basis_hash())
      throw BasisMismatch("train: surrogate was fitted in a different basis");
  }
  if (ds.H != op.H() || ds.W != op.W()) throw std::invalid_argument("train: dataset grid differs from operator grid");
  if (ds.basis_hash != op.basis_hash()) throw BasisMismatch("train: dataset basis differs from operator basis");
  if (cfg.mode == TrainMode::supervised) SupervisedReader check(ds, Split::train);  // throws without ground truth

  const std::size_t H = op.H(), W = op.W(), HW = H * W, t = op.t();
  const auto train_idx = ds.indices(Split::train);
  if (train_idx.empty()) throw std::invalid_argument("train: empty train split");
  const std::string surrogate_hash_before = B ? B->hash() : "";

  std::vector<SliceData> slices;
  for (auto i : train_idx) {
    const auto& it = ds.items[i];
    SliceData s;
    s.bp = tsmi_to_channels(op.backproject(it.kspace).data, H, W);
    s.y = kspace_to_channels(it.kspace.samples);
    s.mask = it.head_mask;
    if (it.truth) {
      const auto& q = *it.truth;
      s.truth.reserve(4 * HW);
      for (const auto* m : {&q.t1_s, &q.t2_s, &q.pd_re, &q.pd_im}) s.truth.insert(s.truth.end(), m->begin(), m->end());
    }
    slices.push_back(std::move(s));
  }

  const double norm = normalization_constant(ds, Split::train, op);
  ReconNetwork net(qmap ? OutputMode::qmap : OutputMode::tsmi, t, cfg.net, cfg.seed, norm);
  ad::AdamConfig ac;
  ac.lr = cfg.lr;
  ac.weight_decay = cfg.weight_decay;
  ad::Adam opt(net.parameters(), ac);
  const ForwardModel fm = ForwardModel::from(op, uses_B ? B : nullptr);
  const NetFn f = [&net](const Tensor& x) { return net.forward(x); };

  std::mt19937_64 shuffle_rng(cfg.seed), transform_rng(cfg.seed ^ 0x9E3779B97F4A7C15ULL);

  std::ofstream csv;
  if (!run_dir.empty()) {
    std::filesystem::create_directories(run_dir);
    io::write_json(run_dir / "config.json", to_json(cfg));
    csv.open(run_dir / "loss.csv");
    csv << "epoch,L_MC,L_EI,total\n";
  }

  TrainResult result{net, {}, 0.0};
  std::vector<std::size_t> order(slices.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const std::size_t T = op.frames(), m = op.m();

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (epoch == cfg.lr_drop_epoch) opt.set_lr(cfg.lr / cfg.lr_drop_factor);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochLoss el;
    el.epoch = epoch + 1;
    std::size_t iters = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size) {
      const std::size_t nb = std::min(cfg.batch_size, order.size() - b0);
      std::vector<double> bp, y, truth;
      std::vector<std::uint8_t> mask;
      for (std::size_t j = 0; j < nb; ++j) {
        const auto& s = slices[order[b0 + j]];
        bp.insert(bp.end(), s.bp.begin(), s.bp.end());
        y.insert(y.end(), s.y.begin(), s.y.end());
        mask.insert(mask.end(), s.mask.begin(), s.mask.end());
        truth.insert(truth.end(), s.truth.begin(), s.truth.end());
      }
      const Tensor X = Tensor::from({nb, 2 * t, H, W}, std::move(bp));
      const Tensor Y = Tensor::from({nb, 2, T, m}, std::move(y));

      TransformDraw draw;
      if (uses_ei) {
        if (!cfg.fixed_transforms.empty())
          draw = {cfg.fixed_transforms};
        else if (cfg.independent_transforms)
          for (std::size_t j = 0; j < nb; ++j) draw.push_back(sample_transforms(cfg.n_transforms, transform_rng));
        else
          draw = {sample_transforms(cfg.n_transforms, transform_rng)};
      }

      opt.zero_grad();
      Tensor L_mc, L_ei, total;
      switch (cfg.mode) {
        case TrainMode::nlei: {
          const Tensor q = f(X);
          L_mc = loss_mc_qmap(q, Y, mask, fm);
          L_ei = loss_ei_qmap(f, q, mask, draw, fm, cfg.stop_grad_ei);
          total = ad::add(L_mc, ad::scale(L_ei, cfg.alpha));
          break;
        }
        case TrainMode::mc_only: {
          const Tensor q = f(X);
          L_mc = loss_mc_qmap(q, Y, mask, fm);
          total = L_mc;
          break;
        }
        case TrainMode::ei: {
          const Tensor x = ad::mul_channel_broadcast(f(X), mask_tensor(mask, nb, H, W));
          L_mc = loss_mc_tsmi(x, Y, fm);
          L_ei = loss_ei_tsmi(f, x, mask, draw, fm, cfg.stop_grad_ei);
          total = ad::add(L_mc, ad::scale(L_ei, cfg.alpha));
          break;
        }
        case TrainMode::supervised: {
          total = loss_supervised(f(X), Tensor::from({nb, 4, H, W}, std::move(truth)), mask);
          break;
        }
      }
      const double tv = total.item();
      if (!std::isfinite(tv))
        throw ad::NonFiniteGradient("loss (epoch " + std::to_string(epoch + 1) + ")", iters);
      total.backward();
      opt.step();
      el.mc += L_mc.defined() ? L_mc.item() : 0.0;
      el.ei += L_ei.defined() ? L_ei.item() : 0.0;
      el.total += tv;
      ++iters;
    }
    el.mc /= static_cast<double>(iters);
    el.ei /= static_cast<double>(iters);
    el.total /= static_cast<double>(iters);
    result.history.push_back(el);
    if (csv.is_open()) {
      char line[128];
      std::snprintf(line, sizeof line, "%zu,%.17g,%.17g,%.17g\n", el.epoch, el.mc, el.ei, el.total);
      csv << line << std::flush;
    }
    if (on_epoch) on_epoch(el);
    if (!run_dir.empty() && cfg.checkpoint_every > 0 && el.epoch % cfg.checkpoint_every == 0)
      ad::save_checkpoint(run_dir / ("checkpoint_epoch" + std::to_string(el.epoch)), net.parameters(),
                          {{"epoch", el.epoch}, {"norm", norm}});
  }
  result.net = net;
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();

  if (B && B->hash() != surrogate_hash_before) throw std::logic_error("train: frozen surrogate was modified");
  if (!run_dir.empty()) {
    ad::save_checkpoint(run_dir / "final", net.parameters(), {{"epoch", cfg.epochs}, {"norm", norm}});
    io::write_json(run_dir / "manifest.json",
                   {{"mode", to_string(cfg.mode)},
                    {"dataset_hash", ds.manifest_hash()},
                    {"basis_hash", op.basis_hash()},
                    {"mask_hash", op.mask_hash()},
                    {"surrogate_hash", surrogate_hash_before},
                    {"normalization", norm},
                    {"parameters", ad::parameter_count(net.parameters())},
                    {"parameter_hash", net.hash()},
                    {"seconds", result.seconds}});
  }
  return result;
}

}  // namespace qmrf

namespace qmrf {

std::vector<ad::GradcheckResult> loss_gradcheck_suite(std::uint64_t seed) {
  const std::size_t H = 8, W = 8, T = 8, t = 3, m = 7, N = 2, hid = 6;
  std::mt19937_64 g(seed);
  std::normal_distribution<double> nrm;
  auto randn = [&](ad::Shape s, double sd, bool grad) {
    std::vector<double> v(ad::shape_numel(s));
    for (auto& x : v) x = sd * nrm(g);
    return Tensor::from(std::move(s), std::move(v), grad);
  };

  CMatrix G(T, t);
  for (Eigen::Index i = 0; i < G.size(); ++i) G.data()[i] = cd(nrm(g), nrm(g));
  Eigen::HouseholderQR<CMatrix> qr(G);
  auto basis = std::make_shared<const TemporalBasis>(TemporalBasis::from_matrix(qr.householderQ() * CMatrix::Identity(T, t)));
  auto mask = std::make_shared<const SamplingMask>(make_spiral_mask(H, W, m, T));
  const AcquisitionOperator op(mask, basis);
  BlochSurrogate B(t, seed + 1, 16);
  B.freeze();
  const ForwardModel fm = ForwardModel::from(op, &B);

  std::vector<std::uint8_t> head(N * H * W, 0);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t r = 0; r < H; ++r)
      for (std::size_t c = 0; c < W; ++c) {
        const double dr = static_cast<double>(r) - 3.5, dc = static_cast<double>(c) - 3.5 + static_cast<double>(n);
        head[(n * H + r) * W + c] = dr * dr + dc * dc < 10.0;
      }
  const Tensor X = randn({N, 2 * t, H, W}, 1.0, false);
  const Tensor Y = randn({N, 2, T, m}, 0.3, false);
  const TransformDraw draw{{1, 2, 5}};

  auto params = [&](std::size_t out, std::vector<double> bias) {
    std::vector<Tensor> p{randn({hid, 2 * t, 3, 3}, 0.2, true), randn({hid}, 0.1, true),
                          randn({out, hid, 1, 1}, 0.1, true), Tensor::from({out}, std::move(bias), true)};
    return p;
  };
  auto net = [](const std::vector<Tensor>& p) {
    return [p](const Tensor& x) { return ad::conv2d(ad::relu(ad::conv2d(x, p[0], p[1])), p[2], p[3]); };
  };

  std::vector<ad::GradcheckResult> out;
  // Relus in the net and the surrogate make the losses piecewise smooth; see gradcheck_steps.
  const std::vector<double> h{1e-5, 1e-6, 1e-7};
  const std::size_t probes = 48;
  out.push_back(ad::gradcheck_steps(
      "L_MC (qmap)",
      [&](const std::vector<Tensor>& p) { return loss_mc_qmap(net(p)(X), Y, head, fm); },
      params(4, {1.0, 0.2, 0.5, -0.3}), h, seed, probes));
  out.push_back(ad::gradcheck_steps(
      "L_EI (qmap)",
      [&](const std::vector<Tensor>& p) {
        const NetFn f = net(p);
        return loss_ei_qmap(f, f(X), head, draw, fm);
      },
      params(4, {1.0, 0.2, 0.5, -0.3}), h, seed, probes));
  out.push_back(ad::gradcheck_steps(
      "L_MC (tsmi)", [&](const std::vector<Tensor>& p) { return loss_mc_tsmi(net(p)(X), Y, fm); },
      params(2 * t, std::vector<double>(2 * t, 0.1)), h, seed, probes));
  out.push_back(ad::gradcheck_steps(
      "L_EI (tsmi)",
      [&](const std::vector<Tensor>& p) {
        const NetFn f = net(p);
        return loss_ei_tsmi(f, f(X), head, draw, fm);
      },
      params(2 * t, std::vector<double>(2 * t, 0.1)), h, seed, probes));
  return out;
}

}  // namespace qmrf
