#include "qmrf/acquisition.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "qmrf/io.hpp"

namespace qmrf {

std::string to_string(Pattern p) { return p == Pattern::spiral ? "spiral" : "epi"; }

Pattern pattern_from_string(const std::string& s) {
  if (s == "spiral") return Pattern::spiral;
  if (s == "epi") return Pattern::epi;
  throw std::invalid_argument("unknown sampling pattern '" + s + "' (expected spiral or epi)");
}

void SamplingMask::validate() const {
  if (H == 0 || W == 0) throw std::invalid_argument("mask: empty grid");
  for (std::size_t f = 0; f < frames.size(); ++f) {
    const auto& fr = frames[f];
    if (fr.size() != m)
      throw std::invalid_argument("mask: frame " + std::to_string(f) + " has " +
                                  std::to_string(fr.size()) + " samples, expected " + std::to_string(m));
    std::vector<char> seen(H * W, 0);
    for (const auto& k : fr) {
      if (k.kx >= W || k.ky >= H)
        throw std::invalid_argument("mask: frame " + std::to_string(f) + " index out of bounds");
      auto& s = seen[k.ky * W + k.kx];
      if (s) throw std::invalid_argument("mask: frame " + std::to_string(f) + " has a duplicate index");
      s = 1;
    }
  }
}

std::string SamplingMask::hash() const {
  io::Hasher h;
  h.pod(static_cast<std::uint64_t>(H)).pod(static_cast<std::uint64_t>(W)).pod(static_cast<std::uint64_t>(m));
  h.str(pattern);
  for (const auto& fr : frames)
    for (const auto& k : fr) h.pod(k.kx).pod(k.ky);
  return h.hex();
}

namespace {

void check_budget(std::size_t H, std::size_t W, std::size_t m, const char* who) {
  if (H == 0 || W == 0) throw std::invalid_argument(std::string(who) + ": empty grid");
  if (m == 0) throw std::invalid_argument(std::string(who) + ": m must be >= 1");
  if (m > H * W)
    throw std::invalid_argument(std::string(who) + ": m=" + std::to_string(m) +
                                " exceeds H*W=" + std::to_string(H * W));
}

// Rasterised, deduplicated, in-bounds spiral points in arm order.
std::vector<KIndex> spiral_points(std::size_t H, std::size_t W, double turns, double rot_rad,
                                  std::size_t limit) {
  const double cx = static_cast<double>(W / 2), cy = static_cast<double>(H / 2);
  const double R = std::hypot(static_cast<double>(H) / 2.0, static_cast<double>(W) / 2.0);
  const double theta_max = 2.0 * std::numbers::pi * turns;
  const double a = R / theta_max;
  std::vector<char> seen(H * W, 0);
  std::vector<KIndex> pts;
  double theta = 0.0;
  while (theta <= theta_max && pts.size() < limit) {
    const double r = a * theta;
    const long x = std::lround(cx + r * std::cos(theta + rot_rad));
    const long y = std::lround(cy + r * std::sin(theta + rot_rad));
    if (x >= 0 && y >= 0 && x < static_cast<long>(W) && y < static_cast<long>(H)) {
      auto& s = seen[static_cast<std::size_t>(y) * W + static_cast<std::size_t>(x)];
      if (!s) {
        s = 1;
        pts.push_back({static_cast<std::uint32_t>(x), static_cast<std::uint32_t>(y)});
      }
    }
    theta += 0.25 / std::sqrt(r * r + a * a);
  }
  return pts;
}

}  // namespace

SamplingMask make_spiral_mask(std::size_t H, std::size_t W, std::size_t m, std::size_t T,
                              double rotation_increment_deg) {
  check_budget(H, W, m, "make_spiral_mask");
  SamplingMask mask{H, W, m, {}, "spiral"};
  mask.frames.reserve(T);
  const double R = std::hypot(static_cast<double>(H) / 2.0, static_cast<double>(W) / 2.0);
  for (std::size_t f = 0; f < T; ++f) {
    const double deg = std::fmod(static_cast<double>(f) * rotation_increment_deg, 360.0);
    const double rot = deg * std::numbers::pi / 180.0;
    // Fewest turns (in steps of 0.05) whose arm yields at least m distinct grid points,
    // found by bisection on the step count.
    auto at = [&](long k) { return spiral_points(H, W, 0.05 * static_cast<double>(k), rot, m); };
    long lo = 1, hi = static_cast<long>((2.0 * R + 2.0) / 0.05);
    std::vector<KIndex> pts = at(hi);
    if (pts.size() >= m) {
      while (lo < hi) {
        const long mid = lo + (hi - lo) / 2;
        if (at(mid).size() >= m)
          hi = mid;
        else
          lo = mid + 1;
      }
      pts = at(lo);
    }
    if (pts.size() < m) {
      // Dense limit reached without m points: extend with the nearest unvisited cells.
      std::vector<char> seen(H * W, 0);
      for (const auto& k : pts) seen[k.ky * W + k.kx] = 1;
      std::vector<std::size_t> rest;
      for (std::size_t i = 0; i < H * W; ++i)
        if (!seen[i]) rest.push_back(i);
      auto r2 = [&](std::size_t i) {
        const double dy = static_cast<double>(i / W) - static_cast<double>(H / 2);
        const double dx = static_cast<double>(i % W) - static_cast<double>(W / 2);
        return dx * dx + dy * dy;
      };
      std::stable_sort(rest.begin(), rest.end(), [&](auto a, auto b) { return r2(a) < r2(b); });
      for (std::size_t i = 0; pts.size() < m; ++i)
        pts.push_back({static_cast<std::uint32_t>(rest[i] % W), static_cast<std::uint32_t>(rest[i] / W)});
    }
    pts.resize(m);
    mask.frames.push_back(std::move(pts));
  }
  return mask;
}

std::size_t default_epi_stride(std::size_t H) {
  if (H <= 1) return 1;
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  const long target = std::lround(static_cast<double>(H) * phi);
  const long h = static_cast<long>(H);
  for (long d = 0; d < h; ++d) {
    // Prefer the candidate closer to H·φ; on equal distance the smaller one.
    const double exact = static_cast<double>(H) * phi;
    long cands[2] = {target - d, target + d};
    if (std::abs(static_cast<double>(cands[1]) - exact) < std::abs(static_cast<double>(cands[0]) - exact))
      std::swap(cands[0], cands[1]);
    for (long c : cands)
      if (c >= 1 && c < h && std::gcd(c, h) == 1) return static_cast<std::size_t>(c);
  }
  return 1;
}

SamplingMask make_epi_mask(std::size_t H, std::size_t W, std::size_t m, std::size_t T,
                           std::size_t stride) {
  check_budget(H, W, m, "make_epi_mask");
  if (stride == 0) stride = default_epi_stride(H);
  const std::size_t lines = (m + W - 1) / W;
  const std::size_t spacing = H / lines;
  const std::size_t last = m - (lines - 1) * W;
  const std::size_t last_start = (W - last) / 2;
  SamplingMask mask{H, W, m, {}, "epi"};
  mask.frames.reserve(T);
  for (std::size_t f = 0; f < T; ++f) {
    const std::size_t base = (f * stride) % H;
    std::vector<KIndex> pts;
    pts.reserve(m);
    for (std::size_t j = 0; j < lines; ++j) {
      const auto row = static_cast<std::uint32_t>((base + j * spacing) % H);
      const bool final_line = j + 1 == lines;
      const std::size_t c0 = final_line ? last_start : 0, c1 = final_line ? last_start + last : W;
      for (std::size_t c = c0; c < c1; ++c) pts.push_back({static_cast<std::uint32_t>(c), row});
    }
    mask.frames.push_back(std::move(pts));
  }
  return mask;
}

SamplingMask make_mask(Pattern p, std::size_t H, std::size_t W, std::size_t m, std::size_t T) {
  return p == Pattern::spiral ? make_spiral_mask(H, W, m, T) : make_epi_mask(H, W, m, T);
}

void save_mask(const std::filesystem::path& stem, const SamplingMask& mask) {
  auto bin = stem, man = stem;
  bin += ".bin";
  man += ".json";
  std::vector<std::uint32_t> flat;
  flat.reserve(2 * mask.m * mask.frame_count());
  for (const auto& fr : mask.frames)
    for (const auto& k : fr) {
      flat.push_back(k.kx);
      flat.push_back(k.ky);
    }
  io::write_u32(bin, flat);
  io::write_json(man, {{"format", "qmrf-mask-v1"},
                       {"H", mask.H},
                       {"W", mask.W},
                       {"m", mask.m},
                       {"T", mask.frame_count()},
                       {"pattern", mask.pattern},
                       {"index_layout", "uint32 (kx, ky) pairs, little-endian, frame-major"},
                       {"origin", "k-space DC at (kx, ky) = (W/2, H/2)"},
                       {"hash", mask.hash()}});
}

SamplingMask load_mask(const std::filesystem::path& stem) {
  auto bin = stem, man = stem;
  bin += ".bin";
  man += ".json";
  const auto j = io::read_json(man);
  SamplingMask mask;
  mask.H = j.at("H");
  mask.W = j.at("W");
  mask.m = j.at("m");
  mask.pattern = j.at("pattern");
  const std::size_t T = j.at("T");
  const auto flat = io::read_u32(bin);
  if (flat.size() != 2 * mask.m * T) throw io::FormatError(bin.string() + ": size does not match header");
  mask.frames.resize(T);
  for (std::size_t f = 0; f < T; ++f) {
    mask.frames[f].resize(mask.m);
    for (std::size_t s = 0; s < mask.m; ++s)
      mask.frames[f][s] = {flat[2 * (f * mask.m + s)], flat[2 * (f * mask.m + s) + 1]};
  }
  mask.validate();
  if (mask.hash() != j.at("hash").get<std::string>()) throw io::FormatError(man.string() + ": mask hash mismatch");
  return mask;
}

double compression_ratio(std::size_t H, std::size_t W, std::size_t m) {
  return static_cast<double>(H * W) / static_cast<double>(m);
}

// --- operator ----------------------------------------------------------------

struct AcquisitionOperator::Plans {
  fftw_plan fwd = nullptr;
  fftw_plan bwd = nullptr;
  ~Plans() {
    if (fwd) fftw_destroy_plan(fwd);
    if (bwd) fftw_destroy_plan(bwd);
  }
};

AcquisitionOperator::AcquisitionOperator(std::shared_ptr<const SamplingMask> mask,
                                         std::shared_ptr<const TemporalBasis> basis)
    : mask_(std::move(mask)), basis_(std::move(basis)), plans_(std::make_unique<Plans>()) {
  if (!mask_ || !basis_) throw std::invalid_argument("AcquisitionOperator: null mask or basis");
  mask_->validate();
  if (mask_->frame_count() != basis_->length())
    throw std::invalid_argument("AcquisitionOperator: mask has " + std::to_string(mask_->frame_count()) +
                                " frames but basis length is " + std::to_string(basis_->length()));
  const std::size_t H = mask_->H, W = mask_->W;
  fft_index_.resize(mask_->frame_count());
  for (std::size_t f = 0; f < mask_->frame_count(); ++f) {
    auto& idx = fft_index_[f];
    idx.reserve(mask_->m);
    for (const auto& k : mask_->frames[f]) {
      const std::size_t r = (k.ky + H - H / 2) % H;
      const std::size_t c = (k.kx + W - W / 2) % W;
      idx.push_back(r * W + c);
    }
  }
  std::vector<cd> buf(H * W);
  auto* p = reinterpret_cast<fftw_complex*>(buf.data());
  const int h = static_cast<int>(H), w = static_cast<int>(W);
  plans_->fwd = fftw_plan_dft_2d(h, w, p, p, FFTW_FORWARD, FFTW_ESTIMATE | FFTW_UNALIGNED);
  plans_->bwd = fftw_plan_dft_2d(h, w, p, p, FFTW_BACKWARD, FFTW_ESTIMATE | FFTW_UNALIGNED);
  if (!plans_->fwd || !plans_->bwd) throw std::runtime_error("AcquisitionOperator: FFTW planning failed");
  mask_hash_ = mask_->hash();
  basis_hash_ = basis_->hash();
}

AcquisitionOperator::~AcquisitionOperator() = default;

void AcquisitionOperator::forward_raw(const cd* x, cd* y) const {
  const std::size_t HW = H() * W(), t = this->t(), T = frames(), m = this->m();
  const double norm = 1.0 / std::sqrt(static_cast<double>(HW));
  std::vector<cd> planes(t * HW);
  for (std::size_t v = 0; v < HW; ++v)
    for (std::size_t j = 0; j < t; ++j) planes[j * HW + v] = x[v * t + j];
  for (std::size_t j = 0; j < t; ++j) {
    auto* p = reinterpret_cast<fftw_complex*>(planes.data() + j * HW);
    fftw_execute_dft(plans_->fwd, p, p);
  }
  const auto& V = basis_->V;
  for (std::size_t f = 0; f < T; ++f) {
    const auto& idx = fft_index_[f];
    for (std::size_t s = 0; s < m; ++s) {
      cd acc = 0.0;
      for (std::size_t j = 0; j < t; ++j)
        acc += planes[j * HW + idx[s]] * std::conj(V(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(j)));
      y[s * T + f] = acc * norm;
    }
  }
}

void AcquisitionOperator::adjoint_raw(const cd* y, cd* x) const {
  const std::size_t HW = H() * W(), t = this->t(), T = frames(), m = this->m();
  const double norm = 1.0 / std::sqrt(static_cast<double>(HW));
  std::vector<cd> planes(t * HW, cd(0.0));
  const auto& V = basis_->V;
  for (std::size_t f = 0; f < T; ++f) {
    const auto& idx = fft_index_[f];
    for (std::size_t s = 0; s < m; ++s) {
      const cd v = y[s * T + f];
      for (std::size_t j = 0; j < t; ++j)
        planes[j * HW + idx[s]] += v * V(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(j));
    }
  }
  for (std::size_t j = 0; j < t; ++j) {
    auto* p = reinterpret_cast<fftw_complex*>(planes.data() + j * HW);
    fftw_execute_dft(plans_->bwd, p, p);
  }
  for (std::size_t v = 0; v < HW; ++v)
    for (std::size_t j = 0; j < t; ++j) x[v * t + j] = planes[j * HW + v] * norm;
}

KSpaceData AcquisitionOperator::forward(const Tsmi& x) const {
  if (static_cast<std::size_t>(x.data.rows()) != H() * W() || static_cast<std::size_t>(x.data.cols()) != t())
    throw std::invalid_argument("forward: TSMI shape (" + std::to_string(x.data.rows()) + " x " +
                                std::to_string(x.data.cols()) + ") does not match operator (" +
                                std::to_string(H() * W()) + " x " + std::to_string(t()) + ")");
  if (!x.basis_hash.empty() && x.basis_hash != basis_hash_)
    throw std::invalid_argument("forward: TSMI basis hash does not match operator basis");
  KSpaceData y;
  y.samples.resize(static_cast<Eigen::Index>(m()), static_cast<Eigen::Index>(frames()));
  forward_raw(x.data.data(), y.samples.data());
  y.mask_ref = mask_hash_;
  return y;
}

Tsmi AcquisitionOperator::backproject(const KSpaceData& y) const {
  if (static_cast<std::size_t>(y.samples.rows()) != m() || static_cast<std::size_t>(y.samples.cols()) != frames())
    throw std::invalid_argument("backproject: k-space shape (" + std::to_string(y.samples.rows()) + " x " +
                                std::to_string(y.samples.cols()) + ") does not match operator (" +
                                std::to_string(m()) + " x " + std::to_string(frames()) + ")");
  Tsmi x;
  x.H = H();
  x.W = W();
  x.basis_hash = basis_hash_;
  x.data.resize(static_cast<Eigen::Index>(H() * W()), static_cast<Eigen::Index>(t()));
  adjoint_raw(y.samples.data(), x.data.data());
  return x;
}

std::vector<double> tsmi_to_channels(const CMatrix& x, std::size_t H, std::size_t W) {
  const std::size_t HW = H * W, t = static_cast<std::size_t>(x.cols());
  std::vector<double> ch(2 * t * HW);
  for (std::size_t v = 0; v < HW; ++v)
    for (std::size_t j = 0; j < t; ++j) {
      const cd z = x(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(j));
      ch[j * HW + v] = z.real();
      ch[(t + j) * HW + v] = z.imag();
    }
  return ch;
}

CMatrix channels_to_tsmi(std::span<const double> ch, std::size_t t, std::size_t H, std::size_t W) {
  const std::size_t HW = H * W;
  if (ch.size() != 2 * t * HW) throw std::invalid_argument("channels_to_tsmi: size mismatch");
  CMatrix x(static_cast<Eigen::Index>(HW), static_cast<Eigen::Index>(t));
  for (std::size_t v = 0; v < HW; ++v)
    for (std::size_t j = 0; j < t; ++j)
      x(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(j)) = cd(ch[j * HW + v], ch[(t + j) * HW + v]);
  return x;
}

std::vector<double> kspace_to_channels(const CMatrix& y) {
  const std::size_t m = static_cast<std::size_t>(y.rows()), T = static_cast<std::size_t>(y.cols());
  std::vector<double> ch(2 * m * T);
  for (std::size_t s = 0; s < m; ++s)
    for (std::size_t f = 0; f < T; ++f) {
      const cd z = y(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(f));
      ch[f * m + s] = z.real();
      ch[(T + f) * m + s] = z.imag();
    }
  return ch;
}

CMatrix channels_to_kspace(std::span<const double> ch, std::size_t m, std::size_t T) {
  if (ch.size() != 2 * m * T) throw std::invalid_argument("channels_to_kspace: size mismatch");
  CMatrix y(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(T));
  for (std::size_t s = 0; s < m; ++s)
    for (std::size_t f = 0; f < T; ++f)
      y(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(f)) = cd(ch[f * m + s], ch[(T + f) * m + s]);
  return y;
}

namespace {

// Shared scratch-free wrappers around the raw complex maps in real-pair layout.
void forward_channels(const AcquisitionOperator& op, std::span<const double> in, std::span<double> out) {
  const CMatrix x = channels_to_tsmi(in, op.t(), op.H(), op.W());
  CMatrix y(static_cast<Eigen::Index>(op.m()), static_cast<Eigen::Index>(op.frames()));
  op.forward_raw(x.data(), y.data());
  const auto ch = kspace_to_channels(y);
  std::copy(ch.begin(), ch.end(), out.begin());
}

void adjoint_channels(const AcquisitionOperator& op, std::span<const double> in, std::span<double> out) {
  const CMatrix y = channels_to_kspace(in, op.m(), op.frames());
  CMatrix x(static_cast<Eigen::Index>(op.H() * op.W()), static_cast<Eigen::Index>(op.t()));
  op.adjoint_raw(y.data(), x.data());
  const auto ch = tsmi_to_channels(x, op.H(), op.W());
  std::copy(ch.begin(), ch.end(), out.begin());
}

}  // namespace

ad::LinearOperator AcquisitionOperator::as_linear() const {
  ad::LinearOperator L;
  L.in_shape = {2 * t(), H(), W()};
  L.out_shape = {2, frames(), m()};
  L.name = "acquisition";
  L.forward = [this](std::span<const double> in, std::span<double> out) { forward_channels(*this, in, out); };
  L.adjoint = [this](std::span<const double> in, std::span<double> out) { adjoint_channels(*this, in, out); };
  return L;
}

ad::LinearOperator AcquisitionOperator::adjoint_as_linear() const {
  ad::LinearOperator L;
  L.in_shape = {2, frames(), m()};
  L.out_shape = {2 * t(), H(), W()};
  L.name = "acquisition_adjoint";
  L.forward = [this](std::span<const double> in, std::span<double> out) { adjoint_channels(*this, in, out); };
  L.adjoint = [this](std::span<const double> in, std::span<double> out) { forward_channels(*this, in, out); };
  return L;
}

double operator_norm_estimate(const AcquisitionOperator& op, std::size_t iters, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  const auto n = static_cast<Eigen::Index>(op.H() * op.W()), t = static_cast<Eigen::Index>(op.t());
  CMatrix x(n, t);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = cd(nd(rng), nd(rng));
  x /= x.norm();
  CMatrix y(static_cast<Eigen::Index>(op.m()), static_cast<Eigen::Index>(op.frames()));
  double est = 0.0;
  for (std::size_t it = 0; it < iters; ++it) {
    op.forward_raw(x.data(), y.data());
    CMatrix z(n, t);
    op.adjoint_raw(y.data(), z.data());
    const double nz = z.norm();
    if (nz == 0.0) return 0.0;
    est = std::sqrt(nz);  // ‖AᴴA x‖ with ‖x‖ = 1 approaches ‖A‖²
    x = z / nz;
  }
  return est;
}

}  // namespace qmrf
