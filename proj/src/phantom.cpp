#include "qmrf/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "qmrf/dictionary.hpp"

namespace qmrf {

namespace {

// Synthetic palette; physiologically plausible, not measured data.
struct Tissue {
  double t1, t2, pd;
};
constexpr Tissue kWhite{0.8, 0.07, 0.70};
constexpr Tissue kGray{1.3, 0.11, 0.80};
constexpr Tissue kCsf{4.0, 1.8, 1.00};

struct Ellipse {
  double cy, cx, ry, rx, angle;
  bool contains(double y, double x) const {
    const double c = std::cos(angle), s = std::sin(angle);
    const double dy = y - cy, dx = x - cx;
    const double u = (c * dx + s * dy) / rx, v = (-s * dx + c * dy) / ry;
    return u * u + v * v <= 1.0;
  }
};

}  // namespace

QMaps QMaps::zeros(std::size_t H, std::size_t W) {
  QMaps q;
  q.H = H;
  q.W = W;
  q.t1_s.assign(H * W, 0.0);
  q.t2_s.assign(H * W, 0.0);
  q.pd_re.assign(H * W, 0.0);
  q.pd_im.assign(H * W, 0.0);
  q.head_mask.assign(H * W, 0);
  return q;
}

void QMaps::validate() const {
  const std::size_t n = H * W;
  if (t1_s.size() != n || t2_s.size() != n || pd_re.size() != n || pd_im.size() != n || head_mask.size() != n)
    throw std::invalid_argument("QMaps: map sizes do not match H x W");
  for (std::size_t v = 0; v < n; ++v) {
    const bool in = head_mask[v] != 0;
    if (in != (std::abs(pd(v)) > 0.0))
      throw std::invalid_argument("QMaps: head mask disagrees with |PD| > 0 at voxel " + std::to_string(v));
    if (in) {
      if (!(t1_s[v] >= kT1Min && t1_s[v] <= kT1Max && t2_s[v] >= kT2Min && t2_s[v] <= kT2Max))
        throw std::invalid_argument("QMaps: (T1, T2) outside the dictionary domain at voxel " + std::to_string(v));
    } else if (t1_s[v] != 0.0 || t2_s[v] != 0.0) {
      throw std::invalid_argument("QMaps: nonzero map outside the head mask at voxel " + std::to_string(v));
    }
  }
}

QMaps make_brain_phantom(std::size_t H, std::size_t W, std::uint64_t seed, const PhantomOptions& opt) {
  if (H < 16 || W < 16) throw std::invalid_argument("make_brain_phantom: H and W must be >= 16");
  std::mt19937_64 rng(seed);
  auto U = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };
  const double h = static_cast<double>(H), w = static_cast<double>(W);

  const double cy = h / 2.0 + U(-h / 32.0, h / 32.0), cx = w / 2.0 + U(-w / 32.0, w / 32.0);
  const double ang = U(-0.2, 0.2);
  const Ellipse head{cy, cx, h * U(0.40, 0.45), w * U(0.32, 0.38), ang};
  const Ellipse brain{cy, cx, head.ry * 0.88, head.rx * 0.86, ang};
  const Ellipse white{cy + U(-1.0, 1.0), cx + U(-1.0, 1.0), head.ry * U(0.55, 0.68), head.rx * U(0.52, 0.66), ang};
  const double vs = U(0.8, 1.2);
  const Ellipse vent_l{cy - head.ry * 0.05, cx - head.rx * 0.14, head.ry * 0.22 * vs, head.rx * 0.07 * vs, ang + 0.15};
  const Ellipse vent_r{cy - head.ry * 0.05, cx + head.rx * 0.14, head.ry * 0.22 * vs, head.rx * 0.07 * vs, ang - 0.15};

  struct Blob {
    Ellipse e;
    Tissue tissue;
  };
  std::vector<Blob> blobs;
  const int nblobs = std::uniform_int_distribution<int>(2, 5)(rng);
  for (int i = 0; i < nblobs; ++i) {
    const double r = U(0.0, 0.6), th = U(0.0, 2.0 * std::numbers::pi);
    Ellipse e{cy + r * head.ry * std::sin(th), cx + r * head.rx * std::cos(th), head.ry * U(0.06, 0.16),
              head.rx * U(0.06, 0.16), U(0.0, std::numbers::pi)};
    const double kind = U(0.0, 1.0);
    Tissue t = kind < 0.5 ? Tissue{U(0.5, 2.0), U(0.05, 0.4), U(0.6, 1.0)} : (kind < 0.75 ? kGray : kWhite);
    blobs.push_back({e, t});
  }

  const double p0 = U(-std::numbers::pi, std::numbers::pi), py = U(-1.0, 1.0), px = U(-1.0, 1.0);
  const double f1 = U(0.5, 2.0), f2 = U(0.5, 2.0), ph1 = U(0.0, 6.28), ph2 = U(0.0, 6.28);

  QMaps q = QMaps::zeros(H, W);
  std::vector<double> pdmag(H * W, 0.0);
  for (std::size_t r = 0; r < H; ++r)
    for (std::size_t c = 0; c < W; ++c) {
      const double y = static_cast<double>(r) + 0.5, x = static_cast<double>(c) + 0.5;
      if (!head.contains(y, x)) continue;
      Tissue t = kCsf;
      if (brain.contains(y, x)) t = white.contains(y, x) ? kWhite : kGray;
      if (vent_l.contains(y, x) || vent_r.contains(y, x)) t = kCsf;
      for (const auto& b : blobs)
        if (brain.contains(y, x) && b.e.contains(y, x)) t = b.tissue;
      // Gentle smooth variation so regions are not perfectly flat.
      const double mod1 = 1.0 + 0.04 * std::sin(f1 * 2.0 * std::numbers::pi * y / h + ph1);
      const double mod2 = 1.0 + 0.04 * std::sin(f2 * 2.0 * std::numbers::pi * x / w + ph2);
      const std::size_t v = r * W + c;
      q.t1_s[v] = std::clamp(t.t1 * mod1, kT1Min, kT1Max);
      q.t2_s[v] = std::clamp(t.t2 * mod2, kT2Min, kT2Max);
      pdmag[v] = t.pd;
      q.head_mask[v] = 1;
    }

  if (opt.smooth) {
    auto smooth = [&](std::vector<double>& m) {
      std::vector<double> out = m;
      for (std::size_t r = 0; r < H; ++r)
        for (std::size_t c = 0; c < W; ++c) {
          if (!q.head_mask[r * W + c]) continue;
          double s = 0.0;
          int n = 0;
          for (int dr = -1; dr <= 1; ++dr)
            for (int dc = -1; dc <= 1; ++dc) {
              const long rr = static_cast<long>(r) + dr, cc = static_cast<long>(c) + dc;
              if (rr < 0 || cc < 0 || rr >= static_cast<long>(H) || cc >= static_cast<long>(W)) continue;
              const std::size_t u = static_cast<std::size_t>(rr) * W + static_cast<std::size_t>(cc);
              if (!q.head_mask[u]) continue;
              s += m[u];
              ++n;
            }
          out[r * W + c] = s / n;
        }
      m = std::move(out);
    };
    smooth(q.t1_s);
    smooth(q.t2_s);
  }

  for (std::size_t r = 0; r < H; ++r)
    for (std::size_t c = 0; c < W; ++c) {
      const std::size_t v = r * W + c;
      if (!q.head_mask[v]) continue;
      const double phase = p0 + py * (static_cast<double>(r) - cy) / h + px * (static_cast<double>(c) - cx) / w;
      q.pd_re[v] = pdmag[v] * std::cos(phase);
      q.pd_im[v] = pdmag[v] * std::sin(phase);
    }
  return q;
}

FingerprintModel make_epg_model(SequenceSchedule schedule, std::shared_ptr<const TemporalBasis> basis,
                                std::size_t n_states) {
  schedule.validate();
  if (basis->length() != schedule.length())
    throw std::invalid_argument("make_epg_model: basis length does not match schedule length");
  return [schedule = std::move(schedule), basis = std::move(basis), n_states](double t1, double t2) {
    if (!(t1 >= kT1Min && t1 <= kT1Max && t2 >= kT2Min && t2 <= kT2Max))
      throw std::invalid_argument("EPG model: (T1, T2) = (" + std::to_string(t1) + ", " + std::to_string(t2) +
                                  ") outside the simulator domain");
    return compress(epg_fisp(t1, t2, schedule, n_states).signal, *basis);
  };
}

Tsmi synthesize_tsmi(const QMaps& q, const FingerprintModel& model, const std::string& basis_hash) {
  const std::size_t n = q.size();
  Tsmi x;
  x.H = q.H;
  x.W = q.W;
  x.basis_hash = basis_hash;
  Eigen::Index t = -1;
  for (std::size_t v = 0; v < n; ++v) {
    if (!q.head_mask[v]) continue;
    const CVector f = model(q.t1_s[v], q.t2_s[v]);
    if (t < 0) {
      t = f.size();
      x.data = CMatrix::Zero(static_cast<Eigen::Index>(n), t);
    }
    x.data.row(static_cast<Eigen::Index>(v)) = q.pd(v) * f.transpose();
  }
  if (t < 0) {
    // Empty mask: probe the model for its output length.
    t = model(1.0, 0.1).size();
    x.data = CMatrix::Zero(static_cast<Eigen::Index>(n), t);
  }
  return x;
}

KSpaceData simulate_kspace(const Tsmi& x, const AcquisitionOperator& op) { return op.forward(x); }

}  // namespace qmrf
