#include "qmrf/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "qmrf/io.hpp"

namespace qmrf {

namespace {

void check(const std::vector<double>& a, const std::vector<double>& b, const std::vector<std::uint8_t>& mask,
           const char* what) {
  if (a.size() != b.size() || a.size() != mask.size())
    throw std::invalid_argument(std::string(what) + ": prediction, truth and mask sizes differ");
  if (std::none_of(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; }))
    throw EmptyMask(std::string(what) + ": empty mask");
}

}  // namespace

double mae(const std::vector<double>& pred, const std::vector<double>& truth, const std::vector<std::uint8_t>& mask) {
  check(pred, truth, mask, "mae");
  double s = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (mask[i]) {
      s += std::abs(pred[i] - truth[i]);
      ++n;
    }
  return s / static_cast<double>(n);
}

double mape(const std::vector<double>& pred, const std::vector<double>& truth, const std::vector<std::uint8_t>& mask) {
  check(pred, truth, mask, "mape");
  double s = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (mask[i] && truth[i] != 0.0) {
      s += std::abs(pred[i] - truth[i]) / std::abs(truth[i]);
      ++n;
    }
  if (n == 0) throw EmptyMask("mape: every in-mask truth value is zero");
  return 100.0 * s / static_cast<double>(n);
}

double psnr(const std::vector<double>& pred, const std::vector<double>& truth, const std::vector<std::uint8_t>& mask,
            double data_range) {
  check(pred, truth, mask, "psnr");
  if (!(data_range > 0)) throw std::invalid_argument("psnr: data range must be > 0");
  double s = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (mask[i]) {
      const double d = pred[i] - truth[i];
      s += d * d;
      ++n;
    }
  const double mse = s / static_cast<double>(n);
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(data_range * data_range / mse));
}

double ssim(const std::vector<double>& pred, const std::vector<double>& truth, const std::vector<std::uint8_t>& mask,
            std::size_t H, std::size_t W, double data_range) {
  check(pred, truth, mask, "ssim");
  if (pred.size() != H * W) throw std::invalid_argument("ssim: image size is not H*W");
  constexpr int R = 3;  // 7x7
  if (H < 2 * R + 1 || W < 2 * R + 1) throw std::invalid_argument("ssim: image smaller than the 7x7 window");
  double win[2 * R + 1][2 * R + 1], wsum = 0;
  for (int i = -R; i <= R; ++i)
    for (int j = -R; j <= R; ++j) wsum += win[i + R][j + R] = std::exp(-(i * i + j * j) / (2 * 1.5 * 1.5));
  for (auto& row : win)
    for (double& w : row) w /= wsum;
  const double C1 = (0.01 * data_range) * (0.01 * data_range), C2 = (0.03 * data_range) * (0.03 * data_range);
  std::vector<double> x(pred.size()), y(truth.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    x[i] = mask[i] ? pred[i] : 0.0;
    y[i] = mask[i] ? truth[i] : 0.0;
  }
  double total = 0;
  std::size_t n = 0;
  for (std::size_t r = R; r + R < H; ++r)
    for (std::size_t c = R; c + R < W; ++c) {
      if (!mask[r * W + c]) continue;
      double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
      for (int i = -R; i <= R; ++i)
        for (int j = -R; j <= R; ++j) {
          const double w = win[i + R][j + R];
          const std::size_t p = (r + static_cast<std::size_t>(i)) * W + c + static_cast<std::size_t>(j);
          mx += w * x[p];
          my += w * y[p];
          sxx += w * x[p] * x[p];
          syy += w * y[p] * y[p];
          sxy += w * x[p] * y[p];
        }
      const double vx = sxx - mx * mx, vy = syy - my * my, cxy = sxy - mx * my;
      total += ((2 * mx * my + C1) * (2 * cxy + C2)) / ((mx * mx + my * my + C1) * (vx + vy + C2));
      ++n;
    }
  if (n == 0) throw EmptyMask("ssim: no in-mask window centre lies far enough from the border");
  return total / static_cast<double>(n);
}

std::vector<double> normalised_pd(const QMaps& q, const std::vector<std::uint8_t>& mask) {
  if (mask.size() != q.size()) throw std::invalid_argument("normalised_pd: mask size differs from the maps");
  std::vector<double> out(q.size(), 0.0);
  double mx = 0;
  for (std::size_t v = 0; v < q.size(); ++v)
    if (mask[v]) mx = std::max(mx, out[v] = std::abs(q.pd(v)));
  if (mx > 0)
    for (auto& v : out) v /= mx;
  return out;
}

std::string to_string(Metric m) {
  switch (m) {
    case Metric::mape: return "MAPE";
    case Metric::mae: return "MAE";
    case Metric::psnr: return "PSNR";
    case Metric::ssim: return "SSIM";
  }
  return "?";
}

bool higher_is_better(Metric m) { return m == Metric::psnr || m == Metric::ssim; }

double MapMetrics::get(Metric m) const {
  switch (m) {
    case Metric::mape: return mape;
    case Metric::mae: return mae;
    case Metric::psnr: return psnr;
    case Metric::ssim: return ssim;
  }
  return 0;
}

double SweepRow::get(Metric m) const {
  switch (m) {
    case Metric::mape: return mape;
    case Metric::mae: return mae;
    case Metric::psnr: return psnr;
    case Metric::ssim: return ssim;
  }
  return 0;
}

namespace {

MapMetrics map_metrics(const std::vector<double>& p, const std::vector<double>& t, const std::vector<std::uint8_t>& mask,
                       std::size_t H, std::size_t W, double range) {
  return {mae(p, t, mask), mape(p, t, mask), psnr(p, t, mask, range), ssim(p, t, mask, H, W, range)};
}

}  // namespace

SliceMetrics evaluate_slice(const std::string& id, const QMaps& pred, const QMaps& truth) {
  if (pred.H != truth.H || pred.W != truth.W) throw std::invalid_argument("evaluate_slice: map sizes differ");
  const auto& mask = truth.head_mask;
  SliceMetrics s;
  s.id = id;
  s.t1 = map_metrics(pred.t1_s, truth.t1_s, mask, truth.H, truth.W, kRangeT1);
  s.t2 = map_metrics(pred.t2_s, truth.t2_s, mask, truth.H, truth.W, kRangeT2);
  s.pd = map_metrics(normalised_pd(pred, mask), normalised_pd(truth, mask), mask, truth.H, truth.W, kRangePD);
  return s;
}

double MetricReport::qmap_mean(Metric m) const { return (t1.get(m) + t2.get(m) + pd.get(m)) / 3.0; }

MetricReport make_report(const std::string& method, std::vector<SliceMetrics> slices, const std::string& config_hash) {
  if (slices.empty()) throw std::invalid_argument("make_report: no slices");
  MetricReport r;
  r.method = method;
  r.config_hash = config_hash;
  const double n = static_cast<double>(slices.size());
  for (const auto& s : slices)
    for (auto [acc, v] : {std::pair{&r.t1, &s.t1}, std::pair{&r.t2, &s.t2}, std::pair{&r.pd, &s.pd}}) {
      acc->mae += v->mae / n;
      acc->mape += v->mape / n;
      acc->psnr += v->psnr / n;
      acc->ssim += v->ssim / n;
    }
  r.slices = std::move(slices);
  return r;
}

AlphaChoice select_alpha(const std::vector<SweepRow>& rows) {
  if (rows.empty()) throw std::invalid_argument("select_alpha: empty sweep");
  AlphaChoice c;
  c.votes.assign(rows.size(), 0);
  for (Metric m : kMetrics) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < rows.size(); ++i) {
      const double v = rows[i].get(m), b = rows[best].get(m);
      if (higher_is_better(m) ? v > b : v < b) best = i;
    }
    c.best_by.push_back(best);
    ++c.votes[best];
  }
  const std::size_t top = *std::max_element(c.votes.begin(), c.votes.end());
  for (std::size_t best : c.best_by)  // priority order
    if (c.votes[best] == top) {
      c.index = best;
      break;
    }
  return c;
}

namespace {

const char* kMapNames[] = {"T1", "T2", "PD"};

}  // namespace

void write_results_csv(const std::filesystem::path& path, const std::vector<MetricReport>& reports) {
  std::ofstream f(path);
  if (!f) throw io::FormatError("cannot open for writing: " + path.string());
  f << "method";
  for (const char* map : kMapNames)
    for (Metric m : kMetrics) f << ',' << map << '_' << to_string(m);
  f << ",config_hash\n";
  char buf[64];
  for (const auto& r : reports) {
    f << r.method;
    for (const MapMetrics* mm : {&r.t1, &r.t2, &r.pd})
      for (Metric m : kMetrics) {
        std::snprintf(buf, sizeof buf, ",%.10g", mm->get(m));
        f << buf;
      }
    f << ',' << r.config_hash << '\n';
  }
}

std::string format_results(const std::vector<MetricReport>& reports) {
  std::ostringstream o;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-12s | %-31s | %-31s | %-31s\n", "", "T1 (s)", "T2 (s)", "PD");
  o << buf;
  std::snprintf(buf, sizeof buf, "%-12s |", "method");
  o << buf;
  for (int k = 0; k < 3; ++k) o << "   MAE   MAPE%    PSNR   SSIM |";
  o << '\n';
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, "%-12s |", r.method.c_str());
    o << buf;
    for (const MapMetrics* mm : {&r.t1, &r.t2, &r.pd}) {
      std::snprintf(buf, sizeof buf, " %6.4f %6.2f %7.2f %6.4f |", mm->mae, mm->mape, mm->psnr, mm->ssim);
      o << buf;
    }
    o << '\n';
  }
  o << "MAPE skips voxels whose truth is zero; PSNR of an exact match is reported as " << kPsnrCap << " dB.\n";
  return o.str();
}

void write_per_slice_csv(const std::filesystem::path& path, const MetricReport& report) {
  std::ofstream f(path);
  if (!f) throw io::FormatError("cannot open for writing: " + path.string());
  f << "slice";
  for (const char* map : kMapNames)
    for (Metric m : kMetrics) f << ',' << map << '_' << to_string(m);
  f << '\n';
  char buf[64];
  for (const auto& s : report.slices) {
    f << s.id;
    for (const MapMetrics* mm : {&s.t1, &s.t2, &s.pd})
      for (Metric m : kMetrics) {
        std::snprintf(buf, sizeof buf, ",%.10g", mm->get(m));
        f << buf;
      }
    f << '\n';
  }
}

void write_pgm16(const std::filesystem::path& path, const std::vector<double>& img, std::size_t H, std::size_t W,
                 double range) {
  if (img.size() != H * W) throw std::invalid_argument("write_pgm16: image size is not H*W");
  if (!(range > 0)) throw std::invalid_argument("write_pgm16: range must be > 0");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw io::FormatError("cannot open for writing: " + path.string());
  f << "P5\n" << W << ' ' << H << "\n65535\n";
  for (double v : img) {
    const double s = std::clamp(v / range, 0.0, 1.0);
    const auto u = static_cast<std::uint16_t>(std::lround(s * 65535.0));
    const unsigned char be[2] = {static_cast<unsigned char>(u >> 8), static_cast<unsigned char>(u & 0xff)};
    f.write(reinterpret_cast<const char*>(be), 2);
  }
}

}  // namespace qmrf
