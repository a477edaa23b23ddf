#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "qmrf/phantom.hpp"

namespace qmrf {

constexpr double kRangeT1 = 6.0, kRangeT2 = 4.0, kRangePD = 1.0;
/// Reported for exact matches (infinite PSNR does not fit a CSV cell).
constexpr double kPsnrCap = 300.0;

class EmptyMask : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// All metrics read only voxels with mask != 0.

double mae(const std::vector<double>& pred, const std::vector<double>& truth, const std::vector<std::uint8_t>& mask);
/// Percent; voxels whose truth is exactly zero are skipped.
double mape(const std::vector<double>& pred, const std::vector<double>& truth, const std::vector<std::uint8_t>& mask);
double psnr(const std::vector<double>& pred, const std::vector<double>& truth, const std::vector<std::uint8_t>& mask,
            double data_range);
/// 7x7 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03. Both images are zeroed outside
/// the mask, windows must lie fully inside the image, and the SSIM map is averaged over
/// window centres inside the mask.
double ssim(const std::vector<double>& pred, const std::vector<double>& truth, const std::vector<std::uint8_t>& mask,
            std::size_t H, std::size_t W, double data_range);

/// |PD| divided by its in-mask maximum; zero outside the mask.
std::vector<double> normalised_pd(const QMaps& q, const std::vector<std::uint8_t>& mask);

enum class Metric { mape, mae, psnr, ssim };  // priority order
constexpr Metric kMetrics[] = {Metric::mape, Metric::mae, Metric::psnr, Metric::ssim};
std::string to_string(Metric m);
bool higher_is_better(Metric m);

struct MapMetrics {
  double mae = 0, mape = 0, psnr = 0, ssim = 0;
  double get(Metric m) const;
};

struct SliceMetrics {
  std::string id;
  MapMetrics t1, t2, pd;
};

/// Head mask taken from the ground truth.
SliceMetrics evaluate_slice(const std::string& id, const QMaps& pred, const QMaps& truth);

struct MetricReport {
  std::string method;
  std::vector<SliceMetrics> slices;
  MapMetrics t1, t2, pd;  // per-slice values averaged over slices
  std::string config_hash;

  /// Mean of one metric over the T1, T2 and PD maps.
  double qmap_mean(Metric m) const;
};

MetricReport make_report(const std::string& method, std::vector<SliceMetrics> slices, const std::string& config_hash);

/// One row of an alpha sweep: the α and its averaged-QMap metric values.
struct SweepRow {
  double alpha = 0;
  double mape = 0, mae = 0, psnr = 0, ssim = 0;
  double get(Metric m) const;
};

struct AlphaChoice {
  std::size_t index = 0;                // into the rows
  std::vector<std::size_t> best_by;     // per metric (priority order), index of its best row
  std::vector<std::size_t> votes;       // per row
};

/// Every metric votes for its best α (first row wins exact ties); the α with most votes
/// wins, and a tie in votes goes to the α preferred by the highest-priority metric.
AlphaChoice select_alpha(const std::vector<SweepRow>& rows);

/// Results table: one row per method, columns metric x map.
void write_results_csv(const std::filesystem::path& path, const std::vector<MetricReport>& reports);
std::string format_results(const std::vector<MetricReport>& reports);
void write_per_slice_csv(const std::filesystem::path& path, const MetricReport& report);

/// 16-bit binary PGM, values linearly mapped from [0, range] and clipped.
void write_pgm16(const std::filesystem::path& path, const std::vector<double>& img, std::size_t H, std::size_t W,
                 double range);

}  // namespace qmrf
