#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "qmrf/experiment.hpp"

using namespace qmrf;

namespace {

QMaps disc_maps(std::size_t H, std::size_t W, double radius, std::uint64_t seed) {
  QMaps q = QMaps::zeros(H, W);
  std::mt19937_64 g(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const double dy = y - (H - 1) / 2.0, dx = x - (W - 1) / 2.0;
      if (dx * dx + dy * dy > radius * radius) continue;
      const std::size_t v = y * W + x;
      q.head_mask[v] = 1;
      q.t1_s[v] = 0.5 + 2.0 * u(g);
      q.t2_s[v] = 0.03 + 0.2 * u(g);
      q.pd_re[v] = 0.5 + 0.5 * u(g);
      q.pd_im[v] = 0.2 * u(g);
    }
  return q;
}

}  // namespace

TEST(Metrics, IdenticalImages) {
  const QMaps q = disc_maps(24, 24, 9, 1);
  const SliceMetrics s = evaluate_slice("a", q, q);
  for (const MapMetrics* m : {&s.t1, &s.t2, &s.pd}) {
    EXPECT_EQ(m->mae, 0.0);
    EXPECT_EQ(m->mape, 0.0);
    EXPECT_EQ(m->psnr, kPsnrCap);
    EXPECT_NEAR(m->ssim, 1.0, 1e-12);
  }
}

TEST(Metrics, DoubledPredictionIsHundredPercent) {
  const QMaps q = disc_maps(16, 16, 6, 2);
  std::vector<double> twice = q.t1_s;
  for (auto& v : twice) v *= 2;
  EXPECT_NEAR(mape(twice, q.t1_s, q.head_mask), 100.0, 1e-10);
}

TEST(Metrics, ConstantOffsetPsnr) {
  const QMaps q = disc_maps(16, 16, 6, 3);
  std::vector<double> p = q.t1_s;
  for (std::size_t v = 0; v < p.size(); ++v)
    if (q.head_mask[v]) p[v] += 0.06;
  // MSE = 0.0036 over range 6: 10 log10(36 / 0.0036) = 40 dB.
  EXPECT_NEAR(psnr(p, q.t1_s, q.head_mask, kRangeT1), 40.0, 1e-9);
  EXPECT_NEAR(mae(p, q.t1_s, q.head_mask), 0.06, 1e-12);
}

TEST(Metrics, MapeSkipsZeroTruth) {
  const std::vector<std::uint8_t> m{1, 1, 1};
  EXPECT_NEAR(mape({1.5, 7.0, 2.0}, {1.0, 0.0, 2.0}, m), 25.0, 1e-12);
}

TEST(Metrics, EmptyMaskThrows) {
  const std::vector<std::uint8_t> m{0, 0};
  EXPECT_THROW(mae({1, 2}, {1, 2}, m), EmptyMask);
}

TEST(Metrics, OutOfMaskValuesAreIgnored) {
  const QMaps truth = disc_maps(32, 32, 11, 4);
  QMaps pred = disc_maps(32, 32, 11, 5);
  const SliceMetrics a = evaluate_slice("x", pred, truth);
  std::mt19937_64 g(9);
  std::normal_distribution<double> N(0, 50);
  for (std::size_t v = 0; v < pred.size(); ++v)
    if (!truth.head_mask[v]) {
      pred.t1_s[v] = N(g), pred.t2_s[v] = N(g), pred.pd_re[v] = N(g), pred.pd_im[v] = N(g);
    }
  const SliceMetrics b = evaluate_slice("x", pred, truth);
  for (Metric m : kMetrics) {
    EXPECT_EQ(a.t1.get(m), b.t1.get(m)) << to_string(m);
    EXPECT_EQ(a.t2.get(m), b.t2.get(m)) << to_string(m);
    EXPECT_EQ(a.pd.get(m), b.pd.get(m)) << to_string(m);
  }
}

TEST(Metrics, PdIsNormalisedMagnitude) {
  QMaps truth = disc_maps(16, 16, 6, 6);
  QMaps pred = truth;
  // A global complex scale changes nothing after |.| / max normalisation.
  for (std::size_t v = 0; v < pred.size(); ++v) {
    const cd z = pred.pd(v) * cd(0.0, 3.0);
    pred.pd_re[v] = z.real(), pred.pd_im[v] = z.imag();
  }
  const SliceMetrics s = evaluate_slice("p", pred, truth);
  EXPECT_NEAR(s.pd.mae, 0.0, 1e-14);
  const auto n = normalised_pd(truth, truth.head_mask);
  double mx = 0;
  for (std::size_t v = 0; v < n.size(); ++v) {
    mx = std::max(mx, n[v]);
    if (!truth.head_mask[v]) {
      EXPECT_EQ(n[v], 0.0);
    }
  }
  EXPECT_DOUBLE_EQ(mx, 1.0);
}

TEST(Metrics, SsimDropsWithNoise) {
  const QMaps q = disc_maps(32, 32, 12, 7);
  std::vector<double> p = q.t1_s;
  std::mt19937_64 g(1);
  std::normal_distribution<double> N(0, 0.3);
  for (std::size_t v = 0; v < p.size(); ++v)
    if (q.head_mask[v]) p[v] += N(g);
  const double s = ssim(p, q.t1_s, q.head_mask, 32, 32, kRangeT1);
  EXPECT_LT(s, 0.99);
  EXPECT_GT(s, 0.0);
  EXPECT_NEAR(ssim(p, q.t1_s, q.head_mask, 32, 32, kRangeT1), ssim(q.t1_s, p, q.head_mask, 32, 32, kRangeT1), 1e-12);
}

TEST(Metrics, ReportAveragesPerSlice) {
  // Unequal masks: a per-slice mean differs from pooling all voxels.
  const QMaps small = disc_maps(24, 24, 4, 10), big = disc_maps(24, 24, 10, 11);
  auto off = [](QMaps q, double d) {
    for (std::size_t v = 0; v < q.size(); ++v)
      if (q.head_mask[v]) q.t1_s[v] += d;
    return q;
  };
  const SliceMetrics a = evaluate_slice("s", off(small, 0.1), small);
  const SliceMetrics b = evaluate_slice("b", off(big, 0.3), big);
  const MetricReport r = make_report("m", {a, b}, "h");
  EXPECT_NEAR(r.t1.mae, 0.2, 1e-12);
  std::size_t ns = 0, nb = 0;
  for (auto m : small.head_mask) ns += m;
  for (auto m : big.head_mask) nb += m;
  const double pooled = (0.1 * ns + 0.3 * nb) / double(ns + nb);
  EXPECT_GT(std::abs(r.t1.mae - pooled), 1e-3);
  EXPECT_NEAR(r.qmap_mean(Metric::mae), (r.t1.mae + r.t2.mae + r.pd.mae) / 3.0, 1e-15);
}

TEST(AlphaSelection, ClearWinner) {
  std::vector<SweepRow> rows{{0.0, 10, 0.2, 30, 0.8}, {1e-2, 5, 0.1, 35, 0.9}, {1.0, 8, 0.15, 32, 0.85}};
  const AlphaChoice c = select_alpha(rows);
  EXPECT_EQ(c.index, 1u);
  EXPECT_EQ(c.votes[1], 4u);
  EXPECT_EQ(c.votes[0] + c.votes[2], 0u);
}

TEST(AlphaSelection, TwoTwoSplitGoesToMape) {
  // Row 0 wins MAPE and SSIM, row 1 wins MAE and PSNR.
  std::vector<SweepRow> rows{{0.1, 5, 0.2, 30, 0.9}, {1.0, 6, 0.1, 35, 0.8}};
  EXPECT_EQ(select_alpha(rows).index, 0u);
  // Row 1 wins MAPE and PSNR, row 0 wins MAE and SSIM.
  rows = {{0.1, 6, 0.1, 30, 0.9}, {1.0, 5, 0.2, 35, 0.8}};
  EXPECT_EQ(select_alpha(rows).index, 1u);
}

TEST(AlphaSelection, PluralityBeatsPriority) {
  // MAPE picks row 0, but rows 1 takes the three others.
  std::vector<SweepRow> rows{{0.0, 4, 0.3, 30, 0.7}, {1.0, 5, 0.1, 35, 0.9}, {2.0, 6, 0.2, 31, 0.8}};
  const AlphaChoice c = select_alpha(rows);
  EXPECT_EQ(c.index, 1u);
  EXPECT_EQ(c.best_by[0], 0u);
}

TEST(AlphaSelection, ThreeWaySplitWithOneTwo) {
  // Votes: row 0 MAPE, row 1 MAE, row 2 PSNR and SSIM.
  std::vector<SweepRow> rows{{0.0, 4, 0.3, 30, 0.7}, {1.0, 5, 0.1, 31, 0.8}, {2.0, 6, 0.2, 35, 0.9}};
  EXPECT_EQ(select_alpha(rows).index, 2u);
}

TEST(ExperimentConfig, JsonRoundTrip) {
  ExperimentConfig c = ExperimentConfig::desk(Pattern::epi);
  c.seed = 77;
  c.methods = {"svd-mrf", "nlei"};
  c.train["nlei"] = c.train_config(TrainMode::nlei);
  c.train["nlei"].alpha = 0.25;
  const ExperimentConfig d = ExperimentConfig::from_json(c.to_json());
  EXPECT_EQ(d.to_json().dump(), c.to_json().dump());
  EXPECT_EQ(d.hash(), c.hash());
  EXPECT_EQ(d.train_config(TrainMode::nlei).alpha, 0.25);
  EXPECT_NE(ExperimentConfig::desk(Pattern::spiral).hash(), ExperimentConfig::desk(Pattern::epi).hash());
}

TEST(ExperimentConfig, RejectsUnknownKeysAndModes) {
  nlohmann::json j = ExperimentConfig::desk(Pattern::spiral).to_json();
  j["learning_rate"] = 1.0;
  EXPECT_ANY_THROW(ExperimentConfig::from_json(j));
  ExperimentConfig c = ExperimentConfig::desk(Pattern::spiral);
  c.methods = {"svd-mrf", "magic"};
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c.methods = {"svd-mrf"};
  EXPECT_NO_THROW(c.validate());
}

TEST(ExperimentConfig, FullScaleSettings) {
  const ExperimentConfig c = ExperimentConfig::full_scale(Pattern::spiral);
  EXPECT_EQ(c.size, 224u);
  EXPECT_EQ(c.samples_per_frame(), 771u);
  EXPECT_EQ(c.n_train, 105u);
  EXPECT_EQ(c.n_test, 15u);
}
