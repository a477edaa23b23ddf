#include <gtest/gtest.h>

#include <Eigen/QR>
#include <cmath>
#include <filesystem>
#include <random>
#include <algorithm>
#include <array>
#include <map>
#include <set>

#include "qmrf/acquisition.hpp"

using namespace qmrf;

namespace {

std::shared_ptr<const TemporalBasis> random_basis(std::size_t T, std::size_t t, std::uint64_t seed) {
  std::mt19937_64 g(seed);
  std::normal_distribution<double> N;
  CMatrix G(T, t);
  for (Eigen::Index i = 0; i < G.size(); ++i) G.data()[i] = cd(N(g), N(g));
  Eigen::HouseholderQR<CMatrix> qr(G);
  return std::make_shared<const TemporalBasis>(
      TemporalBasis::from_matrix(qr.householderQ() * CMatrix::Identity(T, t)));
}

CMatrix random_c(Eigen::Index r, Eigen::Index c, std::mt19937_64& g) {
  std::normal_distribution<double> N;
  CMatrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = cd(N(g), N(g));
  return m;
}

double adjoint_error(const AcquisitionOperator& op, std::mt19937_64& g) {
  Tsmi x{random_c(static_cast<Eigen::Index>(op.H() * op.W()), static_cast<Eigen::Index>(op.t()), g), op.H(), op.W(), op.basis_hash()};
  KSpaceData y{random_c(static_cast<Eigen::Index>(op.m()), static_cast<Eigen::Index>(op.frames()), g), op.mask_hash()};
  const KSpaceData Ax = op.forward(x);
  const Tsmi Ahy = op.backproject(y);
  const cd lhs = (Ax.samples.conjugate().cwiseProduct(y.samples)).sum();
  const cd rhs = (x.data.conjugate().cwiseProduct(Ahy.data)).sum();
  const double scale = Ax.samples.norm() * y.samples.norm() + x.data.norm() * Ahy.data.norm();
  return std::abs(lhs - rhs) / scale;
}

}  // namespace

TEST(Masks, SpiralExactCountAtFullSize) {
  const auto m = make_spiral_mask(224, 224, 771, 12);
  m.validate();
  for (const auto& f : m.frames) EXPECT_EQ(f.size(), 771u);
  EXPECT_NEAR(compression_ratio(224, 224, 771), 65.0, 0.2);
  EXPECT_THROW(make_spiral_mask(8, 8, 65, 2), std::invalid_argument);
}

TEST(Masks, SpiralRotationPeriodicity) {
  const auto m = make_spiral_mask(64, 64, 63, 5, 90.0);
  EXPECT_EQ(m.frames[0], m.frames[4]);
  EXPECT_NE(m.frames[0], m.frames[1]);
}

TEST(Masks, SpiralUnionCoversLowFrequencyDisc) {
  const auto m = make_spiral_mask(64, 64, 63, 200);
  std::set<std::pair<int, int>> u;
  for (const auto& f : m.frames)
    for (const auto& k : f) u.insert({static_cast<int>(k.ky), static_cast<int>(k.kx)});
  int in = 0, hit = 0;
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      const double dy = y - 32, dx = x - 32;
      if (dy * dy + dx * dx > 8.0 * 8.0) continue;
      ++in;
      hit += u.count({y, x}) ? 1 : 0;
    }
  EXPECT_GE(static_cast<double>(hit) / in, 0.95);
}

TEST(Masks, EpiSingleLineAdvancesByStride) {
  const auto m = make_epi_mask(64, 64, 64, 10);
  const std::size_t stride = default_epi_stride(64);
  EXPECT_EQ(stride, 39u);
  for (std::size_t f = 0; f < 10; ++f) {
    ASSERT_EQ(m.frames[f].size(), 64u);
    const auto row = m.frames[f][0].ky;
    for (const auto& k : m.frames[f]) EXPECT_EQ(k.ky, row);
    if (f > 0) {
      EXPECT_EQ((m.frames[f - 1][0].ky + stride) % 64, row);
    }
  }
}

TEST(Masks, EpiCoverageAndFullSizeDecomposition) {
  const auto m = make_epi_mask(64, 64, 63, 200);
  std::set<std::uint32_t> rows;
  for (const auto& f : m.frames)
    for (const auto& k : f) rows.insert(k.ky);
  EXPECT_EQ(rows.size(), 64u);

  const auto p = make_epi_mask(224, 224, 771, 3);
  p.validate();
  std::map<std::uint32_t, int> per_row;
  for (const auto& k : p.frames[0]) ++per_row[k.ky];
  std::vector<int> counts;
  for (auto& [r, c] : per_row) counts.push_back(c);
  std::sort(counts.begin(), counts.end());
  EXPECT_EQ(counts, (std::vector<int>{99, 224, 224, 224}));
}

TEST(Masks, SaveLoadRoundTrip) {
  const auto m = make_spiral_mask(32, 32, 20, 6);
  const auto stem = std::filesystem::temp_directory_path() / "qmrf_mask_rt";
  save_mask(stem, m);
  const auto l = load_mask(stem);
  EXPECT_EQ(l.frames, m.frames);
  EXPECT_EQ(l.hash(), m.hash());
}

TEST(Operator, AdjointIdentityBothPatterns) {
  std::mt19937_64 g(1);
  for (auto pat : {Pattern::spiral, Pattern::epi}) {
    auto mask = std::make_shared<const SamplingMask>(make_mask(pat, 64, 64, 63, 200));
    AcquisitionOperator op(mask, random_basis(200, 10, 2));
    for (int i = 0; i < 100; ++i) EXPECT_LE(adjoint_error(op, g), 1e-10);
  }
}

TEST(Operator, AdjointIdentityOddSizes) {
  std::mt19937_64 g(3);
  for (auto [H, W, m] : std::vector<std::array<std::size_t, 3>>{{9, 12, 17}, {16, 7, 30}, {5, 5, 25}}) {
    for (auto pat : {Pattern::spiral, Pattern::epi}) {
      auto mask = std::make_shared<const SamplingMask>(make_mask(pat, H, W, m, 9));
      AcquisitionOperator op(mask, random_basis(9, 4, H));
      for (int i = 0; i < 10; ++i) EXPECT_LE(adjoint_error(op, g), 1e-10);
    }
  }
}

TEST(Operator, ZeroAndDelta) {
  auto mask = std::make_shared<const SamplingMask>(make_spiral_mask(16, 16, 20, 4));
  auto basis = std::make_shared<const TemporalBasis>(TemporalBasis::identity(4));
  AcquisitionOperator op(mask, basis);
  Tsmi x{CMatrix::Zero(256, 4), 16, 16, basis->hash()};
  EXPECT_EQ(op.forward(x).samples.norm(), 0.0);
  EXPECT_EQ(op.backproject(KSpaceData{CMatrix::Zero(20, 4), ""}).data.norm(), 0.0);
  x.data(8 * 16 + 8, 0) = 1.0;
  const auto y = op.forward(x);
  for (Eigen::Index s = 0; s < 20; ++s) EXPECT_NEAR(std::abs(y.samples(s, 0)), 1.0 / 16.0, 1e-15);
}

TEST(Operator, FullSamplingRoundTrip) {
  auto mask = std::make_shared<const SamplingMask>(make_spiral_mask(8, 8, 64, 5));
  auto basis = std::make_shared<const TemporalBasis>(TemporalBasis::identity(5));
  AcquisitionOperator op(mask, basis);
  std::mt19937_64 g(4);
  Tsmi x{random_c(64, 5, g), 8, 8, basis->hash()};
  EXPECT_LE((op.backproject(op.forward(x)).data - x.data).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Operator, NormAtMostOne) {
  auto mask = std::make_shared<const SamplingMask>(make_epi_mask(32, 32, 40, 50));
  AcquisitionOperator op(mask, random_basis(50, 6, 5));
  EXPECT_LE(operator_norm_estimate(op, 50, 1), 1.0 + 1e-8);
}

TEST(Operator, ShapeMismatchThrows) {
  auto mask = std::make_shared<const SamplingMask>(make_spiral_mask(16, 16, 20, 4));
  AcquisitionOperator op(mask, random_basis(4, 2, 1));
  EXPECT_THROW(op.forward(Tsmi{CMatrix::Zero(255, 2), 16, 16, ""}), std::invalid_argument);
  EXPECT_THROW(op.backproject(KSpaceData{CMatrix::Zero(20, 3), ""}), std::invalid_argument);
  EXPECT_THROW(AcquisitionOperator(mask, random_basis(5, 2, 1)), std::invalid_argument);
}

TEST(Operator, AutodiffGradientMatchesClosedForm) {
  // d/dx ||A x - y||² = 2 Aᴴ(Ax - y) in the real-pair layout.
  auto mask = std::make_shared<const SamplingMask>(make_spiral_mask(12, 12, 15, 20));
  AcquisitionOperator op(mask, random_basis(20, 4, 6));
  std::mt19937_64 g(7);
  const CMatrix xc = random_c(144, 4, g), yc = random_c(15, 20, g);
  auto L = op.as_linear();
  auto x = ad::Tensor::from({8, 12, 12}, tsmi_to_channels(xc, 12, 12), true);
  auto y = ad::Tensor::from({2, 20, 15}, kspace_to_channels(yc));
  auto r = ad::sub(ad::apply_linear(L, x), y);
  ad::sum(ad::mul(r, r)).backward();
  const CMatrix resid = op.forward(Tsmi{xc, 12, 12, ""}).samples - yc;
  const CMatrix expect = 2.0 * op.backproject(KSpaceData{resid, ""}).data;
  const auto ech = tsmi_to_channels(expect, 12, 12);
  double num = 0, den = 0;
  for (std::size_t i = 0; i < ech.size(); ++i) {
    num = std::max(num, std::abs(x.grad()[i] - ech[i]));
    den = std::max(den, std::abs(ech[i]));
  }
  EXPECT_LE(num / den, 1e-10);
}

TEST(Channels, RoundTrips) {
  std::mt19937_64 g(8);
  const CMatrix x = random_c(20, 3, g);
  EXPECT_TRUE(channels_to_tsmi(tsmi_to_channels(x, 4, 5), 3, 4, 5) == x);
  const CMatrix y = random_c(7, 6, g);
  EXPECT_TRUE(channels_to_kspace(kspace_to_channels(y), 7, 6) == y);
}
