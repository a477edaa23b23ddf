#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "qmrf/matching.hpp"

using namespace qmrf;

namespace {

struct Fixture {
  SequenceSchedule schedule = default_flip_schedule();
  std::shared_ptr<const TemporalBasis> basis;
  Dictionary dict;
  Fixture() {
    GridSpec spec;
    spec.n_t1 = 30;
    spec.n_t2 = 25;
    const auto full = build_dictionary(schedule, spec);
    basis = std::make_shared<const TemporalBasis>(fit_basis(full, 10));
    dict = compress_dictionary(full, *basis);
  }
};

const Fixture& fx() {
  static Fixture f;
  return f;
}

}  // namespace

TEST(Match, ExactScaledAtomsRecovered) {
  const auto& d = fx().dict;
  std::mt19937_64 g(1);
  std::normal_distribution<double> N;
  const std::size_t H = 20, W = 20;
  Tsmi x{CMatrix::Zero(H * W, 10), H, W, d.basis_hash};
  std::vector<std::uint8_t> mask(H * W, 1);
  std::vector<std::size_t> truth(H * W);
  std::vector<cd> scale(H * W);
  for (std::size_t v = 0; v < H * W; ++v) {
    truth[v] = std::uniform_int_distribution<std::size_t>(0, d.size() - 1)(g);
    scale[v] = cd(N(g), N(g));
    x.data.row(static_cast<Eigen::Index>(v)) = scale[v] * d.atoms.row(static_cast<Eigen::Index>(truth[v]));
  }
  const auto r = dictionary_match(x, d, mask, 37);
  for (std::size_t v = 0; v < H * W; ++v) {
    EXPECT_EQ(r.index[v], static_cast<std::int64_t>(truth[v]));
    EXPECT_EQ(r.t1_s[v], d.grid[truth[v]].t1_s);
    EXPECT_LE(std::abs(cd(r.pd_re[v], r.pd_im[v]) - scale[v]), 1e-10 * std::abs(scale[v]));
    EXPECT_NEAR(r.correlation[v], 1.0, 1e-12);
  }
}

TEST(Match, AgreesWithBruteForceOnRandomQueries) {
  const auto& d = fx().dict;
  std::mt19937_64 g(2);
  std::normal_distribution<double> N;
  Tsmi x{CMatrix::Zero(300, 10), 15, 20, ""};
  for (Eigen::Index i = 0; i < x.data.size(); ++i) x.data.data()[i] = cd(N(g), N(g));
  const auto r = dictionary_match(x, d, std::vector<std::uint8_t>(300, 1), 64);
  const auto r1 = dictionary_match(x, d, std::vector<std::uint8_t>(300, 1), 1);
  for (Eigen::Index v = 0; v < 300; ++v) {
    EXPECT_EQ(r.index[v], oracle::brute_force_argmax(x.data.row(v).transpose(), d));
    EXPECT_EQ(r.index[v], r1.index[v]);
    EXPECT_GE(r.correlation[v], 0.0);
    EXPECT_LE(r.correlation[v], 1.0);
  }
}

TEST(Match, ZeroQueryAndOutOfMask) {
  const auto& d = fx().dict;
  Tsmi x{CMatrix::Zero(4, 10), 2, 2, ""};
  x.data.row(3) = d.atoms.row(5);
  const auto r = dictionary_match(x, d, {1, 1, 0, 0});
  EXPECT_EQ(r.index[0], -1);
  EXPECT_EQ(r.t1_s[0], 0.0);
  EXPECT_EQ(r.t2_s[0], 0.0);
  EXPECT_EQ(r.pd_re[0], 0.0);
  EXPECT_EQ(r.correlation[0], 0.0);
  EXPECT_EQ(r.index[3], -1);  // masked out
  EXPECT_EQ(r.t1_s[3], 0.0);
}

TEST(Match, ScalingInvariance) {
  const auto& d = fx().dict;
  std::mt19937_64 g(3);
  std::normal_distribution<double> N;
  Tsmi x{CMatrix::Zero(50, 10), 5, 10, ""};
  for (Eigen::Index i = 0; i < x.data.size(); ++i) x.data.data()[i] = cd(N(g), N(g));
  const cd c(-0.7, 2.1);
  Tsmi y = x;
  y.data *= c;
  const std::vector<std::uint8_t> mask(50, 1);
  const auto a = dictionary_match(x, d, mask), b = dictionary_match(y, d, mask);
  for (std::size_t v = 0; v < 50; ++v) {
    EXPECT_EQ(a.index[v], b.index[v]);
    EXPECT_LE(std::abs(c * cd(a.pd_re[v], a.pd_im[v]) - cd(b.pd_re[v], b.pd_im[v])),
              1e-12 * std::abs(cd(b.pd_re[v], b.pd_im[v])));
  }
}

TEST(Match, BasisMismatchRejected) {
  const auto& d = fx().dict;
  EXPECT_THROW(dictionary_match(Tsmi{CMatrix::Zero(4, 10), 2, 2, "other"}, d, {1, 1, 1, 1}), BasisMismatch);
  EXPECT_THROW(dictionary_match(Tsmi{CMatrix::Zero(4, 9), 2, 2, ""}, d, {1, 1, 1, 1}), BasisMismatch);
}

TEST(SvdMrf, FullySampledSingleAtomPhantomExact) {
  // Identity basis over the full fingerprint, every k-space location sampled.
  const auto& s = fx().schedule;
  GridSpec spec;
  spec.n_t1 = 6;
  spec.n_t2 = 5;
  const auto full = build_dictionary(s, spec);
  auto id = std::make_shared<const TemporalBasis>(TemporalBasis::identity(200));
  const auto d = compress_dictionary(full, *id);
  const std::size_t H = 8, W = 8;
  auto mask = std::make_shared<const SamplingMask>(make_spiral_mask(H, W, H * W, 200));
  AcquisitionOperator op(mask, id);
  auto q = QMaps::zeros(H, W);
  for (std::size_t v = 0; v < H * W; ++v) {
    if ((v / W) < 2 || (v / W) > 5) continue;
    q.head_mask[v] = 1;
    q.t1_s[v] = d.grid[13].t1_s;
    q.t2_s[v] = d.grid[13].t2_s;
    q.pd_re[v] = 0.5;
    q.pd_im[v] = 0.25;
  }
  const auto x = synthesize_tsmi(q, make_epg_model(s, id), id->hash());
  const auto r = svd_mrf_reconstruct(op.forward(x), op, d, q.head_mask);
  for (std::size_t v = 0; v < H * W; ++v) {
    if (!q.head_mask[v]) continue;
    EXPECT_EQ(r.index[v], 13);
    EXPECT_NEAR(r.pd_re[v], 0.5, 1e-10);
    EXPECT_NEAR(r.pd_im[v], 0.25, 1e-10);
  }
  const auto z = svd_mrf_reconstruct(KSpaceData{CMatrix::Zero(H * W, 200), ""}, op, d, q.head_mask);
  for (std::size_t v = 0; v < H * W; ++v) EXPECT_EQ(z.t1_s[v], 0.0);
}

TEST(SvdMrf, UndersamplingIncreasesError) {
  const auto& f = fx();
  const std::size_t H = 32, W = 32;
  const auto q = make_brain_phantom(H, W, 11);
  const auto x = synthesize_tsmi(q, make_epg_model(f.schedule, f.basis), f.basis->hash());
  auto mape = [&](const MatchResult& r) {
    double s = 0;
    int n = 0;
    for (std::size_t v = 0; v < H * W; ++v)
      if (q.head_mask[v]) {
        s += std::abs(r.t1_s[v] - q.t1_s[v]) / q.t1_s[v];
        ++n;
      }
    return s / n;
  };
  auto full_mask = std::make_shared<const SamplingMask>(make_spiral_mask(H, W, H * W, 200));
  auto sub_mask = std::make_shared<const SamplingMask>(make_spiral_mask(H, W, H * W / 65, 200));
  AcquisitionOperator full(full_mask, f.basis), sub(sub_mask, f.basis);
  const double e_full = mape(svd_mrf_reconstruct(full.forward(x), full, f.dict, q.head_mask));
  const double e_sub = mape(svd_mrf_reconstruct(sub.forward(x), sub, f.dict, q.head_mask));
  EXPECT_GT(e_sub, 0.0);
  EXPECT_GT(e_sub, e_full);
}
