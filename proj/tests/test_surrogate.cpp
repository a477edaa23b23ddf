#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <algorithm>
#include <numeric>
#include <random>

#include "qmrf/gradcheck.hpp"
#include "qmrf/subspace.hpp"
#include "qmrf/surrogate.hpp"

using namespace qmrf;
using ad::Tensor;

namespace {

Tensor random_qmaps(std::size_t N, std::size_t H, std::size_t W, std::uint64_t seed, bool grad = false) {
  std::mt19937_64 g(seed);
  std::uniform_real_distribution<double> lt1(std::log(0.05), std::log(4.0)), lt2(std::log(0.01), std::log(1.0));
  std::normal_distribution<double> n;
  const std::size_t HW = H * W;
  std::vector<double> v(N * 4 * HW);
  for (std::size_t b = 0; b < N; ++b)
    for (std::size_t p = 0; p < HW; ++p) {
      double* q = v.data() + b * 4 * HW + p;
      q[0] = std::exp(lt1(g));
      q[HW] = std::exp(lt2(g));
      q[2 * HW] = n(g);
      q[3 * HW] = n(g);
    }
  return Tensor::from({N, 4, H, W}, std::move(v), grad);
}

}  // namespace

TEST(Surrogate, ParameterCountMatchesArchitecture) {
  const std::size_t t = 10, h = 300;
  BlochSurrogate b(t, 1);
  EXPECT_EQ(b.parameter_count(), 2 * h + h + h * h + h + h * 2 * t + 2 * t);
  EXPECT_EQ(b.parameter_count(), 97220u);
}

TEST(Surrogate, OutputShape) {
  BlochSurrogate b(10, 1, 16);
  const auto x = b.apply(random_qmaps(2, 5, 7, 1));
  EXPECT_EQ(x.shape(), (ad::Shape{2, 20, 5, 7}));
}

TEST(Surrogate, MemorisesSingleAtom) {
  CMatrix atom(1, 4);
  atom << cd(0.3, -0.1), cd(-0.2, 0.05), cd(0.1, 0.2), cd(0.02, -0.04);
  GridSpec spec;
  const auto d = Dictionary::from_atoms(atom, {{0.8, 0.07}}, spec, "s", "b");
  BlochSurrogate b(4, 3, 32);
  SurrogateConfig cfg;
  cfg.epochs = 1500;
  cfg.lr = 1e-3;
  const auto fit = train_surrogate(b, d, cfg);
  EXPECT_LE(fit.final_mse, 1e-8);
  EXPECT_EQ(fit.loss_history.size(), 1500u);
}

TEST(Surrogate, ExactlyLinearInComplexPd) {
  BlochSurrogate b(10, 2, 24);
  const std::size_t HW = 6 * 6;
  const Tensor q = random_qmaps(1, 6, 6, 4);
  const cd c(0.7, -1.3);
  std::vector<double> unit(q.values().begin(), q.values().end()), scaled = unit;
  for (std::size_t p = 0; p < HW; ++p) {
    unit[2 * HW + p] = 1.0;
    unit[3 * HW + p] = 0.0;
    const cd pd(scaled[2 * HW + p], scaled[3 * HW + p]);
    const cd s = c * pd;
    scaled[2 * HW + p] = s.real();
    scaled[3 * HW + p] = s.imag();
  }
  const Tensor tu = b.apply(Tensor::from({1, 4, 6, 6}, unit)), tx = b.apply(q),
               txs = b.apply(Tensor::from({1, 4, 6, 6}, scaled));
  const auto u = tu.values(), x = tx.values(), xs = txs.values();
  for (std::size_t k = 0; k < 10; ++k)
    for (std::size_t p = 0; p < HW; ++p) {
      const std::size_t re = k * HW + p, im = (10 + k) * HW + p;
      const cd pd(q.values()[2 * HW + p], q.values()[3 * HW + p]);
      const cd expect = pd * cd(u[re], u[im]);
      EXPECT_NEAR(x[re], expect.real(), 1e-15 * (1 + std::abs(expect)));
      EXPECT_NEAR(x[im], expect.imag(), 1e-15 * (1 + std::abs(expect)));
      const cd expect_s = c * pd * cd(u[re], u[im]);
      EXPECT_NEAR(xs[re], expect_s.real(), 2e-15 * (1 + std::abs(expect_s)));
      EXPECT_NEAR(xs[im], expect_s.imag(), 2e-15 * (1 + std::abs(expect_s)));
    }
}

TEST(Surrogate, ZeroPdGivesZeroTsmi) {
  BlochSurrogate b(10, 5, 24);
  Tensor q = random_qmaps(2, 4, 4, 6);
  auto v = q.mutable_values();
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t i = 0; i < 32; ++i) v[n * 64 + 32 + i] = 0.0;
  const Tensor x = b.apply(q);
  for (double v2 : x.values()) EXPECT_EQ(v2, 0.0);
}

TEST(Surrogate, MultiplyingPdByIRotatesChannelPairs) {
  BlochSurrogate b(10, 7, 24);
  const std::size_t HW = 25;
  const Tensor q = random_qmaps(1, 5, 5, 8);
  std::vector<double> r(q.values().begin(), q.values().end());
  for (std::size_t p = 0; p < HW; ++p) {
    r[2 * HW + p] = -q.values()[3 * HW + p];
    r[3 * HW + p] = q.values()[2 * HW + p];
  }
  const Tensor tx = b.apply(q), ty = b.apply(Tensor::from({1, 4, 5, 5}, r));
  const auto x = tx.values(), y = ty.values();
  for (std::size_t k = 0; k < 10; ++k)
    for (std::size_t p = 0; p < HW; ++p) {
      EXPECT_EQ(y[k * HW + p], -x[(10 + k) * HW + p]);
      EXPECT_EQ(y[(10 + k) * HW + p], x[k * HW + p]);
    }
}

TEST(Surrogate, GradientOfSquaredNormMatchesFiniteDifferences) {
  BlochSurrogate b(3, 9, 12);
  b.freeze();
  const auto r = ad::gradcheck(
      "surrogate", [&](const std::vector<Tensor>& in) { return ad::sum(ad::mul(b.apply(in[0]), b.apply(in[0]))); },
      {random_qmaps(1, 3, 3, 10, true)}, 1e-6);
  EXPECT_EQ(r.n_checked, 36u);
  EXPECT_LE(r.max_rel_err, 1e-4);
}

TEST(Surrogate, ApplyAtMatchesMaskedApplyAndGradients) {
  BlochSurrogate b(3, 11, 12);
  b.freeze();
  const std::vector<std::size_t> idx{0, 3, 4, 8, 9, 17};
  const Tensor q = random_qmaps(2, 3, 3, 12);
  const Tensor tf = b.apply(q), tp = b.apply_at(q, idx);
  const auto full = tf.values(), part = tp.values();
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 6; ++c)
      for (std::size_t p = 0; p < 9; ++p) {
        const bool in = std::find(idx.begin(), idx.end(), n * 9 + p) != idx.end();
        const std::size_t i = (n * 6 + c) * 9 + p;
        if (in)
          EXPECT_NEAR(part[i], full[i], 1e-14);
        else
          EXPECT_EQ(part[i], 0.0);
      }
  const auto r = ad::gradcheck(
      "surrogate_at", [&](const std::vector<Tensor>& in) { return b.apply_at(in[0], idx); },
      {random_qmaps(2, 3, 3, 13, true)}, 1e-6);
  EXPECT_LE(r.max_rel_err, 1e-4);
}

TEST(Surrogate, VoxelLocality) {
  BlochSurrogate b(4, 13, 16);
  const std::size_t H = 4, W = 4, HW = 16;
  const Tensor q = random_qmaps(1, H, W, 14);
  std::vector<std::size_t> perm(HW);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(15));
  const Tensor ta = ad::permute_pixels(b.apply(q), perm), tc = b.apply(ad::permute_pixels(q, perm));
  const auto a = ta.values(), c = tc.values();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], c[i]);
}

TEST(Surrogate, FrozenReceivesNoParameterGradients) {
  BlochSurrogate b(4, 17, 16);
  b.freeze();
  const std::string before = b.hash();
  Tensor q = random_qmaps(1, 3, 3, 18, true);
  ad::sum(b.apply(q)).backward();
  EXPECT_TRUE(q.has_grad());
  for (const auto& p : b.parameters()) EXPECT_FALSE(p.tensor.has_grad()) << p.name;
  EXPECT_EQ(b.hash(), before);
  GridSpec spec;
  const auto d = Dictionary::from_atoms(CMatrix::Ones(1, 4), {{1.0, 0.1}}, spec, "s", "b");
  EXPECT_THROW(train_surrogate(b, d, SurrogateConfig{}), std::logic_error);
}

TEST(Surrogate, RejectsWrongChannelCount) {
  BlochSurrogate b(4, 1, 8);
  EXPECT_THROW(b.apply(Tensor::zeros({1, 3, 2, 2})), ad::ShapeError);
}

TEST(Surrogate, FitsSmallDictionaryAndGeneralises) {
  const auto schedule = default_flip_schedule();
  GridSpec spec;
  spec.n_t1 = 25;
  spec.n_t2 = 20;
  const auto full = build_dictionary(schedule, spec);
  auto basis = std::make_shared<const TemporalBasis>(fit_basis(full, 10));
  const auto d = compress_dictionary(full, *basis);
  BlochSurrogate b(10, 1, 64);
  SurrogateConfig cfg;
  cfg.epochs = 1500;
  const auto fit = train_surrogate(b, d, cfg);
  EXPECT_LT(fit.loss_history.back(), fit.loss_history.front() / 50);
  const auto probes = random_probes(spec, 100, 3);
  const double err = surrogate_rel_rms(b, probes, make_epg_model(schedule, basis));
  EXPECT_LT(err, 0.1);
}

TEST(Surrogate, CheckpointRoundTrip) {
  BlochSurrogate b(10, 21, 20);
  b.basis_hash = "abc";
  b.freeze();
  const auto dir = std::filesystem::temp_directory_path() / "qmrf_test_surrogate";
  std::filesystem::create_directories(dir);
  save_surrogate(dir / "b", b);
  const auto c = load_surrogate(dir / "b");
  EXPECT_EQ(c.hash(), b.hash());
  EXPECT_EQ(c.basis_hash, "abc");
  EXPECT_TRUE(c.frozen());
  EXPECT_EQ(c.t(), 10u);
  EXPECT_EQ(c.hidden(), 20u);
  std::filesystem::remove_all(dir);
}
