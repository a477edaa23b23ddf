#include <gtest/gtest.h>

#include <Eigen/SVD>
#include <filesystem>
#include <random>

#include "qmrf/subspace.hpp"

using namespace qmrf;

namespace {

CMatrix random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  std::mt19937_64 g(seed);
  std::normal_distribution<double> N;
  CMatrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = cd(N(g), N(g));
  return m;
}

Dictionary dict_from(const CMatrix& a) {
  std::vector<GridPoint> g(static_cast<std::size_t>(a.rows()), GridPoint{1.0, 0.1});
  return Dictionary::from_atoms(a, g, GridSpec{}, "test");
}

}  // namespace

TEST(FitBasis, ProjectionErrorEqualsTailEnergyVsFullSvd) {
  const CMatrix A = random_matrix(100, 40, 1);
  const auto d = dict_from(A);
  Eigen::JacobiSVD<Eigen::MatrixXcd> svd(Eigen::MatrixXcd(A), Eigen::ComputeThinV);
  const Eigen::VectorXd s = svd.singularValues();
  for (std::size_t t : {4u, 10u, 25u}) {
    const auto b = fit_basis(d, t);
    EXPECT_EQ(b.dim(), t);
    const double err = (A - decompress(compress(A, b), b)).squaredNorm();
    const double tail = s.tail(40 - static_cast<Eigen::Index>(t)).squaredNorm();
    EXPECT_NEAR(err / tail, 1.0, 1e-8);
    EXPECT_NEAR(tail_energy(b, t) / tail, 1.0, 1e-8);
    const Eigen::MatrixXcd I = b.V.adjoint() * b.V;
    EXPECT_LE((I - Eigen::MatrixXcd::Identity(I.rows(), I.cols())).cwiseAbs().maxCoeff(), 1e-10);
    for (Eigen::Index i = 0; i < s.size(); ++i) EXPECT_NEAR(b.singular_values[i], s[i], 1e-8 * s[0]);
  }
}

TEST(FitBasis, RangeChecks) {
  const auto d = dict_from(random_matrix(50, 20, 2));
  EXPECT_THROW(fit_basis(d, 3), std::invalid_argument);
  EXPECT_THROW(fit_basis(d, 20), std::invalid_argument);
  EXPECT_NO_THROW(fit_basis(d, 4));
}

TEST(FitBasis, RankDeficientCompletedAndFlagged) {
  const auto d = dict_from(random_matrix(1, 20, 3));
  const auto b = fit_basis(d, 10);
  EXPECT_TRUE(b.rank_deficient);
  EXPECT_EQ(b.rank, 1u);
  const Eigen::MatrixXcd I = b.V.adjoint() * b.V;
  EXPECT_LE((I - Eigen::MatrixXcd::Identity(10, 10)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(FitBasis, PhaseConvention) {
  const auto b = fit_basis(dict_from(random_matrix(60, 30, 4)), 8);
  for (Eigen::Index j = 0; j < b.V.cols(); ++j) {
    Eigen::Index k;
    b.V.col(j).cwiseAbs().maxCoeff(&k);
    EXPECT_EQ(b.V(k, j).imag(), 0.0);
    EXPECT_GT(b.V(k, j).real(), 0.0);
  }
}

TEST(FitBasis, RetainedEnergyMonotoneInT) {
  const CMatrix A = random_matrix(80, 30, 5);
  const auto d = dict_from(A);
  double prev = -1.0;
  for (std::size_t t = 4; t < 30; ++t) {
    const auto b = fit_basis(d, t);
    const double kept = compress(A, b).squaredNorm();
    EXPECT_GE(kept, prev);
    prev = kept;
  }
}

TEST(Compress, IdentitiesAndContraction) {
  const auto b = fit_basis(dict_from(random_matrix(60, 30, 6)), 8);
  const CMatrix z = random_matrix(5, 8, 7);
  EXPECT_LE((compress(decompress(z, b), b) - z).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(compress(CMatrix(CMatrix::Zero(3, 30)), b).norm(), 0.0);
  const CMatrix a = random_matrix(20, 30, 8);
  const CMatrix p1 = decompress(compress(a, b), b);
  const CMatrix p2 = decompress(compress(p1, b), b);
  EXPECT_LE((p1 - p2).cwiseAbs().maxCoeff(), 1e-12);
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const CMatrix row = a.row(i);
    EXPECT_LT(compress(row, b).norm(), row.norm());
    const CMatrix inspan = decompress(compress(row, b), b);
    EXPECT_NEAR(compress(inspan, b).norm(), inspan.norm(), 1e-12);
  }
  EXPECT_THROW(compress(CMatrix(CMatrix::Zero(2, 29)), b), std::invalid_argument);
}

TEST(Basis, SaveLoadAndIdentity) {
  const auto b = fit_basis(dict_from(random_matrix(40, 20, 9)), 6);
  const auto stem = std::filesystem::temp_directory_path() / "qmrf_basis_rt";
  save_basis(stem, b);
  const auto c = load_basis(stem);
  EXPECT_TRUE(c.V == b.V);
  EXPECT_EQ(c.hash(), b.hash());
  const auto id = TemporalBasis::identity(7);
  EXPECT_TRUE(id.V == CMatrix::Identity(7, 7));
}
