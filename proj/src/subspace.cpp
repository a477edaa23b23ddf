#include "qmrf/subspace.hpp"

#include <Eigen/Eigenvalues>

#include "qmrf/io.hpp"

namespace qmrf {

std::string TemporalBasis::hash() const {
  io::Hasher h;
  h.pod(static_cast<std::uint64_t>(V.rows())).pod(static_cast<std::uint64_t>(V.cols()));
  h.bytes(V.data(), sizeof(cd) * static_cast<std::size_t>(V.size()));
  return h.hex();
}

TemporalBasis TemporalBasis::from_matrix(CMatrix V, double tol) {
  const Eigen::MatrixXcd gram = V.adjoint() * V;
  const double dev = (gram - Eigen::MatrixXcd::Identity(V.cols(), V.cols())).cwiseAbs().maxCoeff();
  if (dev > tol)
    throw std::invalid_argument("TemporalBasis: columns not orthonormal (max |VᴴV - I| = " +
                                std::to_string(dev) + ")");
  TemporalBasis b;
  b.rank = static_cast<std::size_t>(V.cols());
  b.V = std::move(V);
  return b;
}

TemporalBasis TemporalBasis::identity(std::size_t T) {
  const auto n = static_cast<Eigen::Index>(T);
  return from_matrix(CMatrix::Identity(n, n));
}

TemporalBasis fit_basis(const Dictionary& dict, std::size_t t) {
  const std::size_t T = dict.length();
  if (!(t > 3 && t < T))
    throw std::invalid_argument("fit_basis: need 3 < t < T, got t=" + std::to_string(t) +
                                ", T=" + std::to_string(T));
  const Eigen::MatrixXcd gram = dict.atoms.adjoint() * dict.atoms;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(gram);
  if (es.info() != Eigen::Success) throw std::runtime_error("fit_basis: eigendecomposition failed");
  const auto& evals = es.eigenvalues();  // ascending
  const auto& evecs = es.eigenvectors();
  const auto Ti = static_cast<Eigen::Index>(T);

  TemporalBasis b;
  const Eigen::Index nsv = std::min<Eigen::Index>(dict.atoms.rows(), Ti);
  b.singular_values.resize(nsv);
  for (Eigen::Index i = 0; i < nsv; ++i)
    b.singular_values[i] = std::sqrt(std::max(0.0, evals[Ti - 1 - i]));
  const double smax = b.singular_values.size() ? b.singular_values[0] : 0.0;
  b.rank = 0;
  for (Eigen::Index i = 0; i < nsv; ++i)
    if (b.singular_values[i] > 1e-6 * smax) ++b.rank;
  b.rank_deficient = b.rank < t;

  b.V.resize(Ti, static_cast<Eigen::Index>(t));
  for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(t); ++j) {
    CVector col = evecs.col(Ti - 1 - j);
    Eigen::Index arg = 0;
    double best = -1.0;
    for (Eigen::Index i = 0; i < Ti; ++i)
      if (std::abs(col[i]) > best) {
        best = std::abs(col[i]);
        arg = i;
      }
    col *= std::conj(col[arg]) / std::abs(col[arg]);
    col[arg] = std::abs(col[arg]);
    b.V.col(j) = col;
  }
  return b;
}

CMatrix compress(const CMatrix& x, const TemporalBasis& basis) {
  if (static_cast<std::size_t>(x.cols()) != basis.length())
    throw std::invalid_argument("compress: input has " + std::to_string(x.cols()) +
                                " columns, basis length is " + std::to_string(basis.length()));
  return x * basis.V;
}

CMatrix decompress(const CMatrix& z, const TemporalBasis& basis) {
  if (static_cast<std::size_t>(z.cols()) != basis.dim())
    throw std::invalid_argument("decompress: input has " + std::to_string(z.cols()) +
                                " columns, basis dimension is " + std::to_string(basis.dim()));
  return z * basis.V.adjoint();
}

CVector compress(const CVector& x, const TemporalBasis& basis) {
  if (static_cast<std::size_t>(x.size()) != basis.length())
    throw std::invalid_argument("compress: series length " + std::to_string(x.size()) +
                                " does not match basis length " + std::to_string(basis.length()));
  return basis.V.transpose() * x;
}

double tail_energy(const TemporalBasis& basis, std::size_t t) {
  double e = 0.0;
  for (Eigen::Index i = static_cast<Eigen::Index>(t); i < basis.singular_values.size(); ++i)
    e += basis.singular_values[i] * basis.singular_values[i];
  return e;
}

Dictionary compress_dictionary(const Dictionary& dict, const TemporalBasis& basis) {
  if (dict.compressed()) throw std::invalid_argument("compress_dictionary: already compressed");
  return Dictionary::from_atoms(compress(dict.atoms, basis), dict.grid, dict.spec,
                                dict.schedule_hash, basis.hash());
}

void save_basis(const std::filesystem::path& stem, const TemporalBasis& basis) {
  auto bin = stem, man = stem;
  bin += ".bin";
  man += ".json";
  io::write_c128(bin, std::span<const cd>(basis.V.data(), static_cast<std::size_t>(basis.V.size())));
  std::vector<double> sv(basis.singular_values.data(),
                         basis.singular_values.data() + basis.singular_values.size());
  io::write_json(man, {{"format", "qmrf-basis-v1"},
                       {"dtype", "complex-as-float64-pairs-le"},
                       {"layout", "row-major T x t"},
                       {"T", basis.length()},
                       {"t", basis.dim()},
                       {"rank", basis.rank},
                       {"rank_deficient", basis.rank_deficient},
                       {"singular_values", sv},
                       {"hash", basis.hash()}});
}

TemporalBasis load_basis(const std::filesystem::path& stem) {
  auto bin = stem, man = stem;
  bin += ".bin";
  man += ".json";
  const auto j = io::read_json(man);
  const auto T = j.at("T").get<std::size_t>(), t = j.at("t").get<std::size_t>();
  const auto flat = io::read_c128(bin);
  if (flat.size() != T * t) throw io::FormatError(bin.string() + ": size does not match T x t");
  CMatrix V(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(t));
  std::copy(flat.begin(), flat.end(), V.data());
  auto b = TemporalBasis::from_matrix(std::move(V), 1e-9);
  const auto sv = j.at("singular_values").get<std::vector<double>>();
  b.singular_values = Eigen::Map<const Eigen::VectorXd>(sv.data(), static_cast<Eigen::Index>(sv.size()));
  b.rank = j.at("rank");
  b.rank_deficient = j.at("rank_deficient");
  if (b.hash() != j.at("hash").get<std::string>())
    throw io::FormatError(man.string() + ": basis hash mismatch");
  return b;
}

}  // namespace qmrf
