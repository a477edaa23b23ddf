#pragma once

#include <filesystem>
#include <string>

#include "qmrf/dictionary.hpp"
#include "qmrf/types.hpp"

namespace qmrf {

/// T x t matrix with orthonormal columns spanning the dominant temporal subspace.
struct TemporalBasis {
  CMatrix V;
  Eigen::VectorXd singular_values;  // min(N, T) values, descending
  std::size_t rank = 0;             // numerical rank of the fitted dictionary
  bool rank_deficient = false;      // true when rank < t; trailing columns are an orthonormal completion

  std::size_t length() const { return static_cast<std::size_t>(V.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(V.cols()); }
  std::string hash() const;

  /// Wraps an orthonormal-column matrix; throws if VᴴV deviates from I by more than `tol`.
  static TemporalBasis from_matrix(CMatrix V, double tol = 1e-10);
  static TemporalBasis identity(std::size_t T);
};

/// Top-t right singular vectors of the N x T atom matrix, 3 < t < T.
///
/// Computed from the eigendecomposition of the T x T Gram matrix AᴴA. This
/// squares the condition number, so singular values below ~1e-8·σ_max lose
/// relative accuracy; the retained subspace is unaffected at the sizes used here.
/// Columns are phase-normalised so their largest-magnitude entry is real positive.
TemporalBasis fit_basis(const Dictionary& dict, std::size_t t);

/// x·V : rows of length T to rows of length t.
CMatrix compress(const CMatrix& x, const TemporalBasis& basis);
/// z·Vᴴ : rows of length t back to length T.
CMatrix decompress(const CMatrix& z, const TemporalBasis& basis);
CVector compress(const CVector& x, const TemporalBasis& basis);

/// Sum of squared singular values beyond the first t.
double tail_energy(const TemporalBasis& basis, std::size_t t);

Dictionary compress_dictionary(const Dictionary& dict, const TemporalBasis& basis);

/// Same binary + JSON convention as the dictionary file.
void save_basis(const std::filesystem::path& stem, const TemporalBasis& basis);
TemporalBasis load_basis(const std::filesystem::path& stem);

}  // namespace qmrf
