#pragma once

#include <complex>

#include <Eigen/Core>

namespace qmrf {

using cd = std::complex<double>;

/// Row-major complex matrix: rows are voxels/atoms/samples, columns are time or subspace index.
using CMatrix = Eigen::Matrix<cd, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CVector = Eigen::Matrix<cd, Eigen::Dynamic, 1>;
using RMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace qmrf
