#pragma once

#include <Eigen/Dense>

#include <cstdint>

namespace histex {

/// Row-major dense matrix; rows are samples (spots, patches, batch items).
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

using MatrixMap = Eigen::Map<Matrix>;
using ConstMatrixMap = Eigen::Map<const Matrix>;

using Index = std::ptrdiff_t;

}  // namespace histex
