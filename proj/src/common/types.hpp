#pragma once

#include <Eigen/Dense>

namespace xcod {

// Row-major so that a row of a batch (one token) or a decoder row (one
// feature) is contiguous, matching the on-disk layouts.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

enum class Side { kBase = 0, kDistilled = 1 };

inline const char* side_name(Side side) {
  return side == Side::kBase ? "base" : "distilled";
}

}  // namespace xcod
