#pragma once

#include <Eigen/Dense>

#include <array>
#include <string>

namespace fmirl::nn {

// Rank-2 dense tensor, rows = batch, cols = features. Scalars are 1x1.
using Tensor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

inline std::array<Eigen::Index, 2> shape_of(const Tensor& t) { return {t.rows(), t.cols()}; }

inline std::string shape_str(const Tensor& t) {
  return "[" + std::to_string(t.rows()) + "x" + std::to_string(t.cols()) + "]";
}

inline bool all_finite(const Tensor& t) { return t.allFinite(); }

inline Tensor scalar(double v) {
  Tensor t(1, 1);
  t(0, 0) = v;
  return t;
}

}  // namespace fmirl::nn
