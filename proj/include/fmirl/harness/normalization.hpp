#pragma once

// Per-dimension state standardization, frozen from the expert dataset.

#include <algorithm>
#include <cmath>

#include "fmirl/core/error.hpp"
#include "fmirl/nn/param_store.hpp"

namespace fmirl::harness {

using nn::Tensor;

inline constexpr double kMinStd = 1e-6;

struct NormStats {
  Tensor mean;  // 1 x d
  Tensor std;   // 1 x d, each >= kMinStd

  static NormStats identity(Eigen::Index d) { return NormStats{Tensor::Zero(1, d), Tensor::Ones(1, d)}; }

  static NormStats fit(const Tensor& states) {
    if (states.rows() == 0) throw DataError("normalization: no states to fit");
    NormStats n;
    n.mean = states.colwise().mean();
    const Tensor centered = states.rowwise() - n.mean.row(0);
    n.std = (centered.array().square().colwise().sum() / static_cast<double>(states.rows())).sqrt().max(kMinStd);
    return n;
  }

  Eigen::Index dim() const { return mean.cols(); }

  Tensor normalize(const Tensor& s) const {
    check(s);
    return Tensor((s.rowwise() - mean.row(0)).array().rowwise() / std.row(0).array());
  }
  Tensor denormalize(const Tensor& z) const {
    check(z);
    return Tensor((z.array().rowwise() * std.row(0).array()).rowwise() + mean.row(0).array());
  }

 private:
  void check(const Tensor& s) const {
    if (s.cols() != mean.cols()) throw ConfigError("normalization: state width mismatch");
  }
};

}  // namespace fmirl::harness
