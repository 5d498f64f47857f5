#pragma once

#include <cmath>
#include <deque>
#include <string>
#include <unordered_map>
#include <vector>

#include "fmirl/core/error.hpp"
#include "fmirl/nn/tensor.hpp"

namespace fmirl::nn {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;  // same shape as value
};

/// Named parameters with one gradient slot each. Insertion order is kept so
/// that iteration (and therefore optimizer updates and checkpoints) is stable.
class ParamStore {
 public:
  Parameter& add(const std::string& name, Tensor init) {
    if (index_.count(name)) throw ConfigError("duplicate parameter '" + name + "'");
    Tensor zero = Tensor::Zero(init.rows(), init.cols());
    params_.push_back(Parameter{name, std::move(init), std::move(zero)});
    index_.emplace(name, params_.size() - 1);
    return params_.back();
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Parameter& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return params_[it->second];
  }
  const Parameter& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return params_[it->second];
  }

  std::size_t size() const { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.grad.setZero();
  }

  double grad_norm() const {
    double sq = 0.0;
    for (const auto& p : params_) sq += p.grad.squaredNorm();
    return std::sqrt(sq);
  }

  /// Rescales all gradients so their joint L2 norm is at most max_norm.
  double clip_grad_norm(double max_norm) {
    const double norm = grad_norm();
    if (norm > max_norm && std::isfinite(norm)) {
      const double s = max_norm / (norm + 1e-12);
      for (auto& p : params_) p.grad *= s;
    }
    return norm;
  }

  // Flattened view used by finite-difference checks.
  std::vector<double> flat_values() const {
    std::vector<double> out;
    out.reserve(numel());
    for (const auto& p : params_)
      for (Eigen::Index i = 0; i < p.value.size(); ++i) out.push_back(p.value.data()[i]);
    return out;
  }
  std::vector<double> flat_grads() const {
    std::vector<double> out;
    out.reserve(numel());
    for (const auto& p : params_)
      for (Eigen::Index i = 0; i < p.grad.size(); ++i) out.push_back(p.grad.data()[i]);
    return out;
  }
  double& flat_value(std::size_t k) {
    for (auto& p : params_) {
      if (k < static_cast<std::size_t>(p.value.size())) return p.value.data()[k];
      k -= static_cast<std::size_t>(p.value.size());
    }
    throw UsageError("flat parameter index out of range");
  }

 private:
  std::deque<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace fmirl::nn
