#pragma once

#include <cmath>
#include <string>
#include <unordered_map>

#include "fmirl/core/error.hpp"
#include "fmirl/nn/param_store.hpp"

namespace fmirl::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam. Moments are keyed by parameter name, created lazily
/// with the parameter's shape.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  long step_count() const { return step_; }

  /// Applies one update and zeroes the gradients. Throws NumericalError
  /// without touching parameters if any gradient is non-finite.
  void step(ParamStore& params) {
    for (const auto& p : params) {
      if (!p.grad.allFinite()) throw NumericalError("adam: non-finite gradient in '" + p.name + "'");
    }
    ++step_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (auto& p : params) {
      auto [it, fresh] = moments_.try_emplace(p.name);
      Moments& m = it->second;
      if (fresh || m.first.rows() != p.value.rows() || m.first.cols() != p.value.cols()) {
        m.first = Tensor::Zero(p.value.rows(), p.value.cols());
        m.second = Tensor::Zero(p.value.rows(), p.value.cols());
      }
      m.first = cfg_.beta1 * m.first + (1.0 - cfg_.beta1) * p.grad;
      m.second = (cfg_.beta2 * m.second.array() + (1.0 - cfg_.beta2) * p.grad.array().square()).matrix();
      p.value.array() -= cfg_.lr * (m.first.array() / c1) / ((m.second.array() / c2).sqrt() + cfg_.eps);
      p.grad.setZero();
    }
  }

 private:
  struct Moments {
    Tensor first;
    Tensor second;
  };
  AdamConfig cfg_;
  long step_ = 0;
  std::unordered_map<std::string, Moments> moments_;
};

}  // namespace fmirl::nn
