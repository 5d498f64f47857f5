#pragma once

// Tanh-squashed Gaussian MLP policy with a separate value head.
//
//   u ~ N(mu(s), diag(exp(log_std)^2)),  a = bound * tanh(u)
//   log pi(a|s) = log N(u; mu, sigma) - sum_k log(bound * (1 - tanh(u_k)^2))

#include <cmath>
#include <numbers>

#include "fmirl/core/error.hpp"
#include "fmirl/core/random.hpp"
#include "fmirl/nn/autodiff.hpp"
#include "fmirl/nn/mlp.hpp"

namespace fmirl::agent {

using nn::Tensor;
using nn::Var;
using nn::Vector;

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;

struct PolicyShape {
  int state_dim = 4;
  int action_dim = 2;
  double action_bound = 1.0;
  int hidden_units = 64;
  int hidden_layers = 2;
  double init_log_std = -0.5;
};

class StudentPolicy {
 public:
  StudentPolicy(PolicyShape shape, Rng& rng) : shape_(shape) {
    std::vector<Eigen::Index> pi{shape.state_dim}, vf{shape.state_dim};
    for (int i = 0; i < shape.hidden_layers; ++i) {
      pi.push_back(shape.hidden_units);
      vf.push_back(shape.hidden_units);
    }
    pi.push_back(shape.action_dim);
    vf.push_back(1);
    nn::mlp_init(params_, "pi", pi, rng, 0.01);
    nn::mlp_init(params_, "vf", vf, rng, 1.0);
    params_.add("log_std", Tensor::Constant(1, shape.action_dim, shape.init_log_std));
  }

  const PolicyShape& shape() const { return shape_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  Tensor pre_squash_mean(const Tensor& states) const {
    return nn::mlp_forward(params_, "pi", states, nn::Activation::tanh);
  }
  Tensor mean_action(const Tensor& states) const {
    return Tensor(shape_.action_bound * pre_squash_mean(states).array().tanh());
  }
  Vector value(const Tensor& states) const { return nn::mlp_forward(params_, "vf", states, nn::Activation::tanh).col(0); }
  Tensor log_std() const {
    return Tensor(params_.at("log_std").value.array().max(kLogStdMin).min(kLogStdMax));
  }

  // Recorded heads.
  Var pre_squash_mean(nn::Tape& tape, Var states) {
    return nn::mlp_forward(tape, params_, "pi", states, nn::Activation::tanh);
  }
  Var mean_action(nn::Tape& tape, Var states) {
    return nn::scale(nn::tanh(pre_squash_mean(tape, states)), shape_.action_bound);
  }
  Var value(nn::Tape& tape, Var states) { return nn::mlp_forward(tape, params_, "vf", states, nn::Activation::tanh); }
  Var log_std(nn::Tape& tape) { return nn::clamp(tape.param(params_.at("log_std")), kLogStdMin, kLogStdMax); }

 private:
  PolicyShape shape_;
  nn::ParamStore params_;
};

/// log(bound * (1 - tanh(u)^2)) computed stably as log(bound) + 2 (log 2 - u - softplus(-2u)).
inline Tensor squash_log_jacobian(const Tensor& u, double bound) {
  const Tensor sp = nn::softplus_value(Tensor(-2.0 * u.array()));
  return Tensor(std::log(bound) + 2.0 * (std::numbers::ln2 - u.array() - sp.array()));
}

/// Per-row Gaussian log density of u (no squashing term).
inline Vector gaussian_logp(const Tensor& u, const Tensor& mu, const Tensor& log_std) {
  const Eigen::ArrayXXd z = (u - mu).array().rowwise() / log_std.row(0).array().exp();
  const double log_norm = log_std.sum() + 0.5 * static_cast<double>(u.cols()) * std::log(2.0 * std::numbers::pi);
  return (-0.5 * z.square().rowwise().sum() - log_norm).matrix();
}

struct ActOutput {
  Tensor actions;     // squashed, within bounds
  Tensor pre_squash;  // Gaussian sample u
  Vector logp;        // includes the squashing correction
  Vector value;
};

inline ActOutput act(const StudentPolicy& policy, const Tensor& states, Rng& rng) {
  const auto& sh = policy.shape();
  if (states.cols() != sh.state_dim) throw ConfigError("act: state width mismatch");
  const Tensor mu = policy.pre_squash_mean(states);
  const Tensor ls = policy.log_std();
  Tensor u(mu.rows(), mu.cols());
  for (Eigen::Index i = 0; i < u.rows(); ++i)
    for (Eigen::Index k = 0; k < u.cols(); ++k) u(i, k) = mu(i, k) + std::exp(ls(0, k)) * rng.normal();
  ActOutput out;
  out.actions = Tensor(sh.action_bound * u.array().tanh());
  out.logp = gaussian_logp(u, mu, ls) - squash_log_jacobian(u, sh.action_bound).rowwise().sum();
  out.pre_squash = std::move(u);
  out.value = policy.value(states);
  return out;
}

}  // namespace fmirl::agent
