#pragma once

// Behavior-cloned flow-matching policy: a velocity field over actions
// conditioned on the (normalized) state, trained offline with the straight-line
// path a_t = (1 - t) a0 + t a1, target a1 - a0.

#include <cmath>
#include <vector>

#include "fmirl/core/error.hpp"
#include "fmirl/core/random.hpp"
#include "fmirl/flow/flow_model.hpp"
#include "fmirl/nn/adam.hpp"

namespace fmirl::baselines {

using nn::Tensor;
using nn::Var;
using nn::Vector;

struct FlowPolicyConfig {
  int state_dim = 4;
  int action_dim = 2;
  double action_bound = 1.0;
  double noise_scale = 0.5;
  int num_steps = 100;
  int hidden_layers = 4;
  int hidden_units = 128;
  int train_steps = 5000;
  int batch_size = 256;
  double lr = 1e-3;
};

class ConditionalFlowPolicy {
 public:
  ConditionalFlowPolicy(FlowPolicyConfig cfg, Rng& rng) : cfg_(cfg) {
    std::vector<Eigen::Index> widths{cfg.action_dim + cfg.state_dim + flow::kTimeFeatures};
    for (int i = 0; i < cfg.hidden_layers; ++i) widths.push_back(cfg.hidden_units);
    widths.push_back(cfg.action_dim);
    nn::mlp_init(params_, "fp", widths, rng);
  }

  const FlowPolicyConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  /// v(a_t, s, t) for a batch.
  Tensor velocity(const Tensor& a, const Tensor& s, const Vector& t) const {
    return nn::mlp_forward(params_, "fp", inputs(a, s, t), nn::Activation::silu);
  }

  Var velocity(nn::Tape& tape, const Tensor& a, const Tensor& s, const Vector& t) {
    return nn::mlp_forward(tape, params_, "fp", tape.constant(inputs(a, s, t)), nn::Activation::silu);
  }

 private:
  Tensor inputs(const Tensor& a, const Tensor& s, const Vector& t) const {
    if (a.cols() != cfg_.action_dim || s.cols() != cfg_.state_dim || a.rows() != s.rows() || t.size() != a.rows())
      throw ConfigError("flow policy: input shape mismatch");
    Tensor in(a.rows(), a.cols() + s.cols() + flow::kTimeFeatures);
    in << a, s, flow::time_features(t);
    return in;
  }

  FlowPolicyConfig cfg_;
  nn::ParamStore params_;
};

/// Mean straight-line CFM loss over actions, recorded.
inline Var fp_loss(nn::Tape& tape, ConditionalFlowPolicy& policy, const Tensor& states, const flow::PathBatch& p) {
  Var v = policy.velocity(tape, p.xt, states, p.t);
  return nn::mean(nn::sum_cols(nn::square(v - tape.constant(p.u))));
}

/// Trains on (normalized state, action) rows. Returns the per-step losses.
inline std::vector<double> train_fp_bc(ConditionalFlowPolicy& policy, const Tensor& states, const Tensor& actions,
                                       Rng& rng) {
  const auto& cfg = policy.config();
  if (states.rows() == 0) throw UsageError("train_fp_bc: empty dataset");
  if (states.rows() != actions.rows()) throw DataError("train_fp_bc: state/action row mismatch");
  nn::Adam opt(nn::AdamConfig{cfg.lr});
  std::vector<double> losses;
  losses.reserve(static_cast<std::size_t>(cfg.train_steps));
  const Eigen::Index b = cfg.batch_size;  // rows drawn with replacement
  Tensor s(b, states.cols()), a(b, actions.cols());
  for (int step = 0; step < cfg.train_steps; ++step) {
    for (Eigen::Index i = 0; i < b; ++i) {
      const auto k = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(states.rows())));
      s.row(i) = states.row(k);
      a.row(i) = actions.row(k);
    }
    const flow::PathBatch p = flow::draw_paths(a, rng, cfg.noise_scale);
    nn::Tape tape;
    Var loss = fp_loss(tape, policy, s, p);
    const double l = loss.value()(0, 0);
    if (!std::isfinite(l)) throw NumericalError("train_fp_bc: non-finite loss at step " + std::to_string(step));
    losses.push_back(l);
    tape.backward(loss);
    opt.step(policy.params());
  }
  return losses;
}

/// Euler-integrates da/dt = v(a, s, t) from a0 ~ N(0, sigma0^2 I); clipped to bounds.
inline Tensor fp_act(const ConditionalFlowPolicy& policy, const Tensor& states, Rng& rng) {
  const auto& cfg = policy.config();
  Tensor a(states.rows(), cfg.action_dim);
  for (Eigen::Index k = 0; k < a.size(); ++k) a.data()[k] = cfg.noise_scale * rng.normal();
  const double dt = 1.0 / cfg.num_steps;
  Vector t(states.rows());
  for (int k = 0; k < cfg.num_steps; ++k) {
    t.setConstant(k * dt);
    a += dt * policy.velocity(a, states, t);
    if (!a.allFinite()) throw NumericalError("fp_act: non-finite action at step " + std::to_string(k));
  }
  return Tensor(a.array().max(-cfg.action_bound).min(cfg.action_bound));
}

}  // namespace fmirl::baselines
