#pragma once

// MLP discriminator D(s, a) = sigmoid(f(s, a)), trained by ascent on
// E_expert[log D] + E_agent[log(1 - D)]. The agent reward is the logit
// log D - log(1 - D) = f(s, a).

#include <cmath>
#include <string>
#include <vector>

#include "fmirl/core/error.hpp"
#include "fmirl/core/random.hpp"
#include "fmirl/nn/adam.hpp"
#include "fmirl/nn/autodiff.hpp"
#include "fmirl/nn/mlp.hpp"

namespace fmirl::baselines {

using nn::Tensor;
using nn::Var;
using nn::Vector;

struct GailConfig {
  int hidden_units = 64;
  int hidden_layers = 2;
  double lr = 1e-4;
};

class MlpDiscriminator {
 public:
  MlpDiscriminator(int input_dim, GailConfig cfg, Rng& rng) : cfg_(cfg), opt_(nn::AdamConfig{cfg.lr}) {
    std::vector<Eigen::Index> widths{input_dim};
    for (int i = 0; i < cfg.hidden_layers; ++i) widths.push_back(cfg.hidden_units);
    widths.push_back(1);
    nn::mlp_init(params_, "gd", widths, rng);
  }

  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  nn::Adam& optimizer() { return opt_; }

  Vector logits(const Tensor& pairs) const {
    return nn::mlp_forward(params_, "gd", pairs, nn::Activation::tanh).col(0);
  }
  Var logits(nn::Tape& tape, const Tensor& pairs) {
    return nn::mlp_forward(tape, params_, "gd", tape.constant(pairs), nn::Activation::tanh);
  }

  /// Agent reward log D - log(1 - D), i.e. the logit.
  Vector reward(const Tensor& pairs) const { return logits(pairs); }

 private:
  GailConfig cfg_;
  nn::ParamStore params_;
  nn::Adam opt_;
};

/// E_expert[log D] + E_agent[log(1 - D)] from logits, as a plain value.
inline double gail_objective_value(const Vector& expert_logits, const Vector& agent_logits) {
  auto softplus = [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); };
  double e = 0.0, a = 0.0;
  for (double z : expert_logits) e -= softplus(-z);
  for (double z : agent_logits) a -= softplus(z);
  return e / static_cast<double>(expert_logits.size()) + a / static_cast<double>(agent_logits.size());
}

/// Recorded objective (to be maximized).
inline Var gail_objective(nn::Tape& tape, MlpDiscriminator& disc, const Tensor& expert, const Tensor& agent) {
  if (expert.rows() == 0 || agent.rows() == 0) throw UsageError("gail_round: empty batch");
  Var ze = disc.logits(tape, expert);
  Var za = disc.logits(tape, agent);
  // log D = -softplus(-z), log(1 - D) = -softplus(z)
  return nn::neg(nn::mean(nn::softplus(nn::neg(ze)))) - nn::mean(nn::softplus(za));
}

struct GailRoundResult {
  double objective = 0.0;  // pre-step value
  bool skipped = false;
  std::string warning;
};

/// One ascent step. Non-finite values skip the step with a warning.
inline GailRoundResult gail_round(MlpDiscriminator& disc, const Tensor& expert, const Tensor& agent) {
  nn::Tape tape;
  Var obj = gail_objective(tape, disc, expert, agent);
  GailRoundResult res;
  res.objective = obj.value()(0, 0);
  if (!std::isfinite(res.objective)) {
    res.skipped = true;
    res.warning = "gail_round: non-finite objective, step skipped";
    return res;
  }
  disc.params().zero_grad();
  tape.backward(nn::neg(obj));
  if (!std::isfinite(disc.params().grad_norm())) {
    disc.params().zero_grad();
    res.skipped = true;
    res.warning = "gail_round: non-finite gradient, step skipped";
    return res;
  }
  disc.optimizer().step(disc.params());
  return res;
}

}  // namespace fmirl::baselines
