#pragma once

// Flow-matching discriminator. For a joint pair x = (s, a):
//
//   D(x) = exp(-tau Dist(x|1)) / (exp(-tau Dist(x|1)) + exp(-tau Dist(x|0)))
//        = sigmoid(tau (Dist(x|0) - Dist(x|1)))
//   r(x) = log D - log(1 - D) = tau (Dist(x|0) - Dist(x|1))
//
// Training minimizes  E_expert[log(1 - D)] + E_agent[log D].

#include <cmath>
#include <string>
#include <vector>

#include "fmirl/core/error.hpp"
#include "fmirl/core/random.hpp"
#include "fmirl/flow/flow_model.hpp"
#include "fmirl/nn/adam.hpp"

namespace fmirl::disc {

using flow::Condition;
using nn::Tensor;
using nn::Var;
using nn::Vector;

struct DiscConfig {
  double temperature = 0.1;
  int samples_train = 1;
  int samples_reward = 100;
  double lr = 1e-4;
  // The expert term enters as expert_weight * log(1 - D) and the agent term as
  // -agent_weight * log D, so the defaults give the unweighted objective.
  double expert_weight = 1.0;
  double agent_weight = -1.0;
  int update_epochs = 1;
  int batch_size = 2048;  // agent rows per discriminator step; one step per default rollout

  void validate() const {
    if (!(temperature > 0.0)) throw ConfigError("disc: temperature must be > 0");
    if (samples_train < 1 || samples_reward < 1) throw ConfigError("disc: sample counts must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("disc: lr must be > 0");
    if (update_epochs < 0 || batch_size < 1) throw ConfigError("disc: bad epoch/batch settings");
  }
};

// D is clamped to [kDMin, 1 - kDMin] before the logit, i.e. |logit| <= kMaxLogit.
inline constexpr double kDMin = 1e-8;
inline const double kMaxLogit = std::log((1.0 - kDMin) / kDMin);

struct RewardOutput {
  double d = 0.5;
  double r = 0.0;
  double dist_expert = 0.0;
  double dist_agent = 0.0;
};

inline double sigmoid(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

/// Softmax over negative tempered distances.
inline RewardOutput from_distances(double dist_expert, double dist_agent, double temperature) {
  dist_expert = std::max(dist_expert, 0.0);
  dist_agent = std::max(dist_agent, 0.0);
  const double logit = std::clamp(temperature * (dist_agent - dist_expert), -kMaxLogit, kMaxLogit);
  return RewardOutput{sigmoid(logit), logit, dist_expert, dist_agent};
}

template <flow::VelocityField F>
RewardOutput disc_forward(const F& field, const Vector& s, const Vector& a, int samples, Rng& rng,
                          const flow::FlowConfig& flow_cfg, const DiscConfig& cfg) {
  Tensor x(1, s.size() + a.size());
  x.row(0) << s.transpose(), a.transpose();
  const flow::DistPair d = flow::estimate_dist_pair(field, x, samples, rng, flow_cfg);
  return from_distances(d.expert[0], d.agent[0], cfg.temperature);
}

struct RewardBatch {
  Vector rewards;
  Vector dist_expert;
  Vector dist_agent;
};

/// Shaped rewards tau (Dist0 - Dist1) for each row of `pairs`, using S_reward draws.
template <flow::VelocityField F>
RewardBatch reward(const F& field, const Tensor& pairs, Rng& rng, const flow::FlowConfig& flow_cfg,
                   const DiscConfig& cfg) {
  flow::DistPair d = flow::estimate_dist_pair(field, pairs, cfg.samples_reward, rng, flow_cfg);
  RewardBatch out{Vector(pairs.rows()), std::move(d.expert), std::move(d.agent)};
  for (Eigen::Index i = 0; i < pairs.rows(); ++i) {
    if (!std::isfinite(out.dist_expert[i]) || !std::isfinite(out.dist_agent[i]))
      throw NumericalError("reward: non-finite distance at pair " + std::to_string(i));
    out.rewards[i] = cfg.temperature * (out.dist_agent[i] - out.dist_expert[i]);
  }
  return out;
}

// ---- training ----

/// Loss from already-estimated distances (no gradient). Used for plug-in checks.
inline double disc_loss_value(const Vector& expert_d1, const Vector& expert_d0, const Vector& agent_d1,
                              const Vector& agent_d0, const DiscConfig& cfg) {
  auto log_d = [&](double d1, double d0) {
    const double z = std::clamp(cfg.temperature * (d0 - d1), -kMaxLogit, kMaxLogit);
    return std::log(sigmoid(z));
  };
  auto log_1md = [&](double d1, double d0) {
    const double z = std::clamp(cfg.temperature * (d0 - d1), -kMaxLogit, kMaxLogit);
    return std::log(sigmoid(-z));
  };
  double e = 0.0, a = 0.0;
  for (Eigen::Index i = 0; i < expert_d1.size(); ++i) e += log_1md(expert_d1[i], expert_d0[i]);
  for (Eigen::Index i = 0; i < agent_d1.size(); ++i) a += log_d(agent_d1[i], agent_d0[i]);
  return cfg.expert_weight * e / static_cast<double>(expert_d1.size()) -
         cfg.agent_weight * a / static_cast<double>(agent_d1.size());
}

/// Recorded tempered logits tau (Dist0 - Dist1) per pair, [N x 1]. Both
/// conditions share the same (t, x0) draws; `samples` draws per pair.
inline Var disc_logits(nn::Tape& tape, flow::VectorFieldNet& net, const Tensor& pairs, int samples, Rng& rng,
                       const DiscConfig& cfg) {
  const auto& fc = net.config();
  const flow::PathBatch paths =
      samples == 1 ? flow::draw_paths(pairs, rng, fc.noise_scale)
                   : flow::draw_stratified_paths(pairs, samples, rng, fc.noise_scale);
  const Eigen::Index rows = paths.xt.rows();
  Tensor xt(2 * rows, paths.xt.cols());
  xt << paths.xt, paths.xt;
  Vector t(2 * rows);
  t << paths.t, paths.t;
  Tensor u(2 * rows, paths.u.cols());
  u << paths.u, paths.u;
  std::vector<Condition> labels(static_cast<std::size_t>(2 * rows), Condition::agent);
  std::fill(labels.begin(), labels.begin() + rows, Condition::expert);

  Var v = net.forward(tape, xt, t, labels);
  Var err = nn::sum_cols(nn::square(v - tape.constant(u)));  // [2R x 1]
  Var d1 = nn::slice_rows(err, 0, rows);
  Var d0 = nn::slice_rows(err, rows, rows);
  if (samples > 1) {
    d1 = nn::group_mean_rows(d1, samples);
    d0 = nn::group_mean_rows(d0, samples);
  }
  return nn::clamp(nn::scale(d0 - d1, cfg.temperature), -kMaxLogit, kMaxLogit);
}

/// Recorded discriminator objective on one expert and one agent batch.
inline Var disc_loss(nn::Tape& tape, flow::VectorFieldNet& net, const Tensor& expert, const Tensor& agent, Rng& rng,
                     const DiscConfig& cfg) {
  if (expert.rows() == 0 || agent.rows() == 0) throw UsageError("disc_update: empty batch");
  Var ze = disc_logits(tape, net, expert, cfg.samples_train, rng, cfg);
  Var za = disc_logits(tape, net, agent, cfg.samples_train, rng, cfg);
  // log(1 - D) = -softplus(z), log D = -softplus(-z)
  Var expert_term = nn::mean(nn::neg(nn::softplus(ze)));
  Var agent_term = nn::mean(nn::neg(nn::softplus(nn::neg(za))));
  return nn::scale(expert_term, cfg.expert_weight) - nn::scale(agent_term, cfg.agent_weight);
}

struct DiscUpdateResult {
  double loss = 0.0;
  bool skipped = false;
  std::string warning;
};

/// One gradient step on the discriminator objective. Returns the pre-step loss.
/// A non-finite loss or gradient skips the step and records a warning.
inline DiscUpdateResult disc_update(flow::VectorFieldNet& net, nn::Adam& opt, const Tensor& expert,
                                    const Tensor& agent, Rng& rng, const DiscConfig& cfg) {
  nn::Tape tape;
  Var loss = disc_loss(tape, net, expert, agent, rng, cfg);
  DiscUpdateResult res;
  res.loss = loss.value()(0, 0);
  if (!std::isfinite(res.loss)) {
    res.skipped = true;
    res.warning = "disc_update: non-finite loss, step skipped";
    return res;
  }
  net.params().zero_grad();
  tape.backward(loss);
  if (!std::isfinite(net.params().grad_norm())) {
    net.params().zero_grad();
    res.skipped = true;
    res.warning = "disc_update: non-finite gradient, step skipped";
    return res;
  }
  opt.step(net.params());
  return res;
}

}  // namespace fmirl::disc
