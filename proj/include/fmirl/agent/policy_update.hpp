#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "fmirl/agent/student_policy.hpp"
#include "fmirl/core/error.hpp"
#include "fmirl/core/random.hpp"
#include "fmirl/flow/flow_model.hpp"
#include "fmirl/nn/adam.hpp"

namespace fmirl::agent {

struct PolicyObjectiveConfig {
  double gamma = 0.99;
  double lambda = 0.95;
  double clip = 0.2;
  int epochs = 10;
  int minibatch_size = 256;
  double beta = 2.0;  // weight of the generated-pair regularizer
  int reg_batch_size = 256;
  double entropy_coef = 0.0;
  double value_coef = 0.5;
  double lr = 3e-4;
  double max_grad_norm = 0.5;

  void validate() const {
    if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("policy: gamma must be in [0, 1)");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("policy: lambda must be in [0, 1]");
    if (!(clip > 0.0 && clip < 1.0)) throw ConfigError("policy: clip must be in (0, 1)");
    if (!(beta >= 0.0)) throw ConfigError("policy: beta must be >= 0");
    if (epochs < 1 || minibatch_size < 1 || reg_batch_size < 0) throw ConfigError("policy: bad epoch/batch settings");
    if (!(lr > 0.0)) throw ConfigError("policy: lr must be > 0");
  }
};

/// Transitions stored time-major: row k = step (k / num_envs), env (k % num_envs).
struct RolloutBuffer {
  int num_envs = 1;
  int horizon = 0;
  Tensor states;      // normalized observations
  Tensor actions;     // squashed actions sent to the env
  Tensor pre_squash;  // Gaussian samples
  Vector logp;
  Vector values;
  Vector rewards;
  std::vector<char> dones;
  Vector bootstrap;    // V(s') on time-limit truncations, else 0; enters GAE as gamma * V(s')
  Vector last_values;  // V(s_T) per env for bootstrapping an unfinished tail
  Vector advantages;
  Vector returns;

  static RolloutBuffer allocate(int num_envs, int horizon, int state_dim, int action_dim) {
    RolloutBuffer b;
    const Eigen::Index n = static_cast<Eigen::Index>(num_envs) * horizon;
    b.num_envs = num_envs;
    b.horizon = horizon;
    b.states = Tensor::Zero(n, state_dim);
    b.actions = Tensor::Zero(n, action_dim);
    b.pre_squash = Tensor::Zero(n, action_dim);
    b.logp = Vector::Zero(n);
    b.values = Vector::Zero(n);
    b.rewards = Vector::Zero(n);
    b.dones.assign(static_cast<std::size_t>(n), 0);
    b.bootstrap = Vector::Zero(n);
    b.last_values = Vector::Zero(num_envs);
    return b;
  }

  Eigen::Index size() const { return states.rows(); }
};

struct GaeResult {
  Vector advantages;
  Vector returns;
};

/// GAE(lambda) for one environment stream. `dones[k]` marks a terminal
/// transition: no bootstrapping across it.
inline GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                             std::span<const char> dones, double last_value, double gamma, double lambda) {
  const std::size_t n = rewards.size();
  if (values.size() != n || dones.size() != n) throw UsageError("compute_gae: length mismatch");
  GaeResult out{Vector(static_cast<Eigen::Index>(n)), Vector(static_cast<Eigen::Index>(n))};
  double next_adv = 0.0;
  double next_value = last_value;
  for (std::size_t k = n; k-- > 0;) {
    const double live = dones[k] ? 0.0 : 1.0;
    const double delta = rewards[k] + gamma * next_value * live - values[k];
    next_adv = delta + gamma * lambda * live * next_adv;
    out.advantages[static_cast<Eigen::Index>(k)] = next_adv;
    out.returns[static_cast<Eigen::Index>(k)] = next_adv + values[k];
    next_value = values[k];
  }
  return out;
}

inline void compute_gae(RolloutBuffer& buf, double gamma, double lambda) {
  const Eigen::Index n = buf.size();
  buf.advantages.resize(n);
  buf.returns.resize(n);
  std::vector<double> r(buf.horizon), v(buf.horizon);
  std::vector<char> d(buf.horizon);
  for (int e = 0; e < buf.num_envs; ++e) {
    for (int k = 0; k < buf.horizon; ++k) {
      const Eigen::Index row = static_cast<Eigen::Index>(k) * buf.num_envs + e;
      r[k] = buf.rewards[row] + gamma * buf.bootstrap[row];
      v[k] = buf.values[row];
      d[k] = buf.dones[static_cast<std::size_t>(row)];
    }
    const GaeResult g = compute_gae(r, v, d, buf.last_values[e], gamma, lambda);
    for (int k = 0; k < buf.horizon; ++k) {
      const Eigen::Index row = static_cast<Eigen::Index>(k) * buf.num_envs + e;
      buf.advantages[row] = g.advantages[k];
      buf.returns[row] = g.returns[k];
    }
  }
}

/// Zero-mean, unit-(population)-std advantages.
inline Vector normalize_advantages(const Vector& adv) {
  const double mean = adv.mean();
  const Vector centered = adv.array() - mean;
  const double std = std::sqrt(centered.squaredNorm() / static_cast<double>(adv.size()));
  if (std < 1e-12) return centered;
  return centered / std;
}

// ---- regularization pairs from the expert-conditioned generator ----

struct RegPairs {
  Tensor states;   // normalized states
  Tensor actions;  // clipped to action bounds
  Eigen::Index size() const { return states.rows(); }
};

/// Draws n joint vectors from G(. | c = 1) and splits them into (s_G, a_G).
template <flow::VelocityField F>
RegPairs regularization_batch(const F& field, Eigen::Index n, Rng& rng, const flow::FlowConfig& cfg,
                              double action_bound) {
  RegPairs out{Tensor(0, cfg.state_dim), Tensor(0, cfg.action_dim)};
  if (n == 0) return out;
  for (int attempt = 0;; ++attempt) {
    try {
      const Tensor x = flow::euler_generate(field, flow::Condition::expert, n, cfg, rng);
      out.states = x.leftCols(cfg.state_dim);
      out.actions = Tensor(x.rightCols(cfg.action_dim).array().max(-action_bound).min(action_bound));
      return out;
    } catch (const NumericalError&) {
      if (attempt == 3) throw;
    }
  }
}

/// beta * mean_i || mu(s_G,i) - a_G,i ||^2 on the recorded tape.
inline Var regularization_loss(nn::Tape& tape, StudentPolicy& policy, const RegPairs& reg, double beta) {
  Var mu = policy.mean_action(tape, tape.constant(reg.states));
  return nn::scale(nn::mean(nn::sum_cols(nn::square(mu - tape.constant(reg.actions)))), beta);
}

struct PolicyStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double reg_loss = 0.0;  // unweighted mean squared distance
  double entropy = 0.0;
  double clip_fraction = 0.0;
  int epochs_run = 0;
  bool early_stop = false;
};

struct MinibatchLoss {
  Var total;
  Var policy;
  Var value;
  Var entropy;
  Var ratio;
};

/// Objective (to minimize) for one minibatch; the regularizer is added when
/// beta > 0 and pairs are supplied.
inline MinibatchLoss minibatch_loss(nn::Tape& tape, StudentPolicy& policy, const Tensor& states,
                                    const Tensor& pre_squash, const Vector& old_logp, const Vector& adv,
                                    const Vector& returns, const RegPairs& reg, const PolicyObjectiveConfig& cfg) {
  const auto& sh = policy.shape();
  Var s = tape.constant(states);
  Var mu = policy.pre_squash_mean(tape, s);
  Var ls = policy.log_std(tape);
  // log N(u; mu, sigma) - squash term (constant in parameters)
  Var z = (tape.constant(pre_squash) - mu) * nn::exp(nn::neg(ls));
  const double log2pi = std::log(2.0 * std::numbers::pi);
  Var logp = nn::scale(nn::sum_cols(nn::square(z)), -0.5) - nn::sum(ls);
  const Tensor const_term =
      (-0.5 * static_cast<double>(sh.action_dim) * log2pi - squash_log_jacobian(pre_squash, sh.action_bound).rowwise().sum().array())
          .matrix();
  logp = logp + tape.constant(const_term);
  Var ratio = nn::exp(logp - tape.constant(old_logp));
  Var a = tape.constant(adv);
  Var surr1 = ratio * a;
  Var surr2 = nn::clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * a;
  Var policy_loss = nn::neg(nn::mean(nn::minimum(surr1, surr2)));
  Var v = policy.value(tape, s);
  Var value_loss = nn::mean(nn::square(v - tape.constant(returns)));
  Var entropy = nn::add_scalar(nn::sum(ls), 0.5 * static_cast<double>(sh.action_dim) * (1.0 + log2pi));
  Var total = policy_loss + nn::scale(value_loss, cfg.value_coef) - nn::scale(entropy, cfg.entropy_coef);
  if (cfg.beta > 0.0 && reg.size() > 0) total = total + regularization_loss(tape, policy, reg, cfg.beta);
  return {total, policy_loss, value_loss, entropy, ratio};
}

/// Clipped-surrogate update over `epochs` passes of shuffled minibatches.
/// Stops early when a minibatch's mean probability ratio leaves [0.5, 2].
inline PolicyStats policy_update(StudentPolicy& policy, nn::Adam& opt, const RolloutBuffer& buf, const RegPairs& reg,
                                 const PolicyObjectiveConfig& cfg, Rng& rng) {
  const Eigen::Index n = buf.size();
  if (buf.advantages.size() != n) throw UsageError("policy_update: advantages not computed");
  const Vector adv = normalize_advantages(buf.advantages);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  PolicyStats stats;
  int batches = 0;
  for (int epoch = 0; epoch < cfg.epochs && !stats.early_stop; ++epoch) {
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::shuffle(order.begin(), order.end(), rng.engine());
    for (Eigen::Index start = 0; start < n; start += cfg.minibatch_size) {
      const Eigen::Index m = std::min<Eigen::Index>(cfg.minibatch_size, n - start);
      Tensor s(m, buf.states.cols()), u(m, buf.pre_squash.cols());
      Vector lp(m), a(m), ret(m);
      for (Eigen::Index i = 0; i < m; ++i) {
        const Eigen::Index k = order[static_cast<std::size_t>(start + i)];
        s.row(i) = buf.states.row(k);
        u.row(i) = buf.pre_squash.row(k);
        lp[i] = buf.logp[k];
        a[i] = adv[k];
        ret[i] = buf.returns[k];
      }
      nn::Tape tape;
      MinibatchLoss loss = minibatch_loss(tape, policy, s, u, lp, a, ret, reg, cfg);
      const double total = loss.total.value()(0, 0);
      if (!std::isfinite(total)) throw NumericalError("policy_update: non-finite loss");
      const Tensor& ratio = loss.ratio.value();
      const double mean_ratio = ratio.mean();
      stats.policy_loss += loss.policy.value()(0, 0);
      stats.value_loss += loss.value.value()(0, 0);
      stats.entropy += loss.entropy.value()(0, 0);
      stats.clip_fraction += ((ratio.array() - 1.0).abs() > cfg.clip).cast<double>().mean();
      ++batches;
      if (mean_ratio < 0.5 || mean_ratio > 2.0) {
        stats.early_stop = true;
        break;
      }
      policy.params().zero_grad();
      tape.backward(loss.total);
      policy.params().clip_grad_norm(cfg.max_grad_norm);
      opt.step(policy.params());
    }
    stats.epochs_run = epoch + 1;
  }
  if (batches > 0) {
    stats.policy_loss /= batches;
    stats.value_loss /= batches;
    stats.entropy /= batches;
    stats.clip_fraction /= batches;
  }
  if (reg.size() > 0) {
    const Tensor mu = policy.mean_action(reg.states);
    stats.reg_loss = (mu - reg.actions).rowwise().squaredNorm().mean();
  }
  return stats;
}

}  // namespace fmirl::agent
