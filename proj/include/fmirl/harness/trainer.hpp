#pragma once

// Training loops for fmirl, gail, ppo_true_reward and fp_bc, plus the shared
// rollout and evaluation machinery.
//
// One fmirl round:
//   roll out pi -> rewards from the flow discriminator -> policy update with
//   generated-pair regularizer -> discriminator update
// (`train.disc_first` moves the discriminator update ahead of the rewards).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "fmirl/agent/policy_update.hpp"
#include "fmirl/baselines/flow_policy.hpp"
#include "fmirl/baselines/gail.hpp"
#include "fmirl/disc/fm_discriminator.hpp"
#include "fmirl/env/envs.hpp"
#include "fmirl/flow/flow_model.hpp"
#include "fmirl/harness/config.hpp"
#include "fmirl/harness/metrics.hpp"
#include "fmirl/harness/normalization.hpp"
#include "fmirl/harness/trajectory_io.hpp"
#include "fmirl/nn/checkpoint.hpp"

namespace fmirl::harness {

using nn::Tensor;
using nn::Vector;

// ---- evaluation ----

struct EvalResult {
  double success_rate = 0.0;
  double mean_return = 0.0;
  double mean_length = 0.0;
  int episodes = 0;
};

/// Maps a batch of raw observations to actions.
using ActionFn = std::function<Tensor(const Tensor&)>;

/// Runs `episodes` episodes in lock-step. Episode i resets from child stream i
/// of `eval_seed`, so every noise level sees the same underlying draws.
inline EvalResult evaluate(const env::EnvSpec& spec, const ActionFn& policy, int episodes, std::uint64_t eval_seed) {
  const Rng base(eval_seed);
  std::vector<env::EnvState> states(static_cast<std::size_t>(episodes));
  for (int i = 0; i < episodes; ++i) {
    Rng r = base.fork(static_cast<std::uint64_t>(i));
    states[static_cast<std::size_t>(i)] = env::reset(spec, r);
  }
  std::vector<int> active(static_cast<std::size_t>(episodes));
  std::iota(active.begin(), active.end(), 0);
  std::vector<double> returns(active.size(), 0.0);
  int successes = 0;
  double length = 0.0;
  while (!active.empty()) {
    Tensor obs(static_cast<Eigen::Index>(active.size()), spec.state_dim);
    for (std::size_t j = 0; j < active.size(); ++j)
      obs.row(static_cast<Eigen::Index>(j)) = states[static_cast<std::size_t>(active[j])].observation().transpose();
    const Tensor act = policy(obs);
    std::vector<int> still;
    for (std::size_t j = 0; j < active.size(); ++j) {
      const auto i = static_cast<std::size_t>(active[j]);
      const env::StepResult r = env::step(spec, states[i], act.row(static_cast<Eigen::Index>(j)).transpose());
      returns[i] += r.true_reward;
      states[i] = r.next;
      if (r.done) {
        successes += r.success;
        length += r.next.t;
      } else {
        still.push_back(active[j]);
      }
    }
    active.swap(still);
  }
  EvalResult out;
  out.episodes = episodes;
  out.success_rate = static_cast<double>(successes) / episodes;
  out.mean_return = std::accumulate(returns.begin(), returns.end(), 0.0) / episodes;
  out.mean_length = length / episodes;
  return out;
}

inline ActionFn student_actions(const agent::StudentPolicy& policy, const NormStats& norm) {
  return [&policy, &norm](const Tensor& raw) { return policy.mean_action(norm.normalize(raw)); };
}

inline ActionFn flow_policy_actions(const baselines::ConditionalFlowPolicy& policy, const NormStats& norm, Rng& rng) {
  return [&policy, &norm, &rng](const Tensor& raw) { return baselines::fp_act(policy, norm.normalize(raw), rng); };
}

/// Evaluation stream for a run seed; shared by every noise level.
inline std::uint64_t eval_seed_for(std::uint64_t seed) { return Rng(seed).fork("eval").next_u64(); }

// ---- rollouts ----

struct EpisodeStats {
  int episodes = 0;
  int successes = 0;
  double return_sum = 0.0;
};

class VecEnv {
 public:
  VecEnv(const env::EnvSpec& spec, int n, const Rng& parent) : spec_(spec), returns_(static_cast<std::size_t>(n), 0.0) {
    for (int i = 0; i < n; ++i) {
      rngs_.push_back(parent.fork(static_cast<std::uint64_t>(i)));
      states_.push_back(env::reset(spec_, rngs_.back()));
    }
  }

  int size() const { return static_cast<int>(states_.size()); }
  const env::EnvSpec& spec() const { return spec_; }

  Tensor observations() const {
    Tensor obs(size(), spec_.state_dim);
    for (int e = 0; e < size(); ++e) obs.row(e) = states_[static_cast<std::size_t>(e)].observation().transpose();
    return obs;
  }

  /// Steps env `e`; on termination the env is reset and the pre-reset
  /// successor is returned in `terminal_obs`.
  env::StepResult step(int e, const Vector& action, EpisodeStats& stats) {
    const auto i = static_cast<std::size_t>(e);
    env::StepResult r = env::step(spec_, states_[i], action);
    returns_[i] += r.true_reward;
    if (r.done) {
      ++stats.episodes;
      stats.successes += r.success;
      stats.return_sum += returns_[i];
      returns_[i] = 0.0;
      states_[i] = env::reset(spec_, rngs_[i]);
    } else {
      states_[i] = r.next;
    }
    return r;
  }

 private:
  env::EnvSpec spec_;
  std::vector<Rng> rngs_;
  std::vector<env::EnvState> states_;
  std::vector<double> returns_;
};

struct Rollout {
  agent::RolloutBuffer buf;
  Vector true_rewards;
  EpisodeStats stats;
};

/// `steps` lock-step transitions from every env. Reaching the horizon is a
/// truncation bootstrapped with V(s'). Success is a true terminal unless
/// `success_terminal` is false, in which case it is bootstrapped too.
inline Rollout collect_rollout(const agent::StudentPolicy& policy, VecEnv& venv, const NormStats& norm, int steps,
                               Rng& rng, bool success_terminal = true) {
  const int n = venv.size();
  const auto& spec = venv.spec();
  Rollout out;
  out.buf = agent::RolloutBuffer::allocate(n, steps, spec.state_dim, spec.action_dim);
  out.true_rewards = Vector::Zero(out.buf.size());
  for (int k = 0; k < steps; ++k) {
    const Tensor obs = norm.normalize(venv.observations());
    const agent::ActOutput a = agent::act(policy, obs, rng);
    std::vector<Eigen::Index> trunc_rows;
    std::vector<Vector> trunc_obs;
    for (int e = 0; e < n; ++e) {
      const Eigen::Index row = static_cast<Eigen::Index>(k) * n + e;
      out.buf.states.row(row) = obs.row(e);
      out.buf.actions.row(row) = a.actions.row(e);
      out.buf.pre_squash.row(row) = a.pre_squash.row(e);
      out.buf.logp[row] = a.logp[e];
      out.buf.values[row] = a.value[e];
      const env::StepResult r = venv.step(e, a.actions.row(e).transpose(), out.stats);
      out.true_rewards[row] = r.true_reward;
      if (r.done) {
        out.buf.dones[static_cast<std::size_t>(row)] = 1;
        if (!r.success || !success_terminal) {
          trunc_rows.push_back(row);
          trunc_obs.push_back(r.next.observation());
        }
      }
    }
    if (!trunc_rows.empty()) {
      Tensor raw(static_cast<Eigen::Index>(trunc_rows.size()), spec.state_dim);
      for (std::size_t j = 0; j < trunc_rows.size(); ++j) raw.row(static_cast<Eigen::Index>(j)) = trunc_obs[j].transpose();
      const Vector v = policy.value(norm.normalize(raw));
      for (std::size_t j = 0; j < trunc_rows.size(); ++j) out.buf.bootstrap[trunc_rows[j]] = v[static_cast<Eigen::Index>(j)];
    }
  }
  out.buf.last_values = policy.value(norm.normalize(venv.observations()));
  return out;
}

/// Rows [normalized s, a] of a buffer.
inline Tensor joint_pairs(const Tensor& states, const Tensor& actions) {
  Tensor x(states.rows(), states.cols() + actions.cols());
  x << states, actions;
  return x;
}

// ---- expert data ----

struct ExpertData {
  Dataset dataset;
  NormStats norm;
  Tensor states;  // normalized
  Tensor actions;
  Tensor pairs;  // [normalized s, a]
};

inline ExpertData load_expert(const RunConfig& cfg) {
  if (cfg.expert_dataset.empty())
    throw ConfigError("expert_dataset is required for method " + to_string(cfg.method));
  if (!fs::exists(cfg.expert_dataset)) throw ConfigError("expert dataset '" + cfg.expert_dataset + "' not found");
  ExpertData ex;
  ex.dataset = read_dataset(cfg.expert_dataset);
  if (ex.dataset.header.env_hash != cfg.env.hash())
    throw ConfigError("expert dataset was generated for a different environment (hash " + ex.dataset.header.env_hash +
                      ", config " + cfg.env.hash() + ")");
  if (ex.dataset.transitions.empty()) throw DataError("expert dataset '" + cfg.expert_dataset + "' has no transitions");
  const Tensor raw = ex.dataset.states();
  ex.norm = cfg.train.state_norm ? NormStats::fit(raw) : NormStats::identity(raw.cols());
  ex.states = ex.norm.normalize(raw);
  ex.actions = ex.dataset.actions();
  ex.pairs = joint_pairs(ex.states, ex.actions);
  return ex;
}

inline Tensor sample_rows(const Tensor& data, Eigen::Index n, Rng& rng) {
  Tensor out(n, data.cols());
  for (Eigen::Index i = 0; i < n; ++i)
    out.row(i) = data.row(static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(data.rows()))));
  return out;
}

// ---- checkpoints ----

/// Every network a run may own. Parameter names carry distinct prefixes, so
/// they share one checkpoint namespace.
struct Models {
  std::optional<agent::StudentPolicy> policy;
  std::optional<flow::VectorFieldNet> flow;
  std::optional<baselines::MlpDiscriminator> gail;
  std::optional<baselines::ConditionalFlowPolicy> fp;
  NormStats norm;
};

struct CheckpointMeta {
  Method method = Method::fmirl;
  std::string env;
  std::string env_hash;
  std::uint64_t seed = 0;
  std::int64_t env_steps = 0;
  int round = 0;
};

inline nn::Checkpoint make_checkpoint(const Models& m, const CheckpointMeta& meta) {
  nn::Checkpoint ck;
  ck.meta["method"] = to_string(meta.method);
  ck.meta["env"] = meta.env;
  ck.meta["env_hash"] = meta.env_hash;
  ck.meta["seed"] = std::to_string(meta.seed);
  ck.meta["env_steps"] = std::to_string(meta.env_steps);
  ck.meta["round"] = std::to_string(meta.round);
  if (m.policy) nn::merge_params(ck.params, m.policy->params(), "");
  if (m.flow) nn::merge_params(ck.params, m.flow->params(), "");
  if (m.gail) nn::merge_params(ck.params, m.gail->params(), "");
  if (m.fp) nn::merge_params(ck.params, m.fp->params(), "");
  ck.params.add("norm.mean", m.norm.mean);
  ck.params.add("norm.std", m.norm.std);
  return ck;
}

inline CheckpointMeta read_meta(const nn::Checkpoint& ck) {
  auto get = [&](const char* k) {
    auto it = ck.meta.find(k);
    if (it == ck.meta.end()) throw DataError(std::string("checkpoint is missing meta '") + k + "'");
    return it->second;
  };
  CheckpointMeta m;
  m.method = parse_method(get("method"));
  m.env = get("env");
  m.env_hash = get("env_hash");
  m.seed = std::stoull(get("seed"));
  m.env_steps = std::stoll(get("env_steps"));
  m.round = std::stoi(get("round"));
  return m;
}

/// Rebuilds the networks of `cfg.method` and restores them from `ck`.
inline Models restore_models(const RunConfig& cfg, const nn::Checkpoint& ck) {
  Models m;
  Rng dummy(0);
  const CheckpointMeta meta = read_meta(ck);
  if (meta.env != cfg.env.name() || meta.env_hash != cfg.env.hash())
    throw ConfigError("checkpoint was trained on " + meta.env + " (hash " + meta.env_hash + "), config describes " +
                      cfg.env.name() + " (hash " + cfg.env.hash() + ")");
  if (meta.method == Method::fp_bc) {
    m.fp.emplace(cfg.fp, dummy);
    nn::restore_params(m.fp->params(), ck.params, "");
  } else {
    m.policy.emplace(cfg.policy_net, dummy);
    nn::restore_params(m.policy->params(), ck.params, "");
  }
  m.norm.mean = ck.params.at("norm.mean").value;
  m.norm.std = ck.params.at("norm.std").value;
  if (m.norm.mean.cols() != cfg.env.state_dim) throw ConfigError("checkpoint normalization width mismatch");
  return m;
}

// ---- training ----

struct RunResult {
  std::int64_t env_steps = 0;
  int rounds = 0;
  EvalResult final_eval;
  fs::path run_dir;
};

namespace detail {

inline json tensor_json(const Tensor& t, Eigen::Index max_rows) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < std::min(t.rows(), max_rows); ++i) {
    std::vector<double> r(t.row(i).data(), t.row(i).data() + t.cols());
    rows.push_back(r);
  }
  return rows;
}

inline json vector_json(const Vector& v, Eigen::Index max_rows) {
  return std::vector<double>(v.data(), v.data() + std::min(v.size(), max_rows));
}

/// Writes what the last batch looked like before a numerical abort.
inline void write_diagnostic(const fs::path& run_dir, const std::string& what, int round, std::int64_t env_steps,
                             const Rollout* last) {
  json d{{"error", what}, {"round", round}, {"env_steps", env_steps}};
  if (last) {
    d["states"] = tensor_json(last->buf.states, 64);
    d["actions"] = tensor_json(last->buf.actions, 64);
    d["rewards"] = vector_json(last->buf.rewards, 64);
    d["values"] = vector_json(last->buf.values, 64);
  }
  std::ofstream(run_dir / "diagnostic.json") << d.dump(2) << '\n';
}

/// Per-round discriminator pass over the agent rollout in minibatches, each
/// paired with an equally sized expert sample.
inline double fm_disc_round(flow::VectorFieldNet& net, nn::Adam& opt, const Tensor& expert, const Tensor& agent,
                            Rng& rng, const disc::DiscConfig& cfg) {
  double total = 0.0;
  int steps = 0;
  std::vector<Eigen::Index> order(static_cast<std::size_t>(agent.rows()));
  for (int epoch = 0; epoch < cfg.update_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::shuffle(order.begin(), order.end(), rng.engine());
    for (Eigen::Index start = 0; start < agent.rows(); start += cfg.batch_size) {
      const Eigen::Index m = std::min<Eigen::Index>(cfg.batch_size, agent.rows() - start);
      Tensor a(m, agent.cols());
      for (Eigen::Index i = 0; i < m; ++i) a.row(i) = agent.row(order[static_cast<std::size_t>(start + i)]);
      const Tensor e = sample_rows(expert, m, rng);
      const disc::DiscUpdateResult res = disc::disc_update(net, opt, e, a, rng, cfg);
      if (res.skipped) throw NumericalError(res.warning);
      total += res.loss;
      ++steps;
    }
  }
  return steps ? total / steps : 0.0;
}

inline double gail_disc_round(baselines::MlpDiscriminator& d, const Tensor& expert, const Tensor& agent, Rng& rng,
                              const disc::DiscConfig& cfg) {
  double total = 0.0;
  int steps = 0;
  std::vector<Eigen::Index> order(static_cast<std::size_t>(agent.rows()));
  for (int epoch = 0; epoch < cfg.update_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::shuffle(order.begin(), order.end(), rng.engine());
    for (Eigen::Index start = 0; start < agent.rows(); start += cfg.batch_size) {
      const Eigen::Index m = std::min<Eigen::Index>(cfg.batch_size, agent.rows() - start);
      Tensor a(m, agent.cols());
      for (Eigen::Index i = 0; i < m; ++i) a.row(i) = agent.row(order[static_cast<std::size_t>(start + i)]);
      const baselines::GailRoundResult res = baselines::gail_round(d, sample_rows(expert, m, rng), a);
      if (res.skipped) throw NumericalError(res.warning);
      total += res.objective;
      ++steps;
    }
  }
  return steps ? total / steps : 0.0;
}

/// CFM pretraining: expert pairs under c = 1, first-rollout agent pairs under c = 0,
/// half of every batch from each.
inline void warm_start(flow::VectorFieldNet& net, const Tensor& expert, const Tensor& agent, const TrainConfig& t,
                       Rng& rng) {
  nn::Adam opt(nn::AdamConfig{t.warmstart_lr});
  const Eigen::Index half = t.warmstart_batch / 2;
  std::vector<flow::Condition> c(static_cast<std::size_t>(2 * half), flow::Condition::agent);
  std::fill(c.begin(), c.begin() + half, flow::Condition::expert);
  for (int step = 0; step < t.warmstart_steps; ++step) {
    Tensor x1(2 * half, expert.cols());
    x1 << sample_rows(expert, half, rng), sample_rows(agent, half, rng);
    nn::Tape tape;
    nn::Var loss = flow::cfm_loss(tape, net, x1, c, rng);
    if (!std::isfinite(loss.value()(0, 0))) throw NumericalError("warm start: non-finite CFM loss");
    net.params().zero_grad();
    tape.backward(loss);
    opt.step(net.params());
  }
}

inline json eval_json(const EvalResult& e) {
  return {{"success_rate", e.success_rate}, {"mean_return", e.mean_return}, {"mean_length", e.mean_length}};
}

}  // namespace detail

inline constexpr Eigen::Index kProbeRows = 256;

/// Online methods: fmirl, gail and ppo_true_reward.
inline RunResult train_online(const RunConfig& cfg, std::uint64_t seed, const fs::path& run_dir,
                              std::ostream* log = nullptr) {
  const Rng root(seed);
  Rng init = root.fork("init");
  Rng policy_rng = root.fork("policy");
  Rng reward_rng = root.fork("reward");
  Rng probe_rng = root.fork("probe");
  Rng disc_rng = root.fork("disc");
  Rng update_rng = root.fork("update");
  const std::uint64_t eval_seed = eval_seed_for(seed);

  std::optional<ExpertData> expert;
  if (cfg.method != Method::ppo_true_reward) expert = load_expert(cfg);

  Models models;
  models.norm = expert ? expert->norm : NormStats::identity(cfg.env.state_dim);
  models.policy.emplace(cfg.policy_net, init);
  nn::Adam policy_opt(nn::AdamConfig{cfg.policy.lr});
  nn::Adam disc_opt(nn::AdamConfig{cfg.disc.lr});
  if (cfg.method == Method::fmirl) models.flow.emplace(cfg.flow, init);
  if (cfg.method == Method::gail) models.gail.emplace(cfg.env.state_dim + cfg.env.action_dim, cfg.gail, init);

  // The reward model and the regularizing generator are one network.
  flow::VectorFieldNet* reward_model = models.flow ? &*models.flow : nullptr;
  const flow::VectorFieldNet* generator = reward_model;
  if (cfg.method == Method::fmirl && (reward_model == nullptr || generator != reward_model))
    throw ConfigError("fmirl: discriminator and generator must share one flow model");

  fs::create_directories(run_dir);
  MetricsWriter metrics((run_dir / "metrics.jsonl").string());
  VecEnv venv(cfg.env, cfg.train.num_envs, root.fork("env"));
  const std::int64_t per_round = cfg.steps_per_round();
  const int rounds = static_cast<int>((cfg.train.total_env_steps + per_round - 1) / per_round);

  RunResult result;
  result.run_dir = run_dir;
  std::optional<Rollout> last;
  CheckpointMeta meta{cfg.method, cfg.env.name(), cfg.env.hash(), seed, 0, 0};
  int round = 0;
  try {
    for (round = 0; round < rounds; ++round) {
      last = collect_rollout(*models.policy, venv, models.norm, cfg.train.steps_per_env, policy_rng,
                             cfg.train.success_terminal);
      Rollout& ro = *last;
      result.env_steps += per_round;
      const Tensor pairs = joint_pairs(ro.buf.states, ro.buf.actions);
      const bool disc_round = round % cfg.train.reward_update_freq == 0;

      if (cfg.method == Method::fmirl && round == 0 && cfg.train.warmstart_steps > 0)
        detail::warm_start(*reward_model, expert->pairs, pairs, cfg.train, disc_rng);

      double disc_loss = std::nan("");
      auto update_discriminator = [&] {
        if (!disc_round) return;
        if (cfg.method == Method::fmirl)
          disc_loss = detail::fm_disc_round(*reward_model, disc_opt, expert->pairs, pairs, disc_rng, cfg.disc);
        else if (cfg.method == Method::gail)
          disc_loss = detail::gail_disc_round(*models.gail, expert->pairs, pairs, disc_rng, cfg.disc);
      };

      if (cfg.train.disc_first) update_discriminator();
      if (cfg.method == Method::fmirl) {
        ro.buf.rewards = disc::reward(*reward_model, pairs, reward_rng, cfg.flow, cfg.disc).rewards;
      } else if (cfg.method == Method::gail) {
        ro.buf.rewards = models.gail->reward(pairs);
      } else {
        ro.buf.rewards = ro.true_rewards;
      }
      if (!ro.buf.rewards.allFinite()) throw NumericalError("non-finite reward");
      agent::compute_gae(ro.buf, cfg.policy.gamma, cfg.policy.lambda);

      agent::RegPairs reg{Tensor(0, cfg.env.state_dim), Tensor(0, cfg.env.action_dim)};
      if (cfg.method == Method::fmirl && cfg.policy.beta > 0.0)
        reg = agent::regularization_batch(*generator, cfg.policy.reg_batch_size, update_rng, cfg.flow,
                                          cfg.env.action_bound);
      const agent::PolicyStats ps =
          agent::policy_update(*models.policy, policy_opt, ro.buf, reg, cfg.policy, update_rng);
      if (!cfg.train.disc_first) update_discriminator();

      const EvalResult ev =
          evaluate(cfg.env, student_actions(*models.policy, models.norm), cfg.train.eval_episodes, eval_seed);
      result.final_eval = ev;
      result.rounds = round + 1;
      json row{{"method", to_string(cfg.method)},
                   {"seed", seed},
                   {"round", round},
                   {"env_steps", result.env_steps},
                   {"success_rate", ev.success_rate},
                   {"mean_return", ev.mean_return},
                   {"mean_length", ev.mean_length},
                   {"reward_mean", ro.buf.rewards.mean()},
                   {"true_reward_mean", ro.true_rewards.mean()},
                   {"train_episodes", ro.stats.episodes},
                   {"train_success_rate",
                    ro.stats.episodes ? static_cast<double>(ro.stats.successes) / ro.stats.episodes : 0.0},
                   {"policy_loss", ps.policy_loss},
                   {"value_loss", ps.value_loss},
                   {"entropy", ps.entropy},
                   {"clip_fraction", ps.clip_fraction},
                   {"epochs_run", ps.epochs_run}};
      row["disc_loss"] = std::isfinite(disc_loss) ? json(disc_loss) : json(nullptr);
      // Reward on a fixed-size expert sample, for spotting discriminator drift.
      row["expert_reward_mean"] = nullptr;
      row["expert_dist"] = nullptr;
      if (expert) {
        const Tensor probe = sample_rows(expert->pairs, kProbeRows, probe_rng);
        if (cfg.method == Method::fmirl) {
          const disc::RewardBatch rb = disc::reward(*reward_model, probe, probe_rng, cfg.flow, cfg.disc);
          row["expert_reward_mean"] = rb.rewards.mean();
          row["expert_dist"] = rb.dist_expert.mean();
        } else if (cfg.method == Method::gail) {
          row["expert_reward_mean"] = models.gail->reward(probe).mean();
        }
      }
      row["reg_loss"] = reg.size() > 0 ? json(ps.reg_loss) : json(nullptr);
      metrics.append(row);
      meta.env_steps = result.env_steps;
      meta.round = round;
      if (cfg.train.checkpoint_every > 0 && (round + 1) % cfg.train.checkpoint_every == 0) {
        fs::create_directories(run_dir / "checkpoints");
        char name[32];
        std::snprintf(name, sizeof name, "round_%06d.ckpt", round + 1);
        nn::save_checkpoint(run_dir / "checkpoints" / name, make_checkpoint(models, meta));
      }
      if (log && (round % 10 == 0 || round + 1 == rounds))
        *log << "[" << to_string(cfg.method) << " seed " << seed << "] round " << round + 1 << "/" << rounds
             << " steps " << result.env_steps << " success " << ev.success_rate << " reward " << ro.buf.rewards.mean()
             << '\n';
    }
  } catch (const NumericalError& e) {
    detail::write_diagnostic(run_dir, e.what(), round, result.env_steps, last ? &*last : nullptr);
    throw;
  }
  nn::save_checkpoint(run_dir / "final.ckpt", make_checkpoint(models, meta));
  return result;
}

/// Offline flow-policy behavior cloning. Consumes no environment steps.
inline RunResult train_fp(const RunConfig& cfg, std::uint64_t seed, const fs::path& run_dir,
                          std::ostream* log = nullptr) {
  const Rng root(seed);
  Rng init = root.fork("init");
  Rng train_rng = root.fork("fp");
  Rng act_rng = root.fork("fp_eval");
  const ExpertData expert = load_expert(cfg);
  Models models;
  models.norm = expert.norm;
  models.fp.emplace(cfg.fp, init);
  fs::create_directories(run_dir);
  MetricsWriter metrics((run_dir / "metrics.jsonl").string());
  RunResult result;
  result.run_dir = run_dir;
  std::vector<double> losses;
  try {
    losses = baselines::train_fp_bc(*models.fp, expert.states, expert.actions, train_rng);
  } catch (const NumericalError& e) {
    detail::write_diagnostic(run_dir, e.what(), 0, 0, nullptr);
    throw;
  }
  constexpr std::size_t kLogEvery = 500;
  for (std::size_t start = 0; start < losses.size(); start += kLogEvery) {
    const std::size_t end = std::min(losses.size(), start + kLogEvery);
    const double mean = std::accumulate(losses.begin() + static_cast<std::ptrdiff_t>(start),
                                        losses.begin() + static_cast<std::ptrdiff_t>(end), 0.0) /
                        static_cast<double>(end - start);
    metrics.append({{"method", "fp_bc"}, {"seed", seed}, {"train_step", end}, {"env_steps", 0}, {"fp_loss", mean}});
  }
  const EvalResult ev =
      evaluate(cfg.env, flow_policy_actions(*models.fp, models.norm, act_rng), cfg.train.eval_episodes,
               eval_seed_for(seed));
  result.final_eval = ev;
  metrics.append({{"method", "fp_bc"},
                  {"seed", seed},
                  {"train_step", losses.size()},
                  {"env_steps", 0},
                  {"success_rate", ev.success_rate},
                  {"mean_return", ev.mean_return},
                  {"mean_length", ev.mean_length}});
  const CheckpointMeta meta{Method::fp_bc, cfg.env.name(), cfg.env.hash(), seed, 0, 0};
  nn::save_checkpoint(run_dir / "final.ckpt", make_checkpoint(models, meta));
  if (log) *log << "[fp_bc seed " << seed << "] final loss " << (losses.empty() ? 0.0 : losses.back()) << " success "
                << ev.success_rate << '\n';
  return result;
}

inline RunResult train_run(const RunConfig& cfg, std::uint64_t seed, const fs::path& run_dir,
                           std::ostream* log = nullptr) {
  return cfg.method == Method::fp_bc ? train_fp(cfg, seed, run_dir, log) : train_online(cfg, seed, run_dir, log);
}

}  // namespace fmirl::harness
