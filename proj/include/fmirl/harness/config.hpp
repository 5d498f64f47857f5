#pragma once

// Run configuration: a JSON document of nested sections. Unknown keys are
// rejected. Relative paths resolve against the config file's directory.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "fmirl/agent/policy_update.hpp"
#include "fmirl/agent/student_policy.hpp"
#include "fmirl/baselines/flow_policy.hpp"
#include "fmirl/baselines/gail.hpp"
#include "fmirl/disc/fm_discriminator.hpp"
#include "fmirl/env/envs.hpp"
#include "fmirl/flow/flow_model.hpp"

namespace fmirl::harness {

namespace fs = std::filesystem;
using json = nlohmann::json;

enum class Method { fmirl, fp_bc, gail, ppo_true_reward };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::fmirl: return "fmirl";
    case Method::fp_bc: return "fp_bc";
    case Method::gail: return "gail";
    case Method::ppo_true_reward: return "ppo_true_reward";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  if (s == "fmirl") return Method::fmirl;
  if (s == "fp_bc") return Method::fp_bc;
  if (s == "gail") return Method::gail;
  if (s == "ppo_true_reward") return Method::ppo_true_reward;
  throw ConfigError("unknown method '" + s + "'");
}

struct TrainConfig {
  std::int64_t total_env_steps = 200000;
  int num_envs = 16;
  int steps_per_env = 128;  // rollout length per round and env
  int eval_episodes = 50;
  int checkpoint_every = 0;  // rounds; 0 = final checkpoint only
  bool disc_first = false;   // discriminator update before the policy update
  int reward_update_freq = 1;
  int warmstart_steps = 5000;  // CFM steps before the first round (fmirl)
  int warmstart_batch = 256;
  double warmstart_lr = 1e-3;
  bool state_norm = true;
  bool success_terminal = true;  // false: bootstrap V(s') when an episode ends in success
};

struct ExpertConfig {
  int episodes = 20;
};

struct RunConfig {
  env::EnvSpec env;
  Method method = Method::fmirl;
  flow::FlowConfig flow;
  disc::DiscConfig disc;
  agent::PolicyShape policy_net;
  agent::PolicyObjectiveConfig policy;
  baselines::FlowPolicyConfig fp;
  baselines::GailConfig gail;
  TrainConfig train;
  ExpertConfig expert;
  std::vector<std::uint64_t> seeds{1};
  std::string expert_dataset;
  std::string output_dir = "runs";

  /// Propagates env dimensions into the module configs and checks invariants.
  void finalize() {
    env.validate();
    flow.state_dim = env.state_dim;
    flow.action_dim = env.action_dim;
    flow.validate();
    disc.validate();
    policy.validate();
    policy_net.state_dim = env.state_dim;
    policy_net.action_dim = env.action_dim;
    policy_net.action_bound = env.action_bound;
    fp.state_dim = env.state_dim;
    fp.action_dim = env.action_dim;
    fp.action_bound = env.action_bound;
    if (seeds.empty()) throw ConfigError("seeds: list must be non-empty");
    if (train.total_env_steps < 0 || train.num_envs < 1 || train.steps_per_env < 1)
      throw ConfigError("train: budget settings must be positive");
    if (train.eval_episodes < 1) throw ConfigError("train: eval_episodes must be >= 1");
    if (train.reward_update_freq < 1) throw ConfigError("train: reward_update_freq must be >= 1");
    if (train.warmstart_steps < 0 || train.warmstart_batch < 2 || !(train.warmstart_lr > 0.0)) throw ConfigError("train: bad warm-start settings");
    if (expert.episodes < 0) throw ConfigError("expert: episodes must be >= 0");
    if (fp.train_steps < 0 || fp.batch_size < 1 || fp.num_steps < 1) throw ConfigError("fp: bad settings");
  }

  std::int64_t steps_per_round() const { return static_cast<std::int64_t>(train.num_envs) * train.steps_per_env; }
};

namespace detail {

/// Reads typed keys from one JSON object and rejects keys never read.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError("config: section '" + name_ + "' must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config: bad value for '" + name_ + "." + key + "'");
    }
  }

  bool has(const char* key) const { return j_.contains(key); }

  const json& child(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError("config: unknown key '" + name_ + "." + it.key() + "'");
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

inline void read_env(const json& j, env::EnvSpec& e) {
  Section s(j, "env");
  std::string name = e.name();
  s.get("name", name);
  env::EnvSpec base = env::EnvSpec::make(env::parse_env_kind(name));
  s.get("horizon", base.horizon);
  s.get("max_step", base.max_step);
  s.get("action_bound", base.action_bound);
  s.get("success_threshold", base.success_threshold);
  s.get("noise_mult", base.noise_mult);
  s.get("goal_region", base.goal_region);
  s.get("start_jitter", base.start_jitter);
  s.finish();
  e = base;
}

inline void read_flow(const json& j, flow::FlowConfig& f) {
  Section s(j, "flow");
  s.get("noise_scale", f.noise_scale);
  s.get("num_steps", f.num_steps);
  s.get("hidden_layers", f.hidden_layers);
  s.get("hidden_units", f.hidden_units);
  s.get("embed_dim", f.embed_dim);
  s.finish();
}

inline void read_disc(const json& j, disc::DiscConfig& d) {
  Section s(j, "disc");
  s.get("temperature", d.temperature);
  s.get("samples_train", d.samples_train);
  s.get("samples_reward", d.samples_reward);
  s.get("lr", d.lr);
  s.get("expert_weight", d.expert_weight);
  s.get("agent_weight", d.agent_weight);
  s.get("update_epochs", d.update_epochs);
  s.get("batch_size", d.batch_size);
  s.finish();
}

inline void read_policy(const json& j, agent::PolicyShape& net, agent::PolicyObjectiveConfig& p) {
  Section s(j, "policy");
  s.get("hidden_units", net.hidden_units);
  s.get("hidden_layers", net.hidden_layers);
  s.get("init_log_std", net.init_log_std);
  s.get("gamma", p.gamma);
  s.get("lambda", p.lambda);
  s.get("clip", p.clip);
  s.get("epochs", p.epochs);
  s.get("minibatch_size", p.minibatch_size);
  s.get("beta", p.beta);
  s.get("reg_batch_size", p.reg_batch_size);
  s.get("entropy_coef", p.entropy_coef);
  s.get("value_coef", p.value_coef);
  s.get("lr", p.lr);
  s.get("max_grad_norm", p.max_grad_norm);
  s.finish();
}

inline void read_fp(const json& j, baselines::FlowPolicyConfig& f) {
  Section s(j, "fp");
  s.get("noise_scale", f.noise_scale);
  s.get("num_steps", f.num_steps);
  s.get("hidden_layers", f.hidden_layers);
  s.get("hidden_units", f.hidden_units);
  s.get("train_steps", f.train_steps);
  s.get("batch_size", f.batch_size);
  s.get("lr", f.lr);
  s.finish();
}

inline void read_gail(const json& j, baselines::GailConfig& g) {
  Section s(j, "gail");
  s.get("hidden_units", g.hidden_units);
  s.get("hidden_layers", g.hidden_layers);
  s.get("lr", g.lr);
  s.finish();
}

inline void read_train(const json& j, TrainConfig& t) {
  Section s(j, "train");
  s.get("total_env_steps", t.total_env_steps);
  s.get("num_envs", t.num_envs);
  s.get("steps_per_env", t.steps_per_env);
  s.get("eval_episodes", t.eval_episodes);
  s.get("checkpoint_every", t.checkpoint_every);
  s.get("disc_first", t.disc_first);
  s.get("reward_update_freq", t.reward_update_freq);
  s.get("warmstart_steps", t.warmstart_steps);
  s.get("warmstart_batch", t.warmstart_batch);
  s.get("warmstart_lr", t.warmstart_lr);
  s.get("state_norm", t.state_norm);
  s.get("success_terminal", t.success_terminal);
  s.finish();
}

inline std::string resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return p;
  const fs::path path(p);
  return (path.is_absolute() ? path : base / path).lexically_normal().string();
}

}  // namespace detail

/// Parses a config document. `base_dir` anchors relative paths.
inline RunConfig parse_config(const json& j, const fs::path& base_dir = {}) {
  detail::Section top(j, "config");
  RunConfig c;
  if (top.has("env")) detail::read_env(top.child("env"), c.env);
  std::string method = to_string(c.method);
  top.get("method", method);
  c.method = parse_method(method);
  if (top.has("flow")) detail::read_flow(top.child("flow"), c.flow);
  if (top.has("disc")) detail::read_disc(top.child("disc"), c.disc);
  if (top.has("policy")) detail::read_policy(top.child("policy"), c.policy_net, c.policy);
  if (top.has("fp")) detail::read_fp(top.child("fp"), c.fp);
  if (top.has("gail")) detail::read_gail(top.child("gail"), c.gail);
  if (top.has("train")) detail::read_train(top.child("train"), c.train);
  if (top.has("expert")) {
    detail::Section s(top.child("expert"), "expert");
    s.get("episodes", c.expert.episodes);
    s.finish();
  }
  top.get("seeds", c.seeds);
  top.get("expert_dataset", c.expert_dataset);
  top.get("output_dir", c.output_dir);
  top.finish();
  c.expert_dataset = detail::resolve(base_dir, c.expert_dataset);
  c.output_dir = detail::resolve(base_dir, c.output_dir);
  c.finalize();
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_config(j, fs::absolute(path).parent_path());
}

/// Fully resolved config, written next to run outputs.
inline json to_json(const RunConfig& c) {
  return json{
      {"env",
       {{"name", c.env.name()},
        {"horizon", c.env.horizon},
        {"max_step", c.env.max_step},
        {"action_bound", c.env.action_bound},
        {"success_threshold", c.env.success_threshold},
        {"noise_mult", c.env.noise_mult},
        {"goal_region", c.env.goal_region},
        {"start_jitter", c.env.start_jitter}}},
      {"method", to_string(c.method)},
      {"flow",
       {{"noise_scale", c.flow.noise_scale},
        {"num_steps", c.flow.num_steps},
        {"hidden_layers", c.flow.hidden_layers},
        {"hidden_units", c.flow.hidden_units},
        {"embed_dim", c.flow.embed_dim}}},
      {"disc",
       {{"temperature", c.disc.temperature},
        {"samples_train", c.disc.samples_train},
        {"samples_reward", c.disc.samples_reward},
        {"lr", c.disc.lr},
        {"expert_weight", c.disc.expert_weight},
        {"agent_weight", c.disc.agent_weight},
        {"update_epochs", c.disc.update_epochs},
        {"batch_size", c.disc.batch_size}}},
      {"policy",
       {{"hidden_units", c.policy_net.hidden_units},
        {"hidden_layers", c.policy_net.hidden_layers},
        {"init_log_std", c.policy_net.init_log_std},
        {"gamma", c.policy.gamma},
        {"lambda", c.policy.lambda},
        {"clip", c.policy.clip},
        {"epochs", c.policy.epochs},
        {"minibatch_size", c.policy.minibatch_size},
        {"beta", c.policy.beta},
        {"reg_batch_size", c.policy.reg_batch_size},
        {"entropy_coef", c.policy.entropy_coef},
        {"value_coef", c.policy.value_coef},
        {"lr", c.policy.lr},
        {"max_grad_norm", c.policy.max_grad_norm}}},
      {"fp",
       {{"noise_scale", c.fp.noise_scale},
        {"num_steps", c.fp.num_steps},
        {"hidden_layers", c.fp.hidden_layers},
        {"hidden_units", c.fp.hidden_units},
        {"train_steps", c.fp.train_steps},
        {"batch_size", c.fp.batch_size},
        {"lr", c.fp.lr}}},
      {"gail", {{"hidden_units", c.gail.hidden_units}, {"hidden_layers", c.gail.hidden_layers}, {"lr", c.gail.lr}}},
      {"train",
       {{"total_env_steps", c.train.total_env_steps},
        {"num_envs", c.train.num_envs},
        {"steps_per_env", c.train.steps_per_env},
        {"eval_episodes", c.train.eval_episodes},
        {"checkpoint_every", c.train.checkpoint_every},
        {"disc_first", c.train.disc_first},
        {"reward_update_freq", c.train.reward_update_freq},
        {"warmstart_steps", c.train.warmstart_steps},
        {"warmstart_batch", c.train.warmstart_batch},
        {"warmstart_lr", c.train.warmstart_lr},
        {"state_norm", c.train.state_norm},
        {"success_terminal", c.train.success_terminal}}},
      {"expert", {{"episodes", c.expert.episodes}}},
      {"seeds", c.seeds},
      {"expert_dataset", c.expert_dataset},
      {"output_dir", c.output_dir},
  };
}

}  // namespace fmirl::harness
