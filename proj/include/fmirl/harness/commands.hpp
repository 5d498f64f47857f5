#pragma once

// Subcommand bodies behind the CLI: gen-expert, train, eval, export.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "fmirl/harness/config.hpp"
#include "fmirl/harness/trainer.hpp"
#include "fmirl/harness/trajectory_io.hpp"

namespace fmirl::harness {

// ---- gen-expert ----

struct ExpertSummary {
  int episodes = 0;
  int transitions = 0;
  double success_rate = 0.0;
  double mean_return = 0.0;
};

/// Rolls out the scripted demonstrator for `cfg.expert.episodes` episodes.
inline ExpertSummary cmd_gen_expert(const RunConfig& cfg, std::uint64_t seed, const std::string& out_path,
                                    std::ostream* log = nullptr) {
  if (out_path.empty()) throw ConfigError("gen-expert: no output path (set expert_dataset or --out)");
  const fs::path parent = fs::path(out_path).parent_path();
  if (!parent.empty()) {
    std::error_code ec;
    fs::create_directories(parent, ec);
  }
  TrajectoryWriter w(out_path, TrajectoryHeader{cfg.env.name(), cfg.env.hash(), cfg.env.state_dim,
                                                cfg.env.action_dim, "expert"});
  Rng rng = Rng(seed).fork("expert");
  ExpertSummary sum;
  int successes = 0;
  double total = 0.0;
  for (int ep = 0; ep < cfg.expert.episodes; ++ep) {
    env::EnvState s = env::reset(cfg.env, rng);
    for (;;) {
      const Vector a = env::scripted_expert(cfg.env, s);
      const env::StepResult r = env::step(cfg.env, s, a);
      Transition tr;
      tr.episode = ep;
      tr.t = s.t;
      const Vector o = s.observation(), o2 = r.next.observation();
      tr.s.assign(o.data(), o.data() + o.size());
      tr.a.assign(a.data(), a.data() + a.size());
      tr.s_next.assign(o2.data(), o2.data() + o2.size());
      tr.done = r.done;
      tr.reward = r.true_reward;
      tr.success = r.success;
      w.write(tr);
      total += r.true_reward;
      ++sum.transitions;
      if (r.done) {
        successes += r.success;
        break;
      }
      s = r.next;
    }
  }
  w.close();
  sum.episodes = cfg.expert.episodes;
  sum.success_rate = sum.episodes ? static_cast<double>(successes) / sum.episodes : 0.0;
  sum.mean_return = sum.episodes ? total / sum.episodes : 0.0;
  if (log)
    *log << "episodes " << sum.episodes << " transitions " << sum.transitions << " success_rate " << sum.success_rate
         << " mean_return " << sum.mean_return << '\n';
  return sum;
}

// ---- train ----

inline fs::path seed_dir(const fs::path& out, std::uint64_t seed) { return out / ("seed_" + std::to_string(seed)); }

inline std::vector<RunResult> cmd_train(const RunConfig& cfg, std::ostream* log = nullptr) {
  fs::create_directories(cfg.output_dir);
  std::ofstream(fs::path(cfg.output_dir) / "config.json") << to_json(cfg).dump(2) << '\n';
  std::vector<RunResult> out;
  for (std::uint64_t seed : cfg.seeds) {
    RunResult r = train_run(cfg, seed, seed_dir(cfg.output_dir, seed), log);
    if (log)
      *log << to_string(cfg.method) << " seed " << seed << ": env_steps " << r.env_steps << " success_rate "
           << r.final_eval.success_rate << " mean_return " << r.final_eval.mean_return << '\n';
    out.push_back(std::move(r));
  }
  return out;
}

// ---- eval ----

struct NoiseResult {
  double noise = 1.0;
  EvalResult eval;
};

struct SeedEval {
  std::uint64_t seed = 0;
  std::string checkpoint;
  std::vector<NoiseResult> results;
};

struct EvalReport {
  std::string method;
  std::vector<double> noise;
  std::vector<SeedEval> seeds;
  std::vector<NoiseResult> mean;  // across seeds

  json to_json() const {
    json per = json::array();
    for (const auto& s : seeds) {
      json rs = json::array();
      for (const auto& r : s.results)
        rs.push_back({{"noise_mult", r.noise}, {"success_rate", r.eval.success_rate}, {"mean_return", r.eval.mean_return}});
      per.push_back({{"seed", s.seed}, {"checkpoint", s.checkpoint}, {"results", rs}});
    }
    json m = json::array();
    for (const auto& r : mean)
      m.push_back({{"noise_mult", r.noise}, {"success_rate", r.eval.success_rate}, {"mean_return", r.eval.mean_return}});
    return {{"method", method}, {"noise_mults", noise}, {"per_seed", per}, {"mean", m}};
  }
};

/// Parses "1.0,1.5,2.25".
inline std::vector<double> parse_noise_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (item.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("--noise: cannot parse '" + item + "'");
    }
  }
  return out;
}

/// Checkpoint files under `path`: the file itself, or every seed_*/final.ckpt.
inline std::vector<fs::path> find_checkpoints(const fs::path& path) {
  if (fs::is_regular_file(path)) return {path};
  if (!fs::is_directory(path)) throw ConfigError("checkpoint '" + path.string() + "' not found");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(path))
    if (e.is_directory() && e.path().filename().string().rfind("seed_", 0) == 0 &&
        fs::exists(e.path() / "final.ckpt"))
      out.push_back(e.path() / "final.ckpt");
  std::sort(out.begin(), out.end());
  if (out.empty()) throw ConfigError("no seed_*/final.ckpt under '" + path.string() + "'");
  return out;
}

inline EvalReport cmd_eval(const RunConfig& cfg, const std::string& checkpoint, const std::vector<double>& noise,
                           const std::string& out_path, std::ostream* log = nullptr) {
  if (noise.empty()) throw UsageError("eval: noise list is empty");
  for (double n : noise)
    if (!(n >= 1.0)) throw UsageError("eval: noise multipliers must be >= 1");
  EvalReport rep;
  rep.method = to_string(cfg.method);
  rep.noise = noise;
  const auto files = find_checkpoints(checkpoint);
  for (const auto& file : files) {
    const nn::Checkpoint ck = nn::load_checkpoint(file);
    const CheckpointMeta meta = read_meta(ck);
    rep.method = to_string(meta.method);
    const Models m = restore_models(cfg, ck);
    SeedEval se{meta.seed, file.string(), {}};
    for (double n : noise) {
      env::EnvSpec spec = cfg.env;
      spec.noise_mult = n;
      // Same eval stream for every noise level.
      Rng act_rng = Rng(meta.seed).fork("fp_eval");
      const ActionFn fn = m.fp ? flow_policy_actions(*m.fp, m.norm, act_rng) : student_actions(*m.policy, m.norm);
      se.results.push_back({n, evaluate(spec, fn, cfg.train.eval_episodes, eval_seed_for(meta.seed))});
    }
    rep.seeds.push_back(std::move(se));
  }
  for (std::size_t k = 0; k < noise.size(); ++k) {
    NoiseResult avg{noise[k], {}};
    for (const auto& s : rep.seeds) {
      avg.eval.success_rate += s.results[k].eval.success_rate / static_cast<double>(rep.seeds.size());
      avg.eval.mean_return += s.results[k].eval.mean_return / static_cast<double>(rep.seeds.size());
    }
    avg.eval.episodes = cfg.train.eval_episodes;
    rep.mean.push_back(avg);
  }
  const fs::path out = out_path.empty() ? (fs::is_directory(checkpoint) ? fs::path(checkpoint)
                                                                          : fs::path(checkpoint).parent_path()) /
                                              "eval_results.json"
                                        : fs::path(out_path);
  if (!out.parent_path().empty()) fs::create_directories(out.parent_path());
  std::ofstream(out) << rep.to_json().dump(2) << '\n';
  if (log) {
    *log << std::left << std::setw(10) << "noise" << std::setw(10) << "seed" << std::setw(14) << "success_rate"
         << "mean_return\n";
    for (std::size_t k = 0; k < noise.size(); ++k) {
      for (const auto& s : rep.seeds)
        *log << std::setw(10) << noise[k] << std::setw(10) << s.seed << std::setw(14)
             << s.results[k].eval.success_rate << s.results[k].eval.mean_return << '\n';
      *log << std::setw(10) << noise[k] << std::setw(10) << "mean" << std::setw(14) << rep.mean[k].eval.success_rate
           << rep.mean[k].eval.mean_return << '\n';
    }
    *log << "results written to " << out.string() << '\n';
  }
  return rep;
}

// ---- export ----

inline constexpr const char* kExportColumns[] = {"method",       "seed",       "env_steps", "success_rate",
                                                 "mean_return",  "disc_loss",  "reward_mean", "reg_loss"};

struct ExportSummary {
  int rows = 0;
  int skipped = 0;
  std::string path;
};

/// Merges every metrics.jsonl below `dir` into one CSV. Rows that do not parse
/// or lack method/seed/env_steps are skipped and counted.
inline ExportSummary cmd_export(const std::string& dir, const std::string& out_path, std::ostream* log = nullptr) {
  if (!fs::is_directory(dir)) throw ConfigError("export: '" + dir + "' is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() == "metrics.jsonl") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("export: no metrics.jsonl under '" + dir + "'");

  std::ostringstream csv;
  for (std::size_t k = 0; k < std::size(kExportColumns); ++k) csv << (k ? "," : "") << kExportColumns[k];
  csv << '\n';
  ExportSummary sum;
  for (const auto& f : files) {
    std::ifstream in(f);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      json row;
      try {
        row = json::parse(line);
      } catch (const json::parse_error&) {
        ++sum.skipped;
        continue;
      }
      if (!row.is_object() || !row.contains("method") || !row.contains("seed") || !row.contains("env_steps") ||
          !row["method"].is_string() || !row["seed"].is_number() || !row["env_steps"].is_number()) {
        ++sum.skipped;
        continue;
      }
      for (std::size_t k = 0; k < std::size(kExportColumns); ++k) {
        if (k) csv << ',';
        auto it = row.find(kExportColumns[k]);
        if (it == row.end() || it->is_null()) continue;
        csv << (it->is_string() ? it->get<std::string>() : it->dump());
      }
      csv << '\n';
      ++sum.rows;
    }
  }
  sum.path = out_path.empty() ? (fs::path(dir) / "metrics.csv").string() : out_path;
  std::ofstream(sum.path, std::ios::trunc) << csv.str();
  if (log) *log << "exported " << sum.rows << " rows to " << sum.path << ", skipped " << sum.skipped << " malformed\n";
  return sum;
}

}  // namespace fmirl::harness
