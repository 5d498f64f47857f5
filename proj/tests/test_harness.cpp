#include <gtest/gtest.h>

#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <unistd.h>

#include "fmirl/harness/commands.hpp"
#include "fmirl/harness/metrics.hpp"

namespace {

using namespace fmirl;
using namespace fmirl::harness;
namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::path(::testing::TempDir()) / ("fmirl_harness_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<json> read_rows(const fs::path& p) {
  std::vector<json> rows;
  std::ifstream in(p);
  std::string line;
  while (std::getline(in, line)) rows.push_back(json::parse(line));
  return rows;
}

// Small enough to train in a second or two.
json tiny_config(const fs::path& dir, const std::string& method) {
  return json{{"env", {{"name", "point_goal"}}},
              {"method", method},
              {"seeds", {1}},
              {"expert_dataset", (dir / "expert.jsonl").string()},
              {"output_dir", (dir / "runs").string()},
              {"flow", {{"hidden_layers", 2}, {"hidden_units", 16}, {"num_steps", 10}}},
              {"disc", {{"samples_reward", 4}}},
              {"policy", {{"hidden_units", 16}, {"epochs", 2}, {"reg_batch_size", 32}}},
              {"fp", {{"hidden_layers", 2}, {"hidden_units", 16}, {"num_steps", 10}, {"train_steps", 50}, {"batch_size", 32}}},
              {"gail", {{"hidden_units", 16}}},
              {"train",
               {{"total_env_steps", 1024},
                {"num_envs", 4},
                {"steps_per_env", 128},
                {"eval_episodes", 5},
                {"warmstart_steps", 20},
                {"warmstart_batch", 32}}}};
}

RunConfig with_expert(const fs::path& dir, const std::string& method) {
  RunConfig cfg = parse_config(tiny_config(dir, method));
  if (!fs::exists(cfg.expert_dataset)) cmd_gen_expert(cfg, 1, cfg.expert_dataset);
  return cfg;
}

// ---- config ----

TEST(Config, DefaultsValidate) {
  const RunConfig cfg = parse_config(json::object());
  EXPECT_EQ(cfg.method, Method::fmirl);
  EXPECT_EQ(cfg.flow.joint_dim(), cfg.env.state_dim + cfg.env.action_dim);
  EXPECT_EQ(cfg.seeds.size(), 1u);
}

TEST(Config, UnknownKeyIsRejectedWithItsPath) {
  try {
    parse_config(json{{"disc", {{"temprature", 0.1}}}});
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("disc.temprature"), std::string::npos);
  }
  EXPECT_THROW(parse_config(json{{"bogus", 1}}), ConfigError);
}

TEST(Config, BadValuesAreConfigErrors) {
  EXPECT_THROW(parse_config(json{{"method", "sac"}}), ConfigError);
  EXPECT_THROW(parse_config(json{{"seeds", json::array()}}), ConfigError);
  EXPECT_THROW(parse_config(json{{"disc", {{"temperature", 0.0}}}}), ConfigError);
  EXPECT_THROW(parse_config(json{{"env", {{"noise_mult", 0.5}}}}), ConfigError);
  EXPECT_THROW(parse_config(json{{"train", {{"num_envs", "four"}}}}), ConfigError);
}

TEST(Config, JsonRoundTrip) {
  const fs::path dir = scratch("config_rt");
  json j = tiny_config(dir, "gail");
  j["env"]["noise_mult"] = 1.5;
  const RunConfig a = parse_config(j);
  const RunConfig b = parse_config(to_json(a));
  EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
  EXPECT_EQ(b.method, Method::gail);
  EXPECT_DOUBLE_EQ(b.env.noise_mult, 1.5);
}

TEST(Config, RelativePathsResolveAgainstTheConfigFile) {
  const fs::path dir = scratch("config_rel");
  std::ofstream(dir / "c.json") << json{{"expert_dataset", "data/e.jsonl"}, {"output_dir", "out"}}.dump();
  const RunConfig cfg = load_config((dir / "c.json").string());
  EXPECT_EQ(fs::path(cfg.expert_dataset), fs::absolute(dir) / "data/e.jsonl");
  EXPECT_EQ(fs::path(cfg.output_dir), fs::absolute(dir) / "out");
  EXPECT_THROW(load_config((dir / "missing.json").string()), ConfigError);
}

// ---- normalization ----

TEST(Normalization, RoundTripOnDatasetStates) {
  const fs::path dir = scratch("norm");
  const RunConfig cfg = with_expert(dir, "fmirl");
  const Tensor s = read_dataset(cfg.expert_dataset).states();
  const NormStats n = NormStats::fit(s);
  EXPECT_LE((n.denormalize(n.normalize(s)) - s).cwiseAbs().maxCoeff(), 1e-12);
  const Tensor z = n.normalize(s);
  EXPECT_LE(z.colwise().mean().cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Normalization, ConstantColumnIsClamped) {
  Tensor s(3, 2);
  s << 1, 5, 2, 5, 3, 5;
  const NormStats n = NormStats::fit(s);
  EXPECT_DOUBLE_EQ(n.std(0, 1), kMinStd);
  EXPECT_TRUE(n.normalize(s).allFinite());
  EXPECT_THROW(NormStats::fit(Tensor(0, 2)), DataError);
  EXPECT_THROW(n.normalize(Tensor::Zero(1, 3)), ConfigError);
}

// ---- trajectory files ----

class TrajectoryValidation : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = scratch("traj");
    cfg_ = parse_config(tiny_config(dir_, "fmirl"));
    cmd_gen_expert(cfg_, 1, (dir_ / "good.jsonl").string());
    std::ifstream in(dir_ / "good.jsonl");
    std::string line;
    while (std::getline(in, line)) lines_.push_back(line);
  }

  // Writes the good file with line `i` (0 is the header) replaced.
  std::string with_line(std::size_t i, const std::string& replacement) {
    const fs::path p = dir_ / "bad.jsonl";
    std::ofstream out(p);
    for (std::size_t k = 0; k < lines_.size(); ++k) out << (k == i ? replacement : lines_[k]) << '\n';
    return p.string();
  }

  fs::path dir_;
  RunConfig cfg_;
  std::vector<std::string> lines_;
};

TEST_F(TrajectoryValidation, GoodFileReads) {
  const Dataset ds = read_dataset((dir_ / "good.jsonl").string());
  EXPECT_EQ(ds.episodes(), 20);
  EXPECT_EQ(ds.header.env, "point_goal");
  EXPECT_EQ(ds.header.env_hash, cfg_.env.hash());
  EXPECT_EQ(ds.transitions.size() + 1, lines_.size());
}

TEST_F(TrajectoryValidation, BrokenRecordsAreDataErrors) {
  json rec = json::parse(lines_[2]);
  rec["t"] = 7;  // gap in time steps
  EXPECT_THROW(read_dataset(with_line(2, rec.dump())), DataError);

  rec = json::parse(lines_[1]);
  rec["done"] = true;  // terminal before the last step
  EXPECT_THROW(read_dataset(with_line(1, rec.dump())), DataError);

  rec = json::parse(lines_[1]);
  rec["a"] = {0.1};  // wrong action width
  EXPECT_THROW(read_dataset(with_line(1, rec.dump())), DataError);

  EXPECT_THROW(read_dataset(with_line(1, "{not json")), DataError);

  json h = json::parse(lines_[0]);
  h["format"] = "something-else";
  EXPECT_THROW(read_dataset(with_line(0, h.dump())), DataError);

  EXPECT_THROW(read_dataset((dir_ / "absent.jsonl").string()), DataError);
}

// ---- gen-expert ----

TEST(GenExpert, TwentyEpisodesAllSucceed) {
  const fs::path dir = scratch("gen20");
  const RunConfig cfg = parse_config(tiny_config(dir, "fmirl"));
  const ExpertSummary sum = cmd_gen_expert(cfg, 1, cfg.expert_dataset);
  EXPECT_EQ(sum.episodes, 20);
  EXPECT_DOUBLE_EQ(sum.success_rate, 1.0);
  const Dataset ds = read_dataset(cfg.expert_dataset);
  EXPECT_EQ(ds.episodes(), 20);
  std::set<int> ids;
  for (const auto& tr : ds.transitions) {
    ids.insert(tr.episode);
    if (tr.done) {
      EXPECT_TRUE(tr.success);
    }
  }
  EXPECT_EQ(ids.size(), 20u);
}

TEST(GenExpert, SameSeedIsByteIdentical) {
  const fs::path dir = scratch("gen_det");
  const RunConfig cfg = parse_config(tiny_config(dir, "fmirl"));
  cmd_gen_expert(cfg, 7, (dir / "a.jsonl").string());
  cmd_gen_expert(cfg, 7, (dir / "b.jsonl").string());
  cmd_gen_expert(cfg, 8, (dir / "c.jsonl").string());
  EXPECT_EQ(slurp(dir / "a.jsonl"), slurp(dir / "b.jsonl"));
  EXPECT_NE(slurp(dir / "a.jsonl"), slurp(dir / "c.jsonl"));
}

TEST(GenExpert, ZeroEpisodesGivesHeaderOnlyAndTrainingRefusesIt) {
  const fs::path dir = scratch("gen0");
  json j = tiny_config(dir, "fmirl");
  j["expert"] = {{"episodes", 0}};
  const RunConfig cfg = parse_config(j);
  cmd_gen_expert(cfg, 1, cfg.expert_dataset);
  const Dataset ds = read_dataset(cfg.expert_dataset);
  EXPECT_TRUE(ds.transitions.empty());
  EXPECT_EQ(ds.header.env_hash, cfg.env.hash());
  EXPECT_THROW(train_run(cfg, 1, dir / "run"), DataError);
}

TEST(GenExpert, UnwritablePathFails) {
  const fs::path dir = scratch("gen_bad");
  const RunConfig cfg = parse_config(tiny_config(dir, "fmirl"));
  std::ofstream(dir / "file") << "x";
  EXPECT_THROW(cmd_gen_expert(cfg, 1, (dir / "file" / "sub" / "e.jsonl").string()), Error);
}

// ---- training ----

TEST(Train, MissingOrMismatchedExpertDataIsRejected) {
  const fs::path dir = scratch("train_missing");
  const RunConfig cfg = parse_config(tiny_config(dir, "fmirl"));
  EXPECT_THROW(train_run(cfg, 1, dir / "run"), ConfigError);

  json j = tiny_config(dir, "fmirl");
  j["env"] = {{"name", "maze_cont"}};
  const RunConfig maze = parse_config(j);
  cmd_gen_expert(maze, 1, maze.expert_dataset);
  EXPECT_THROW(train_run(cfg, 1, dir / "run"), ConfigError);  // hash mismatch
}

TEST(Train, FpBcConsumesNoEnvSteps) {
  const fs::path dir = scratch("train_fp");
  const RunConfig cfg = with_expert(dir, "fp_bc");
  const RunResult r = train_run(cfg, 1, dir / "run");
  EXPECT_EQ(r.env_steps, 0);
  const auto rows = read_rows(dir / "run" / "metrics.jsonl");
  ASSERT_FALSE(rows.empty());
  for (const auto& row : rows) EXPECT_EQ(row["env_steps"].get<std::int64_t>(), 0);
  EXPECT_TRUE(fs::exists(dir / "run" / "final.ckpt"));
}

TEST(Train, FmirlIsDeterministicPerSeed) {
  const fs::path dir = scratch("train_det");
  const RunConfig cfg = with_expert(dir, "fmirl");
  train_run(cfg, 3, dir / "a");
  train_run(cfg, 3, dir / "b");
  train_run(cfg, 4, dir / "c");
  const std::string a = slurp(dir / "a" / "metrics.jsonl");
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, slurp(dir / "b" / "metrics.jsonl"));
  EXPECT_NE(a, slurp(dir / "c" / "metrics.jsonl"));
  EXPECT_EQ(slurp(dir / "a" / "final.ckpt"), slurp(dir / "b" / "final.ckpt"));
}

TEST(Train, FmirlAndGailSpendTheSameBudget) {
  const fs::path dir = scratch("train_parity");
  RunConfig cfg = with_expert(dir, "fmirl");
  const RunResult f = train_run(cfg, 1, dir / "fm");
  cfg.method = Method::gail;
  const RunResult g = train_run(cfg, 1, dir / "gail");
  EXPECT_EQ(f.env_steps, g.env_steps);
  EXPECT_EQ(f.env_steps, cfg.train.total_env_steps);
  std::vector<std::int64_t> fs_, gs_;
  for (const auto& r : read_rows(dir / "fm" / "metrics.jsonl")) fs_.push_back(r["env_steps"]);
  for (const auto& r : read_rows(dir / "gail" / "metrics.jsonl")) gs_.push_back(r["env_steps"]);
  EXPECT_EQ(fs_, gs_);
}

TEST(Train, MetricsRowsCarryTheExpectedFields) {
  const fs::path dir = scratch("train_rows");
  const RunConfig cfg = with_expert(dir, "fmirl");
  const RunResult r = train_run(cfg, 1, dir / "run");
  const auto rows = read_rows(dir / "run" / "metrics.jsonl");
  ASSERT_EQ(static_cast<int>(rows.size()), r.rounds);
  for (const char* key : {"method", "seed", "round", "env_steps", "success_rate", "mean_return", "disc_loss",
                          "reward_mean", "reg_loss", "policy_loss"})
    EXPECT_TRUE(rows.back().contains(key)) << key;
  EXPECT_EQ(rows.back()["method"], "fmirl");
  EXPECT_TRUE(rows.back()["disc_loss"].is_number());
  EXPECT_TRUE(rows.back()["reg_loss"].is_number());
}

TEST(Train, PpoOmitsLearnedRewardFields) {
  const fs::path dir = scratch("train_ppo");
  const RunConfig cfg = parse_config(tiny_config(dir, "ppo_true_reward"));
  train_run(cfg, 1, dir / "run");
  const auto rows = read_rows(dir / "run" / "metrics.jsonl");
  ASSERT_FALSE(rows.empty());
  EXPECT_TRUE(rows.back()["disc_loss"].is_null());
  EXPECT_TRUE(rows.back()["reg_loss"].is_null());
  EXPECT_DOUBLE_EQ(rows.back()["reward_mean"].get<double>(), rows.back()["true_reward_mean"].get<double>());
}

TEST(Train, CheckpointsRestoreTheTrainedPolicy) {
  const fs::path dir = scratch("train_ckpt");
  json j = tiny_config(dir, "fmirl");
  j["train"]["checkpoint_every"] = 1;
  const RunConfig cfg = parse_config(j);
  cmd_gen_expert(cfg, 1, cfg.expert_dataset);
  const RunResult r = train_run(cfg, 1, dir / "run");
  EXPECT_TRUE(fs::exists(dir / "run" / "checkpoints" / "round_000001.ckpt"));
  const nn::Checkpoint ck = nn::load_checkpoint(dir / "run" / "final.ckpt");
  const CheckpointMeta meta = read_meta(ck);
  EXPECT_EQ(meta.method, Method::fmirl);
  EXPECT_EQ(meta.env_steps, r.env_steps);
  const Models m = restore_models(cfg, ck);
  ASSERT_TRUE(m.policy.has_value());
  const EvalResult ev = evaluate(cfg.env, student_actions(*m.policy, m.norm), cfg.train.eval_episodes,
                                 eval_seed_for(1));
  EXPECT_DOUBLE_EQ(ev.success_rate, r.final_eval.success_rate);
  EXPECT_DOUBLE_EQ(ev.mean_return, r.final_eval.mean_return);
}

TEST(Train, NumericalBlowUpWritesADiagnosticAndAborts) {
  const fs::path dir = scratch("train_nan");
  json j = tiny_config(dir, "fmirl");
  j["train"]["warmstart_lr"] = 1e300;
  j["train"]["warmstart_steps"] = 50;
  const RunConfig cfg = parse_config(j);
  cmd_gen_expert(cfg, 1, cfg.expert_dataset);
  EXPECT_THROW(train_run(cfg, 1, dir / "run"), NumericalError);
  ASSERT_TRUE(fs::exists(dir / "run" / "diagnostic.json"));
  const json d = json::parse(slurp(dir / "run" / "diagnostic.json"));
  EXPECT_TRUE(d.contains("error"));
  EXPECT_EQ(d["round"], 0);
}

// ---- eval ----

TEST(Eval, NoiseListParsing) {
  EXPECT_EQ(parse_noise_list("1.0,1.5,2.25"), (std::vector<double>{1.0, 1.5, 2.25}));
  EXPECT_EQ(parse_noise_list(" 2 "), (std::vector<double>{2.0}));
  EXPECT_TRUE(parse_noise_list("").empty());
  EXPECT_THROW(parse_noise_list("1.0,abc"), UsageError);
  EXPECT_THROW(parse_noise_list("1.5x"), UsageError);
}

TEST(Eval, EmptyNoiseListIsAUsageError) {
  const fs::path dir = scratch("eval_empty");
  const RunConfig cfg = parse_config(tiny_config(dir, "ppo_true_reward"));
  EXPECT_THROW(cmd_eval(cfg, (dir / "nothing").string(), {}, ""), UsageError);
  EXPECT_THROW(cmd_eval(cfg, (dir / "nothing").string(), {0.5}, ""), UsageError);
}

TEST(Eval, SweepWritesPerSeedResults) {
  const fs::path dir = scratch("eval_sweep");
  json j = tiny_config(dir, "ppo_true_reward");
  j["seeds"] = {1, 2};
  const RunConfig cfg = parse_config(j);
  cmd_train(cfg);
  const EvalReport rep = cmd_eval(cfg, cfg.output_dir, {1.0, 2.25}, "");
  ASSERT_EQ(rep.seeds.size(), 2u);
  ASSERT_EQ(rep.mean.size(), 2u);
  EXPECT_EQ(rep.seeds[0].seed, 1u);
  EXPECT_EQ(rep.seeds[1].seed, 2u);
  for (std::size_t k = 0; k < 2; ++k)
    EXPECT_NEAR(rep.mean[k].eval.success_rate,
                0.5 * (rep.seeds[0].results[k].eval.success_rate + rep.seeds[1].results[k].eval.success_rate), 1e-12);
  const json out = json::parse(slurp(fs::path(cfg.output_dir) / "eval_results.json"));
  EXPECT_EQ(out["per_seed"].size(), 2u);
  // Noise 1.0 through eval reproduces the training-time final evaluation.
  const auto rows = read_rows(seed_dir(cfg.output_dir, 1) / "metrics.jsonl");
  EXPECT_DOUBLE_EQ(rep.seeds[0].results[0].eval.success_rate, rows.back()["success_rate"].get<double>());
}

TEST(Eval, EnvMismatchIsAConfigError) {
  const fs::path dir = scratch("eval_mismatch");
  const RunConfig cfg = parse_config(tiny_config(dir, "ppo_true_reward"));
  train_run(cfg, 1, dir / "run");
  json j = tiny_config(dir, "ppo_true_reward");
  j["env"] = {{"name", "maze_cont"}};
  const RunConfig maze = parse_config(j);
  EXPECT_THROW(cmd_eval(maze, (dir / "run" / "final.ckpt").string(), {1.0}, (dir / "r.json").string()), ConfigError);
  EXPECT_THROW(cmd_eval(cfg, (dir / "nowhere").string(), {1.0}, ""), ConfigError);
}

// ---- export ----

TEST(Export, RowsSeedsAndIdempotence) {
  const fs::path dir = scratch("export");
  json j = tiny_config(dir, "ppo_true_reward");
  j["seeds"] = {1, 2};
  const RunConfig cfg = parse_config(j);
  cmd_train(cfg);
  std::size_t metric_rows = 0;
  for (auto s : {1, 2}) metric_rows += read_rows(seed_dir(cfg.output_dir, s) / "metrics.jsonl").size();

  const fs::path csv = dir / "all.csv";
  const ExportSummary a = cmd_export(cfg.output_dir, csv.string());
  EXPECT_EQ(static_cast<std::size_t>(a.rows), metric_rows);
  EXPECT_EQ(a.skipped, 0);
  const std::string first = slurp(csv);
  std::istringstream in(first);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "method,seed,env_steps,success_rate,mean_return,disc_loss,reward_mean,reg_loss");
  std::set<std::string> seeds;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    std::istringstream cells(line);
    std::string method, seed;
    std::getline(cells, method, ',');
    std::getline(cells, seed, ',');
    EXPECT_EQ(method, "ppo_true_reward");
    seeds.insert(seed);
  }
  EXPECT_EQ(n, metric_rows);
  EXPECT_EQ(seeds, (std::set<std::string>{"1", "2"}));

  cmd_export(cfg.output_dir, csv.string());
  EXPECT_EQ(slurp(csv), first);
}

TEST(Export, MalformedRowsAreSkippedAndCounted) {
  const fs::path dir = scratch("export_bad");
  fs::create_directories(dir / "run");
  std::ofstream(dir / "run" / "metrics.jsonl")
      << R"({"method":"gail","seed":1,"env_steps":10,"success_rate":0.5})" << '\n'
      << "{truncated" << '\n'
      << R"({"seed":1})" << '\n'
      << R"({"method":"gail","seed":1,"env_steps":20,"success_rate":0.75,"reg_loss":null})" << '\n';
  const ExportSummary s = cmd_export(dir.string(), (dir / "out.csv").string());
  EXPECT_EQ(s.rows, 2);
  EXPECT_EQ(s.skipped, 2);
  const std::string csv = slurp(dir / "out.csv");
  EXPECT_NE(csv.find("gail,1,20,0.75,,,,\n"), std::string::npos);
  EXPECT_THROW(cmd_export((dir / "missing").string(), ""), ConfigError);
}

// ---- metrics stream ----

TEST(Metrics, EveryAppendedRowIsAParseableLine) {
  const fs::path dir = scratch("metrics");
  {
    MetricsWriter w((dir / "m.jsonl").string());
    for (int i = 0; i < 50; ++i) w.append(json{{"round", i}, {"value", 0.1 * i}, {"tag", std::string(i, 'x')}});
  }
  const auto rows = read_rows(dir / "m.jsonl");
  ASSERT_EQ(rows.size(), 50u);
  for (int i = 0; i < 50; ++i) EXPECT_EQ(rows[static_cast<std::size_t>(i)]["round"], i);
}

TEST(Metrics, AppendModeKeepsEarlierRows) {
  const fs::path dir = scratch("metrics_append");
  {
    MetricsWriter w((dir / "m.jsonl").string());
    w.append(json{{"a", 1}});
  }
  {
    MetricsWriter w((dir / "m.jsonl").string(), /*truncate=*/false);
    w.append(json{{"a", 2}});
  }
  EXPECT_EQ(read_rows(dir / "m.jsonl").size(), 2u);
}

}  // namespace
