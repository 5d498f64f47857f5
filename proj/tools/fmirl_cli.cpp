// fmirl command-line entry point.
//
//   fmirl gen-expert --config CFG [--seed N] [--out FILE]
//   fmirl train      --config CFG [--seed N] [--out DIR]
//   fmirl eval       --config CFG --checkpoint PATH [--noise "1.0,1.5,2.25"] [--out FILE]
//   fmirl export     --out CSV DIR
//
// Exit codes: 0 ok, 2 configuration/usage error, 3 data error, 4 numerical failure.

#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "fmirl/harness/commands.hpp"

namespace {

using namespace fmirl;
using namespace fmirl::harness;

RunConfig load_with_overrides(const std::string& path, const std::optional<std::uint64_t>& seed) {
  RunConfig cfg = load_config(path);
  if (seed) cfg.seeds = {*seed};
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Flow-matching inverse RL on toy control tasks"};
  app.require_subcommand(1);

  std::string config_path, out, checkpoint, noise = "1.0", metrics_dir;
  std::optional<std::uint64_t> seed;

  auto* gen = app.add_subcommand("gen-expert", "Write scripted expert trajectories");
  gen->add_option("--config", config_path, "Run config (JSON)")->required();
  gen->add_option("--seed", seed, "Seed (default: first configured seed)");
  gen->add_option("--out", out, "Output file (default: expert_dataset)");

  auto* train = app.add_subcommand("train", "Train one run per seed");
  train->add_option("--config", config_path, "Run config (JSON)")->required();
  train->add_option("--seed", seed, "Train only this seed");
  train->add_option("--out", out, "Output directory (default: output_dir)");

  auto* eval = app.add_subcommand("eval", "Evaluate checkpoints across noise multipliers");
  eval->add_option("--config", config_path, "Run config (JSON)")->required();
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file or run directory")->required();
  eval->add_option("--noise", noise, "Comma-separated noise multipliers");
  eval->add_option("--out", out, "Results file (default: next to the checkpoint)");

  auto* exp = app.add_subcommand("export", "Merge metrics files into one CSV");
  exp->add_option("dir", metrics_dir, "Directory holding run outputs")->required();
  exp->add_option("--out", out, "CSV path (default: DIR/metrics.csv)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::config);
  }

  try {
    if (*gen) {
      const RunConfig cfg = load_with_overrides(config_path, seed);
      cmd_gen_expert(cfg, cfg.seeds.front(), out.empty() ? cfg.expert_dataset : out, &std::cout);
    } else if (*train) {
      RunConfig cfg = load_with_overrides(config_path, seed);
      if (!out.empty()) cfg.output_dir = out;
      cmd_train(cfg, &std::cout);
    } else if (*eval) {
      const RunConfig cfg = load_config(config_path);
      cmd_eval(cfg, checkpoint, parse_noise_list(noise), out, &std::cout);
    } else if (*exp) {
      cmd_export(metrics_dir, out, &std::cerr);
    }
  } catch (const fmirl::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.code());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::data);
  }
  return 0;
}
