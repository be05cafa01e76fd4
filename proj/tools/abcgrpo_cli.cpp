// Command-line entry point: train, eval, compare, report.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "abcgrpo/config.hpp"
#include "abcgrpo/error.hpp"
#include "abcgrpo/metrics.hpp"
#include "abcgrpo/report.hpp"
#include "abcgrpo/trainer.hpp"

namespace fs = std::filesystem;
using namespace abcgrpo;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

fs::path output_root() {
  if (const char* env = std::getenv("ABCGRPO_OUT_ROOT"); env && *env) return env;
  return "runs";
}

fs::path resolve_out(const std::string& flag, const RunConfig& rc, const std::string& fallback) {
  if (!flag.empty()) return flag;
  if (!rc.output_dir.empty()) return rc.output_dir;
  return output_root() / fallback;
}

void apply_mode_override(RunConfig& rc, const std::string& mode) {
  if (mode.empty()) return;
  try {
    rc.train.mode = clip_mode_from_string(mode);
  } catch (const InvalidInput& e) {
    throw ConfigError("--mode-override", e.what());
  }
  rc.train.validate();
}

int cmd_train(const std::string& config_path, const std::string& out, const std::string& mode,
              const std::vector<std::uint64_t>& seeds) {
  RunConfig rc = load_run_config(config_path);
  apply_mode_override(rc, mode);
  const fs::path dir = resolve_out(out, rc, "train");
  if (seeds.size() <= 1) {
    if (!seeds.empty()) rc.train.seed = seeds.front();
    const auto art = train(rc, dir);
    std::cout << "wrote " << art.telemetry.size() << " steps to " << art.dir.string() << '\n';
    return kExitOk;
  }
  for (std::uint64_t s : seeds) {
    RunConfig per_seed = rc;
    per_seed.train.seed = s;
    const auto art = train(per_seed, dir / ("seed_" + std::to_string(s)));
    std::cout << "wrote " << art.telemetry.size() << " steps to " << art.dir.string() << '\n';
  }
  return kExitOk;
}

int cmd_eval(const std::string& config_path, const std::string& checkpoint, const std::string& out,
             const std::vector<std::uint64_t>& seeds) {
  RunConfig rc = load_run_config(config_path);
  const TrainConfig& tc = rc.train;
  const PolicyParams policy = checkpoint.empty() ? initial_state(tc).policy : load_checkpoint(checkpoint);
  if (!(policy.shape() == tc.policy_shape())) throw InvalidInput("checkpoint shape does not match the config");
  const std::uint64_t seed = seeds.empty() ? tc.seed : seeds.front();
  const auto report = evaluate_policy(PolicySnapshot(policy), tc.task.make(), tc.eval.problems, tc.eval.n,
                                      tc.eval.ks, seed);
  const fs::path dir = resolve_out(out, rc, "eval");
  write_eval_report(report, dir);
  std::cout << "avg@" << report.n << " = " << report.avg_at_n;
  for (std::size_t i = 0; i < report.ks.size(); ++i) std::cout << "  pass@" << report.ks[i] << " = " << report.pass_at_k[i];
  std::cout << "\nwrote " << (dir / "eval_report.csv").string() << '\n';
  return kExitOk;
}

int cmd_compare(const std::string& path_a, const std::string& path_b, const std::string& out,
                std::vector<std::uint64_t> seeds) {
  const RunConfig a = load_run_config(path_a);
  const RunConfig b = load_run_config(path_b);
  std::string seed_note;
  if (seeds.empty()) seeds = a.seeds;
  if (seeds.empty()) {
    seeds = kDefaultSeeds;
    seed_note = "no seed list given; defaulted to 5 seeds (1 2 3 4 5)";
  }
  ComparisonReport rep = compare_runs(a.train, b.train, seeds);
  if (!seed_note.empty()) rep.notes.insert(rep.notes.begin(), seed_note);
  const fs::path dir = out.empty() ? output_root() / "compare" : fs::path(out);
  write_comparison(rep, dir);
  std::cout << "wrote comparison for " << rep.runs.size() << " seed(s) to " << dir.string() << '\n';
  return kExitOk;
}

int cmd_report(const std::string& run_dir, const std::string& out) {
  const fs::path dir = out.empty() ? fs::path(run_dir) / "plots" : fs::path(out);
  for (const auto& p : write_plot_data(run_dir, dir)) std::cout << "wrote " << p.string() << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Clipped group-relative policy optimization lab"};
  app.require_subcommand(1);

  std::string config, out, mode, checkpoint, run_dir;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> compare_configs;

  auto* train_cmd = app.add_subcommand("train", "train one policy from a run config");
  train_cmd->add_option("--config", config, "run config (JSON)")->required();
  train_cmd->add_option("--out", out, "run directory");
  train_cmd->add_option("--mode-override", mode, "grpo or abc");
  train_cmd->add_option("--seeds", seeds, "seed(s); several seeds write seed_<s>/ subdirectories")->delimiter(',');

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint with Avg@n and Pass@k");
  eval_cmd->add_option("--config", config, "run config (JSON)")->required();
  eval_cmd->add_option("--checkpoint", checkpoint, "policy checkpoint; defaults to the initial policy");
  eval_cmd->add_option("--out", out, "output directory");
  eval_cmd->add_option("--seeds", seeds, "evaluation seed")->delimiter(',');

  auto* compare_cmd = app.add_subcommand("compare", "paired multi-seed comparison of two configs");
  compare_cmd->add_option("configs", compare_configs, "config_a config_b")->expected(2);
  compare_cmd->add_option("--config", compare_configs, "alternative to the positional configs");
  compare_cmd->add_option("--seeds", seeds, "comma-separated seeds (default 1,2,3,4,5)")->delimiter(',');
  compare_cmd->add_option("--out", out, "output directory");

  auto* report_cmd = app.add_subcommand("report", "export plot-ready CSV files from a run directory");
  report_cmd->add_option("run_dir", run_dir, "run directory")->required();
  report_cmd->add_option("--out", out, "output directory (default <run_dir>/plots)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*train_cmd) return cmd_train(config, out, mode, seeds);
    if (*eval_cmd) return cmd_eval(config, checkpoint, out, seeds);
    if (*compare_cmd) {
      if (compare_configs.size() != 2) throw ConfigError("compare", "expected exactly two configs");
      return cmd_compare(compare_configs[0], compare_configs[1], out, seeds);
    }
    if (*report_cmd) return cmd_report(run_dir, out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitRuntime;
}
