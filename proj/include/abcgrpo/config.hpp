#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "abcgrpo/clip.hpp"
#include "abcgrpo/envs.hpp"
#include "abcgrpo/policy.hpp"

namespace abcgrpo {

struct TaskConfig {
  TaskKind kind = TaskKind::LastToken;
  int vocab_size = 16;
  int episode_len = 9;
  int needle_pos = 0;  // needle task only

  Task make() const;
  friend bool operator==(const TaskConfig&, const TaskConfig&) = default;
};

struct EvalConfig {
  std::size_t every = 0;  // 0 disables evaluation during training
  std::size_t problems = 32;
  int n = 64;
  std::vector<int> ks{2, 4, 8, 16, 32, 64};

  friend bool operator==(const EvalConfig&, const EvalConfig&) = default;
};

struct TrainConfig {
  TaskConfig task;
  int context_len = 2;
  int hidden = 32;
  double init_scale = 0.01;

  ClipMode mode = ClipMode::ABC;
  ClipConfig clip = ClipConfig::uniform(0.2);
  std::size_t group_size = 8;
  std::size_t prompts_per_batch = 16;
  std::size_t minibatches = 4;
  std::size_t steps = 500;
  double lr = 10.0;
  double momentum = 0.0;
  bool normalize_std = false;
  std::size_t checkpoint_every = 0;  // 0: initial and final checkpoints only
  std::uint64_t seed = 1;
  EvalConfig eval;

  PolicyShape policy_shape() const { return {task.vocab_size, context_len, hidden}; }

  // Throws ConfigError naming the offending key.
  void validate() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Everything a CLI invocation needs: the training setup, where to write and
/// which seeds a comparison sweeps.
struct RunConfig {
  TrainConfig train;
  std::filesystem::path output_dir;
  std::vector<std::uint64_t> seeds;  // empty: compare uses kDefaultSeeds
};

inline const std::vector<std::uint64_t> kDefaultSeeds{1, 2, 3, 4, 5};

// Unknown keys and ill-typed values raise ConfigError with the key path.
RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig load_run_config(const std::filesystem::path& path);

// Fully resolved form; parse_run_config(to_json(c)) reproduces c.
nlohmann::ordered_json to_json(const RunConfig& config);

}  // namespace abcgrpo
