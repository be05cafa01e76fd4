#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "abcgrpo/config.hpp"
#include "abcgrpo/metrics.hpp"
#include "abcgrpo/policy.hpp"

namespace abcgrpo {

struct EvalPoint {
  double avg_at_n = 0.0;
  int n = 0;
  std::vector<int> ks;
  std::vector<double> pass_at_k;

  friend bool operator==(const EvalPoint&, const EvalPoint&) = default;
};

/// Per-step diagnostics. Serialized as one JSON object per line.
///
/// quadrant_counts counts clip events under the four-boundary bounds of the
/// run's ClipConfig, in both modes. For a GRPO run this includes Q2/Q4 tokens
/// that GRPO itself leaves unclipped ("would-be-clipped"). clip_fraction is
/// the sum of those counts over token_count; active_clip_fraction is the share
/// of tokens whose gradient the run's own rule actually zeroed.
struct StepTelemetry {
  std::size_t step = 0;
  double objective = 0.0;
  double grad_norm = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double active_clip_fraction = 0.0;
  QuadrantCounts quadrant_counts{};
  double mean_reward = 0.0;
  double misattribution_rate = 0.0;
  std::size_t degenerate_group_count = 0;
  std::size_t token_count = 0;
  std::size_t ratio_overflow_count = 0;
  std::optional<EvalPoint> eval;

  std::int64_t clip_events() const;
  // Share of clip events per quadrant; all zero when there are none.
  std::array<double, 4> quadrant_shares() const;

  friend bool operator==(const StepTelemetry&, const StepTelemetry&) = default;
};

nlohmann::ordered_json to_json(const StepTelemetry& t);
StepTelemetry telemetry_from_json(const nlohmann::json& j);
std::vector<StepTelemetry> read_telemetry(const std::filesystem::path& jsonl);

class TelemetrySink {
public:
  virtual ~TelemetrySink() = default;
  virtual void write(const StepTelemetry& t) = 0;
};

class JsonlSink : public TelemetrySink {
public:
  explicit JsonlSink(const std::filesystem::path& path);
  void write(const StepTelemetry& t) override;

private:
  std::filesystem::path path_;
  std::ofstream out_;
};

class MemorySink : public TelemetrySink {
public:
  void write(const StepTelemetry& t) override { steps.push_back(t); }
  std::vector<StepTelemetry> steps;
};

struct TrainerState {
  PolicyParams policy;
  std::vector<double> velocity;  // momentum buffer, empty when momentum is 0
  std::size_t step = 0;
};

TrainerState initial_state(const TrainConfig& config);

struct StepResult {
  StepTelemetry telemetry;
  // max |log r| over the first minibatch; zero because no update has happened
  // yet in the step.
  double first_minibatch_max_log_ratio = 0.0;
};

/// One iteration: snapshot the policy, sample G responses for each prompt,
/// score, compute group advantages, then take one gradient step per
/// minibatch shard with every ratio measured against the snapshot.
StepResult run_step(TrainerState& state, const TrainConfig& config);

// Runs config.steps steps and returns the telemetry without touching disk.
std::vector<StepTelemetry> train_in_memory(const TrainConfig& config, TrainerState* final_state = nullptr);

struct RunArtifacts {
  std::filesystem::path dir;
  std::vector<StepTelemetry> telemetry;
  std::vector<std::filesystem::path> checkpoints;
};

/// Writes {config.json, telemetry.jsonl, checkpoints/, report.json} under
/// `dir` (run.output_dir when empty). Files already written are left in place
/// if a later write fails.
RunArtifacts train(const RunConfig& run, const std::filesystem::path& dir = {},
                   std::span<TelemetrySink* const> extra_sinks = {});

struct MetricComparison {
  std::string metric;
  std::size_t wins_a = 0;
  std::size_t wins_b = 0;
  std::size_t ties = 0;
  double mean_delta = 0.0;  // mean over seeds of (b - a)
};

struct SeedComparison {
  std::uint64_t seed = 0;
  std::vector<StepTelemetry> a;
  std::vector<StepTelemetry> b;
};

struct ComparisonReport {
  TrainConfig config_a;
  TrainConfig config_b;
  std::vector<SeedComparison> runs;
  std::vector<MetricComparison> metrics;
  std::vector<std::string> notes;  // e.g. small-sample warnings
};

// Mean over steps with clip events of each quadrant's share.
std::array<double, 4> mean_quadrant_shares(std::span<const StepTelemetry> series);

inline constexpr std::size_t kMinSeedsForSummary = 3;

/// Runs both configurations once per seed. The configurations may differ only
/// in mode and clip thresholds.
ComparisonReport compare_runs(const TrainConfig& a, const TrainConfig& b, std::span<const std::uint64_t> seeds);

// seed_<s>.csv paired series plus summary.txt and summary.json.
void write_comparison(const ComparisonReport& report, const std::filesystem::path& dir);

}  // namespace abcgrpo
