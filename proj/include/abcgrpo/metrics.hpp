#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "abcgrpo/envs.hpp"
#include "abcgrpo/policy.hpp"

namespace abcgrpo {

struct EvalSample {
  std::size_t problem_id = 0;
  int n = 0;  // samples drawn
  int c = 0;  // correct samples
};

/// Unbiased estimate of the probability that at least one of k draws (without
/// replacement from the n samples) is correct: 1 - C(n-c, k) / C(n, k),
/// evaluated as a running product. k == 1 returns c / n directly.
double pass_at_k(int n, int c, int k);

// Mean of c / n over problems. All samples must share n.
double avg_at_n(std::span<const EvalSample> samples);

struct EvalReport {
  std::size_t problem_count = 0;
  int n = 0;
  double avg_at_n = 0.0;
  std::vector<int> ks;
  std::vector<double> pass_at_k;  // aligned with ks
  std::vector<EvalSample> samples;
};

/// Samples n responses for each of `problems` held-out prompts and scores
/// them. Prompts and responses come from evaluation streams derived from
/// `seed`, which never coincide with the training streams.
EvalReport evaluate_policy(const PolicySnapshot& snapshot, const Task& task, std::size_t problems, int n,
                           std::span<const int> ks, std::uint64_t seed);

// eval_report.csv (problem_count,n,avg_at_n,pass@k...) and eval_report.json
// (metadata including the estimator used).
void write_eval_report(const EvalReport& report, const std::filesystem::path& dir);

}  // namespace abcgrpo
