#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "abcgrpo/clip.hpp"
#include "abcgrpo/policy.hpp"
#include "abcgrpo/token_batch.hpp"

namespace abcgrpo {

enum class Surrogate { PPO, GRPO, ABC };

inline Surrogate surrogate_for(ClipMode mode) { return mode == ClipMode::ABC ? Surrogate::ABC : Surrogate::GRPO; }

struct SurrogateResult {
  double objective = 0.0;
  std::vector<double> per_token_terms;
  std::vector<double> ratios;
  std::vector<std::uint8_t> clip_mask;  // 1 where the term is constant in r
  QuadrantCounts quadrant_counts{};     // every record, by quadrant
  QuadrantCounts clip_counts{};         // clipped records, by quadrant
  std::size_t overflow_count = 0;

  std::size_t clipped() const;
};

// Token-mean of min(r A, clip(r, 1-eps, 1+eps) A) with caller-supplied
// per-token advantages; length weights are ignored.
SurrogateResult ppo_objective(const TokenBatch& batch, std::span<const double> logp_new, double eps);

// sum_i (1/|y_i|) sum_t min(r A_i, clip(r, 1-eps, 1+eps) A_i) / sequence_count.
SurrogateResult grpo_objective(const TokenBatch& batch, std::span<const double> logp_new, double eps);

// Same normalization as grpo_objective with each term clip_abc(r, A_i) * A_i.
SurrogateResult abc_objective(const TokenBatch& batch, std::span<const double> logp_new, const ClipConfig& cfg);

// Dispatches on kind. For PPO and GRPO only cfg.grpo_eps is read.
SurrogateResult surrogate_objective(Surrogate kind, const TokenBatch& batch, std::span<const double> logp_new,
                                    const ClipConfig& cfg);

// log pi(record token) under policy for every record of the batch.
std::vector<double> batch_logprobs(const TokenBatch& batch, const PolicyParams& policy);

struct SurrogateGradient {
  SurrogateResult result;
  std::vector<double> gradient;  // ascent direction of result.objective
};

/// Objective and its exact gradient at the current policy. Unclipped records
/// contribute weight * A * r * grad log pi; clipped records contribute
/// nothing. Records are reduced in index order. Throws NumericalFailure naming
/// the record when a contribution is non-finite.
SurrogateGradient surrogate_gradient(Surrogate kind, const TokenBatch& batch, const PolicyParams& policy,
                                     const ClipConfig& cfg);

std::vector<double> abc_gradient(const TokenBatch& batch, const PolicyParams& policy, const ClipConfig& cfg);
std::vector<double> grpo_gradient(const TokenBatch& batch, const PolicyParams& policy, double eps);
std::vector<double> ppo_gradient(const TokenBatch& batch, const PolicyParams& policy, double eps);

struct GradientAudit {
  std::vector<double> token_norms;  // || A * r * grad log pi || when unclipped, else 0
  double empirical_max = 0.0;
  std::size_t argmax = 0;
  double g_max = 0.0;  // the G_max used for the bound
  double measured_g_max = 0.0;
  double a_max = 0.0;
  double bound = 0.0;
  bool pass = true;
};

/// Checks every per-token gradient contribution against
/// gradient_bound(a_max, cfg, g_max). When g_max is not given, the largest
/// measured ||grad log pi|| over the batch is used. In GRPO mode tokens are
/// clipped by the conditional rule, so a Q4 token with a large ratio can break
/// the ceiling computed from cfg.
GradientAudit gradient_norm_audit(const TokenBatch& batch, const PolicyParams& policy, const ClipConfig& cfg,
                                  ClipMode mode, double a_max, std::optional<double> g_max = std::nullopt);

}  // namespace abcgrpo
