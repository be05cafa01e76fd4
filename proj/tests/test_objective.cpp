#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "abcgrpo/error.hpp"
#include "abcgrpo/objective.hpp"
#include "oracles.hpp"

namespace abcgrpo {
namespace {

using testing::central_differences;
using testing::distance_to_bound;
using testing::random_batch;
using testing::RandomBatchOptions;
using testing::relative_error;
using testing::with_weights;

const ClipConfig kUniform = ClipConfig::uniform(0.2);

// Single-token sequences with the given advantages and logp_old = 0, so
// that logp_new = log(r) produces ratio r.
TokenBatch unit_batch(const std::vector<double>& adv, double logp_old = 0.0) {
  TokenBatch b;
  b.group_size = adv.size();
  for (std::size_t i = 0; i < adv.size(); ++i) {
    b.sequences.push_back({{0}, {static_cast<Token>(i % 4)}, 0});
    b.records.push_back({i, 0, logp_old, adv[i], 1.0});
  }
  return b;
}

std::vector<double> log_ratios(const std::vector<double>& r) {
  std::vector<double> out;
  for (double x : r) out.push_back(std::log(x));
  return out;
}

TEST(PpoObjective, Examples) {
  const TokenBatch one = unit_batch({0.7});
  EXPECT_DOUBLE_EQ(ppo_objective(one, log_ratios({1.0}), 0.2).objective, 0.7);
  const TokenBatch q4 = unit_batch({-0.5});
  EXPECT_NEAR(ppo_objective(q4, log_ratios({1.5}), 0.2).objective, -0.75, 1e-12);
  const TokenBatch zero = unit_batch({0.0, 0.0, 0.0});
  EXPECT_EQ(ppo_objective(zero, log_ratios({0.3, 1.0, 4.0}), 0.2).objective, 0.0);
}

TEST(PpoObjective, RejectsMisalignedInput) {
  const TokenBatch b = unit_batch({0.5, -0.5});
  EXPECT_THROW(ppo_objective(b, std::vector<double>{0.0}, 0.2), InvalidInput);
}

TEST(GrpoObjective, Examples) {
  const TokenBatch b = unit_batch({0.5, -0.5});
  EXPECT_NEAR(grpo_objective(b, log_ratios({1.0, 1.0}), 0.2).objective, 0.0, 1e-15);
  EXPECT_NEAR(grpo_objective(b, log_ratios({1.5, 1.5}), 0.2).objective, -0.075, 1e-12);
}

TEST(GrpoObjective, IdenticalPoliciesGiveZeroOnZeroSumGroups) {
  std::mt19937_64 rng(5);
  const PolicyParams p(PolicyShape{6, 2, 0});
  for (int trial = 0; trial < 20; ++trial) {
    RandomBatchOptions opts;
    opts.group_size = 8;
    opts.binary_rewards = true;
    opts.min_len = opts.max_len = 4;
    const TokenBatch b = random_batch(p, opts, rng);
    std::vector<double> same;
    for (const auto& r : b.records) same.push_back(r.logp_old);
    EXPECT_NEAR(grpo_objective(b, same, 0.2).objective, 0.0, 1e-15);
  }
}

TEST(AbcObjective, Examples) {
  const TokenBatch b = unit_batch({0.5, -0.5});
  const auto res = abc_objective(b, log_ratios({1.5, 1.5}), kUniform);
  EXPECT_NEAR(res.objective, 0.0, 1e-12);
  EXPECT_EQ(res.clipped(), 2u);
  EXPECT_EQ(res.quadrant_counts[index_of(Quadrant::Q1)], 1);
  EXPECT_EQ(res.quadrant_counts[index_of(Quadrant::Q4)], 1);
}

TEST(AbcObjective, InteriorRatiosGiveUnclippedSum) {
  std::mt19937_64 rng(8);
  const PolicyParams p = PolicyParams::initialized(PolicyShape{6, 2, 4}, 3, 0.5);
  for (int trial = 0; trial < 50; ++trial) {
    RandomBatchOptions opts;
    opts.ratio_lo = 0.85;
    opts.ratio_hi = 1.15;
    const TokenBatch b = random_batch(p, opts, rng);
    const auto lp = batch_logprobs(b, p);
    const auto res = abc_objective(b, lp, kUniform);
    double expected = 0.0;
    for (std::size_t i = 0; i < b.size(); ++i) {
      const auto& r = b.records[i];
      expected += r.length_weight * std::exp(lp[i] - r.logp_old) * r.adv;
    }
    expected /= static_cast<double>(b.sequence_count());
    EXPECT_NEAR(res.objective, expected, 1e-12);
    EXPECT_EQ(res.clipped(), 0u);
  }
}

TEST(AbcObjective, ResultInvariants) {
  std::mt19937_64 rng(13);
  const PolicyParams p = PolicyParams::initialized(PolicyShape{6, 2, 4}, 4, 0.5);
  for (int trial = 0; trial < 100; ++trial) {
    const TokenBatch b = random_batch(p, RandomBatchOptions{}, rng);
    const auto lp = batch_logprobs(b, p);
    const auto res = abc_objective(b, lp, kUniform);
    double weighted = 0.0, a_max = 0.0;
    for (std::size_t i = 0; i < b.size(); ++i) {
      weighted += b.records[i].length_weight * res.per_token_terms[i];
      a_max = std::max(a_max, std::abs(b.records[i].adv));
      if (b.records[i].adv > 0) EXPECT_GE(res.per_token_terms[i], 0.0);
    }
    EXPECT_NEAR(res.objective, weighted / static_cast<double>(b.sequence_count()), 1e-12);
    EXPECT_EQ(std::accumulate(res.quadrant_counts.begin(), res.quadrant_counts.end(), std::int64_t{0}),
              static_cast<std::int64_t>(b.size()));
    EXPECT_EQ(std::accumulate(res.clip_counts.begin(), res.clip_counts.end(), std::int64_t{0}),
              static_cast<std::int64_t>(res.clipped()));
    EXPECT_LE(std::abs(res.objective), a_max * (1.0 + kUniform.eps_max()) + 1e-12);
  }
}

TEST(AbcObjective, MatchesGrpoUnderInfiniteEps3) {
  std::mt19937_64 rng(17);
  const PolicyParams p = PolicyParams::initialized(PolicyShape{6, 2, 4}, 5, 0.5);
  const ClipConfig cfg = ClipConfig::grpo_equivalent(0.2);
  for (int trial = 0; trial < 100; ++trial) {
    const TokenBatch b = random_batch(p, RandomBatchOptions{}, rng);
    const auto lp = batch_logprobs(b, p);
    EXPECT_NEAR(abc_objective(b, lp, cfg).objective, grpo_objective(b, lp, 0.2).objective, 1e-12);
    const auto ga = abc_gradient(b, p, cfg);
    const auto gg = grpo_gradient(b, p, 0.2);
    EXPECT_LE(testing::max_abs_diff(ga, gg), 1e-10);
  }
}

TEST(AbcGradient, AllClippedGivesZero) {
  std::mt19937_64 rng(19);
  const PolicyParams p = PolicyParams::initialized(PolicyShape{6, 2, 4}, 6, 0.5);
  RandomBatchOptions opts;
  opts.ratio_lo = 2.0;
  opts.ratio_hi = 4.0;
  const TokenBatch b = random_batch(p, opts, rng);
  for (double g : abc_gradient(b, p, kUniform)) EXPECT_EQ(g, 0.0);
}

TEST(AbcGradient, SingleUnclippedRecord) {
  const PolicyParams p = PolicyParams::initialized(PolicyShape{5, 2, 3}, 8, 0.5);
  GroupRollout g;
  g.prompt = {1};
  g.sequences = {{2, 3}, {4}};
  g.rewards = {1.0, 0.0};
  g.advantages = {0.5, -0.5};
  const auto lp0 = logprob(p, g.prompt, g.sequences[0]);
  const auto lp1 = logprob(p, g.prompt, g.sequences[1]);
  // Record 1 has r = 1.1 (interior); the others are far outside their bounds.
  g.logprobs_old = {{lp0[0] - std::log(3.0), lp0[1] - std::log(1.1)}, {lp1[0] - std::log(0.1)}};
  const TokenBatch b = broadcast_to_tokens(g);
  const auto grad = abc_gradient(b, p, kUniform);
  const auto score = grad_logprob(p, g.prompt, g.sequences[0], 1);
  const double scale = 0.5 * 0.5 * 1.1 / 2.0;  // weight * A * r / G
  for (std::size_t i = 0; i < grad.size(); ++i) EXPECT_NEAR(grad[i], scale * score[i], 1e-12);
}

TEST(AbcGradient, MatchesFiniteDifferencesAwayFromBounds) {
  std::mt19937_64 rng(23);
  const ClipConfig cfgs[] = {kUniform, ClipConfig{0.1, 0.3, 0.4, 0.25, 0.2}};
  int checked = 0;
  for (int trial = 0; trial < 40; ++trial) {
    const PolicyParams p = PolicyParams::initialized(PolicyShape{4, 1, 3}, rng(), 0.7);
    RandomBatchOptions opts;
    opts.max_len = 4;
    opts.ratio_lo = 0.5;
    opts.ratio_hi = 1.6;
    const TokenBatch b = random_batch(p, opts, rng);
    const ClipConfig& cfg = cfgs[trial % 2];
    const auto lp = batch_logprobs(b, p);
    bool near = false;
    for (std::size_t i = 0; i < b.size(); ++i) {
      near |= distance_to_bound(std::exp(lp[i] - b.records[i].logp_old), b.records[i].adv, cfg, ClipMode::ABC) < 1e-4;
    }
    if (near) continue;
    const auto analytic = abc_gradient(b, p, cfg);
    const std::vector<double> w0(p.weights().begin(), p.weights().end());
    const auto numeric = central_differences(
        w0,
        [&](const std::vector<double>& w) {
          const auto q = with_weights(p, w);
          return abc_objective(b, batch_logprobs(b, q), cfg).objective;
        },
        1e-6);
    EXPECT_LT(relative_error(analytic, numeric), 1e-5);
    ++checked;
  }
  EXPECT_GT(checked, 20);
}

TEST(SurrogateGradient, PpoAndGrpoMatchFiniteDifferences) {
  std::mt19937_64 rng(29);
  for (Surrogate kind : {Surrogate::PPO, Surrogate::GRPO}) {
    int checked = 0;
    for (int trial = 0; trial < 20; ++trial) {
      const PolicyParams p = PolicyParams::initialized(PolicyShape{4, 1, 3}, rng(), 0.7);
      RandomBatchOptions opts;
      opts.max_len = 4;
      opts.ratio_lo = 0.5;
      opts.ratio_hi = 1.6;
      const TokenBatch b = random_batch(p, opts, rng);
      const auto lp = batch_logprobs(b, p);
      bool near = false;
      for (std::size_t i = 0; i < b.size(); ++i) {
        near |= distance_to_bound(std::exp(lp[i] - b.records[i].logp_old), b.records[i].adv, kUniform,
                                  ClipMode::GRPO) < 1e-4;
      }
      if (near) continue;
      const auto analytic = surrogate_gradient(kind, b, p, kUniform).gradient;
      const std::vector<double> w0(p.weights().begin(), p.weights().end());
      const auto numeric = central_differences(
          w0,
          [&](const std::vector<double>& w) {
            return surrogate_objective(kind, b, batch_logprobs(b, with_weights(p, w)), kUniform).objective;
          },
          1e-6);
      EXPECT_LT(relative_error(analytic, numeric), 1e-5);
      ++checked;
    }
    EXPECT_GT(checked, 5);
  }
}

TEST(SurrogateGradient, ClippedRecordsContributeNothing) {
  std::mt19937_64 rng(31);
  const PolicyParams p = PolicyParams::initialized(PolicyShape{5, 2, 3}, 9, 0.5);
  const TokenBatch b = random_batch(p, RandomBatchOptions{}, rng);
  const auto full = surrogate_gradient(Surrogate::ABC, b, p, kUniform);
  ASSERT_GT(full.result.clipped(), 0u);
  TokenBatch unclipped_only = b;
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (full.result.clip_mask[i]) unclipped_only.records[i].adv = 0.0;
  }
  const auto reduced = abc_gradient(unclipped_only, p, kUniform);
  EXPECT_EQ(full.gradient, reduced);
}

TEST(SurrogateGradient, NonFiniteContributionNamesRecord) {
  const PolicyParams p(PolicyShape{4, 1, 0});
  TokenBatch b = unit_batch({0.5, -0.5}, -std::log(4.0));  // r = 1 under the uniform policy
  b.records[1].adv = NAN;
  try {
    surrogate_gradient(Surrogate::ABC, b, p, kUniform);
    FAIL() << "expected NumericalFailure";
  } catch (const NumericalFailure& e) {
    EXPECT_EQ(e.record(), 1u);
  }
}

TEST(GradientAudit, ZeroAdvantageBatchPasses) {
  std::mt19937_64 rng(37);
  const PolicyParams p = PolicyParams::initialized(PolicyShape{5, 2, 3}, 10, 0.5);
  TokenBatch b = random_batch(p, RandomBatchOptions{}, rng);
  for (auto& r : b.records) r.adv = 0.0;
  const auto audit = gradient_norm_audit(b, p, kUniform, ClipMode::ABC, 0.0);
  EXPECT_EQ(audit.empirical_max, 0.0);
  EXPECT_TRUE(audit.pass);
}

TEST(GradientAudit, FiniteEps3AlwaysPasses) {
  std::mt19937_64 rng(41);
  const PolicyParams p = PolicyParams::initialized(PolicyShape{5, 2, 3}, 11, 0.5);
  for (int trial = 0; trial < 100; ++trial) {
    RandomBatchOptions opts;
    opts.binary_rewards = true;
    const TokenBatch b = random_batch(p, opts, rng);
    const auto audit = gradient_norm_audit(b, p, kUniform, ClipMode::ABC, 1.0);
    EXPECT_TRUE(audit.pass);
    EXPECT_LE(audit.empirical_max, audit.bound);
  }
}

TEST(GradientAudit, PlantedGrpoQ4TokenBreaksCeiling) {
  const PolicyParams p = PolicyParams::initialized(PolicyShape{5, 2, 3}, 12, 0.5);
  GroupRollout g;
  g.prompt = {0};
  g.sequences = {{1}, {2}};
  g.rewards = {0.0, 1.0};
  g.advantages = {-0.5, 0.5};
  const double lp_a = logprob(p, g.prompt, g.sequences[0])[0];
  const double lp_b = logprob(p, g.prompt, g.sequences[1])[0];
  g.logprobs_old = {{lp_a - std::log(5.0)}, {lp_b}};
  const TokenBatch b = broadcast_to_tokens(g);
  const auto grpo = gradient_norm_audit(b, p, kUniform, ClipMode::GRPO, 0.5);
  EXPECT_FALSE(grpo.pass);
  EXPECT_EQ(grpo.argmax, 0u);
  EXPECT_GT(grpo.empirical_max, grpo.bound);
  EXPECT_TRUE(gradient_norm_audit(b, p, kUniform, ClipMode::ABC, 0.5).pass);
}

}  // namespace
}  // namespace abcgrpo
