#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "abcgrpo/error.hpp"
#include "abcgrpo/policy.hpp"
#include "abcgrpo/rng.hpp"
#include "oracles.hpp"

namespace abcgrpo {
namespace {

using testing::central_differences;
using testing::relative_error;
using testing::with_weights;

PolicyShape linear_shape(int v, int k = 2) { return {v, k, 0}; }

// Linear policy whose logits ignore the context and equal `bias`.
PolicyParams bias_only(const std::vector<double>& bias, int k = 2) {
  PolicyParams p(linear_shape(static_cast<int>(bias.size()), k));
  auto w = p.mutable_weights();
  std::copy(bias.begin(), bias.end(), w.end() - static_cast<std::ptrdiff_t>(bias.size()));
  return p;
}

TEST(Policy, ShapeAndParameterCount) {
  const PolicyParams hidden(PolicyShape{16, 2, 32});
  const std::size_t d = 3 * 17;
  EXPECT_EQ(hidden.input_dim(), d);
  EXPECT_EQ(hidden.num_params(), 32 * d + 32 + 16 * 32 + 16);
  const PolicyParams linear(linear_shape(16));
  EXPECT_EQ(linear.num_params(), 16 * d + 16);
}

TEST(Policy, ContextHoldsPromptAndRecentTokens) {
  const PolicyParams p(linear_shape(8, 2));
  const TokenSeq prompt{5};
  const TokenSeq seq{1, 2, 3};
  EXPECT_EQ(p.context_at(prompt, seq, 0), (Context{5, 8, 8}));
  EXPECT_EQ(p.context_at(prompt, seq, 1), (Context{5, 8, 1}));
  EXPECT_EQ(p.context_at(prompt, seq, 3), (Context{5, 2, 3}));
  EXPECT_EQ(p.context_at({}, seq, 2), (Context{8, 1, 2}));
}

TEST(Logprob, UniformPolicyGivesLogOneOverV) {
  const PolicyParams p(PolicyShape{16, 2, 32});
  const TokenSeq prompt{3};
  const TokenSeq seq{0, 15, 7, 7, 2};
  for (double lp : logprob(p, prompt, seq)) EXPECT_NEAR(lp, -std::log(16.0), 1e-12);
}

TEST(Logprob, NearDeterministicPolicy) {
  const PolicyParams p = bias_only({0.0, 60.0, 0.0, 0.0});
  for (double lp : logprob(p, TokenSeq{0}, TokenSeq{1, 1, 1})) EXPECT_NEAR(lp, 0.0, 1e-20);
}

TEST(Logprob, RejectsOutOfVocabularyTokens) {
  const PolicyParams p(linear_shape(4));
  EXPECT_THROW(logprob(p, TokenSeq{0}, TokenSeq{4}), InvalidInput);
  EXPECT_THROW(logprob(p, TokenSeq{0}, TokenSeq{-1}), InvalidInput);
}

TEST(Policy, SoftmaxNormalizedEverywhere) {
  const PolicyParams p = PolicyParams::initialized(PolicyShape{6, 2, 5}, 9, 2.0);
  for (Token a = 0; a <= 6; ++a) {
    for (Token b = 0; b <= 6; ++b) {
      for (Token c = 0; c <= 6; ++c) {
        double s = 0.0;
        for (double q : p.probs(Context{a, b, c})) s += q;
        EXPECT_NEAR(s, 1.0, 1e-9);
      }
    }
  }
}

TEST(Policy, InitializationIsSeededAndSmall) {
  const auto a = PolicyParams::initialized(PolicyShape{}, 4);
  const auto b = PolicyParams::initialized(PolicyShape{}, 4);
  const auto c = PolicyParams::initialized(PolicyShape{}, 5);
  EXPECT_TRUE(std::equal(a.weights().begin(), a.weights().end(), b.weights().begin()));
  EXPECT_FALSE(std::equal(a.weights().begin(), a.weights().end(), c.weights().begin()));
  for (double w : a.weights()) EXPECT_LT(std::abs(w), 0.01);
}

TEST(Entropy, Examples) {
  const std::vector<Context> ctx{{0, 4, 4}};
  EXPECT_NEAR(entropy(PolicyParams(linear_shape(4)), ctx), std::log(4.0), 1e-12);
  EXPECT_NEAR(entropy(bias_only({1000.0, 0.0, 0.0, 0.0}), ctx), 0.0, 1e-12);
  EXPECT_NEAR(entropy(bias_only({0.0, 0.0, -1000.0, -1000.0}), ctx), std::log(2.0), 1e-12);
  EXPECT_THROW(entropy(PolicyParams(linear_shape(4)), std::vector<Context>{}), InvalidInput);
}

TEST(GradLogprob, MatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  const PolicyShape shapes[] = {{5, 2, 4}, {4, 1, 0}, {6, 2, 3}, {3, 3, 2}};
  for (const auto& shape : shapes) {
    for (int trial = 0; trial < 5; ++trial) {
      const PolicyParams base = PolicyParams::initialized(shape, rng(), 0.8);
      std::uniform_int_distribution<int> tok(0, shape.vocab_size - 1);
      const TokenSeq prompt{static_cast<Token>(tok(rng))};
      TokenSeq seq(5);
      for (auto& t : seq) t = static_cast<Token>(tok(rng));
      for (std::size_t idx = 0; idx < seq.size(); ++idx) {
        const auto analytic = grad_logprob(base, prompt, seq, idx);
        const auto w0 = std::vector<double>(base.weights().begin(), base.weights().end());
        const auto numeric = central_differences(
            w0, [&](const std::vector<double>& w) { return logprob(with_weights(base, w), prompt, seq)[idx]; }, 1e-6);
        EXPECT_LT(relative_error(analytic, numeric), 1e-6);
      }
    }
  }
}

TEST(GradLogprob, ScoreIdentity) {
  const PolicyParams p = PolicyParams::initialized(PolicyShape{7, 2, 6}, 21, 1.0);
  const TokenSeq prompt{2};
  TokenSeq seq{4, 1, 0};
  const Context ctx = p.context_at(prompt, seq, 2);
  const auto probs = p.probs(ctx);
  std::vector<double> expectation(p.num_params(), 0.0);
  for (Token v = 0; v < 7; ++v) {
    seq[2] = v;
    const auto g = grad_logprob(p, prompt, seq, 2);
    for (std::size_t i = 0; i < g.size(); ++i) expectation[i] += probs[static_cast<std::size_t>(v)] * g[i];
  }
  for (double e : expectation) EXPECT_NEAR(e, 0.0, 1e-8);
}

TEST(GradLogprob, ClosedFormForUniformLinearPolicy) {
  const int v = 5;
  const PolicyParams p(linear_shape(v, 2));
  const std::size_t width = v + 1;
  const std::size_t d = 3 * width;
  const TokenSeq prompt{3};
  const TokenSeq seq{1, 4, 2};
  const std::size_t idx = 2;
  const Token y = seq[idx];
  const std::vector<std::size_t> active{0 * width + 3, 1 * width + 1, 2 * width + 4};
  const auto g = grad_logprob(p, prompt, seq, idx);
  for (std::size_t o = 0; o < static_cast<std::size_t>(v); ++o) {
    const double expected = (static_cast<Token>(o) == y ? 1.0 : 0.0) - 1.0 / v;
    for (std::size_t col = 0; col < d; ++col) {
      const bool on = std::find(active.begin(), active.end(), col) != active.end();
      EXPECT_NEAR(g[o * d + col], on ? expected : 0.0, 1e-15) << "row " << o << " col " << col;
    }
    EXPECT_NEAR(g[static_cast<std::size_t>(v) * d + o], expected, 1e-15);
  }
}

TEST(GradLogprob, RejectsBadIndex) {
  const PolicyParams p(linear_shape(4));
  EXPECT_THROW(grad_logprob(p, TokenSeq{0}, TokenSeq{1, 2}, 2), InvalidInput);
}

TEST(SampleGroup, DeterministicPerSeed) {
  const PolicySnapshot snap(PolicyParams::initialized(PolicyShape{}, 3, 0.5));
  RngStream a(99), b(99);
  const TokenSeq prompt{4};
  EXPECT_EQ(sample_group(snap, prompt, 8, 9, a), sample_group(snap, prompt, 8, 9, b));
}

TEST(SampleGroup, DeterministicPolicyGivesIdenticalSequences) {
  const PolicySnapshot snap(bias_only({0.0, 0.0, 200.0, 0.0}));
  RngStream rng(1);
  const auto group = sample_group(snap, TokenSeq{0}, 6, 5, rng);
  for (const auto& s : group) EXPECT_EQ(s, TokenSeq(5, 2));
}

TEST(SampleGroup, UniformPolicyFrequencies) {
  const PolicySnapshot snap(PolicyParams(linear_shape(4)));
  RngStream rng(2024);
  const std::size_t g = 4096;
  const auto group = sample_group(snap, TokenSeq{0}, g, 1, rng);
  std::array<int, 4> counts{};
  for (const auto& s : group) ++counts[static_cast<std::size_t>(s[0])];
  const double sd = std::sqrt(g * 0.25 * 0.75);
  for (int c : counts) EXPECT_LT(std::abs(c - g * 0.25), 4.0 * sd);
}

TEST(SampleGroup, RejectsBadShapes) {
  const PolicySnapshot snap(PolicyParams(linear_shape(4)));
  RngStream rng(1);
  EXPECT_THROW(sample_group(snap, TokenSeq{0}, 1, 3, rng), InvalidInput);
  EXPECT_THROW(sample_group(snap, TokenSeq{0}, 2, 0, rng), InvalidInput);
}

TEST(ApplyUpdate, Examples) {
  PolicyParams p = PolicyParams::initialized(PolicyShape{4, 1, 0}, 7);
  const std::vector<double> before(p.weights().begin(), p.weights().end());
  apply_update(p, std::vector<double>(p.num_params(), 0.0), 0.5);
  EXPECT_EQ(p.version(), 1u);
  EXPECT_TRUE(std::equal(before.begin(), before.end(), p.weights().begin()));

  std::vector<double> g(p.num_params(), 3.0);
  apply_update(p, g, 0.0);
  EXPECT_TRUE(std::equal(before.begin(), before.end(), p.weights().begin()));

  g.assign(p.num_params(), 0.0);
  g[5] = 2.0;
  apply_update(p, g, 0.25);
  EXPECT_EQ(p.weights()[5], before[5] + 0.5);
  EXPECT_EQ(p.version(), 3u);
}

TEST(ApplyUpdate, Errors) {
  PolicyParams p(linear_shape(4));
  EXPECT_THROW(apply_update(p, std::vector<double>(3, 0.0), 1.0), InvalidInput);
  std::vector<double> g(p.num_params(), 0.0);
  g[0] = NAN;
  EXPECT_THROW(apply_update(p, g, 1.0), NumericalFailure);
}

TEST(PolicySnapshot, UnaffectedByLaterUpdates) {
  PolicyParams p = PolicyParams::initialized(PolicyShape{}, 1);
  p.set_version(7);
  const PolicySnapshot snap(p);
  const std::vector<double> frozen(snap->weights().begin(), snap->weights().end());
  apply_update(p, std::vector<double>(p.num_params(), 1.0), 1.0);
  EXPECT_EQ(snap.version(), 7u);
  EXPECT_EQ(p.version(), 8u);
  EXPECT_TRUE(std::equal(frozen.begin(), frozen.end(), snap->weights().begin()));
}

TEST(Checkpoint, RoundTripsExactly) {
  PolicyParams p = PolicyParams::initialized(PolicyShape{5, 2, 3}, 77, 0.3);
  p.set_version(12);
  const auto path = std::filesystem::temp_directory_path() / "abcgrpo_test_policy.ckpt";
  save_checkpoint(p, path);
  const PolicyParams q = load_checkpoint(path);
  EXPECT_EQ(q.shape(), p.shape());
  EXPECT_EQ(q.version(), 12u);
  EXPECT_TRUE(std::equal(p.weights().begin(), p.weights().end(), q.weights().begin()));
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsTruncatedFiles) {
  const PolicyParams p(linear_shape(4));
  const auto path = std::filesystem::temp_directory_path() / "abcgrpo_test_trunc.ckpt";
  save_checkpoint(p, path);
  std::filesystem::resize_file(path, 80);
  EXPECT_THROW(load_checkpoint(path), Error);
  std::filesystem::remove(path);
  EXPECT_THROW(load_checkpoint(path), Error);
}

}  // namespace
}  // namespace abcgrpo
