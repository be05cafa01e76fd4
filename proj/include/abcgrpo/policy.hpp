#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include "abcgrpo/rng.hpp"
#include "abcgrpo/token_batch.hpp"

namespace abcgrpo {

struct PolicyShape {
  int vocab_size = 16;
  int context_len = 2;
  int hidden = 32;  // 0 selects the linear layout

  friend bool operator==(const PolicyShape&, const PolicyShape&) = default;
};

// Slot 0 holds the last prompt token; slots 1..k the last k response tokens
// before the position, left-padded with BOS.
using Context = std::vector<Token>;

/// Autoregressive categorical policy over a small vocabulary.
///
/// Every step conditions on the prompt and the last context_len response
/// tokens. The input concatenates one one-hot code (vocab_size + 1 wide, the
/// extra symbol is BOS) per context slot. The linear layout maps that straight
/// to logits; the hidden layout inserts one tanh layer.
///
/// Weight layout, row-major:
///   hidden: W1[H x D], b1[H], W2[V x H], b2[V]
///   linear: W[V x D], b[V]
/// with D = (context_len + 1) * (vocab_size + 1).
class PolicyParams {
public:
  explicit PolicyParams(PolicyShape shape);

  // Weights uniform in (-scale, scale).
  static PolicyParams initialized(PolicyShape shape, std::uint64_t seed, double scale = 0.01);

  const PolicyShape& shape() const { return shape_; }
  int vocab_size() const { return shape_.vocab_size; }
  Token bos() const { return static_cast<Token>(shape_.vocab_size); }
  std::size_t context_slots() const { return static_cast<std::size_t>(shape_.context_len) + 1; }
  std::size_t input_dim() const;
  std::size_t num_params() const { return weights_.size(); }

  std::span<const double> weights() const { return weights_; }
  std::span<double> mutable_weights() { return weights_; }
  std::uint64_t version() const { return version_; }
  void set_version(std::uint64_t v) { version_ = v; }
  void bump_version() { ++version_; }

  Context context_at(std::span<const Token> prompt, std::span<const Token> seq, std::size_t t) const;

  void logits(std::span<const Token> ctx, std::span<double> out) const;
  std::vector<double> log_probs(std::span<const Token> ctx) const;
  std::vector<double> probs(std::span<const Token> ctx) const;

  double logprob_token(std::span<const Token> ctx, Token token) const;

  // Adds scale * d/dw log pi(token | ctx) into grad and returns log pi.
  double accumulate_grad_logprob(std::span<const Token> ctx, Token token, double scale, std::span<double> grad) const;

  // Throws InvalidInput for tokens outside the vocabulary.
  void check_token(Token token) const;

private:
  struct Layout {
    std::size_t w1, b1, w2, b2;
  };
  Layout layout() const;
  void forward(std::span<const Token> ctx, std::span<double> hidden, std::span<double> logits) const;

  PolicyShape shape_;
  std::vector<double> weights_;
  std::uint64_t version_ = 0;
};

/// Frozen copy of a policy. Shares its parameters immutably.
class PolicySnapshot {
public:
  explicit PolicySnapshot(const PolicyParams& source)
      : params_(std::make_shared<const PolicyParams>(source)) {}

  const PolicyParams& params() const { return *params_; }
  const PolicyParams* operator->() const { return params_.get(); }
  std::uint64_t version() const { return params_->version(); }

private:
  std::shared_ptr<const PolicyParams> params_;
};

// Per-token log pi(sequence[t] | prompt, sequence[<t]).
std::vector<double> logprob(const PolicyParams& policy, std::span<const Token> prompt, std::span<const Token> seq);

std::vector<double> grad_logprob(const PolicyParams& policy, std::span<const Token> prompt,
                                 std::span<const Token> seq, std::size_t token_index);

// Mean next-token entropy (nats) over the given contexts.
double entropy(const PolicyParams& policy, std::span<const Context> contexts);

// Samples one token from a probability vector by inverse CDF.
Token sample_token(std::span<const double> probs, RngStream& rng);

TokenSeq sample_sequence(const PolicyParams& policy, std::span<const Token> prompt, std::size_t episode_len,
                         RngStream& rng);

std::vector<TokenSeq> sample_group(const PolicySnapshot& snapshot, std::span<const Token> prompt, std::size_t group_size,
                                   std::size_t episode_len, RngStream& rng);

// weights += lr * gradient; version + 1. Throws InvalidInput on shape mismatch
// or NumericalFailure on a non-finite update.
void apply_update(PolicyParams& policy, std::span<const double> gradient, double lr);

/// Checkpoint format: one JSON header line
///   {"format":"abcgrpo-policy","format_version":1,"vocab_size":V,
///    "context_len":k,"hidden":H,"version":n,"num_weights":N}
/// followed by N lines, one weight each in shortest round-trip decimal form.
void save_checkpoint(const PolicyParams& policy, const std::filesystem::path& path);
PolicyParams load_checkpoint(const std::filesystem::path& path);

}  // namespace abcgrpo
