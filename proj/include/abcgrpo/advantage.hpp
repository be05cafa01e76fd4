#pragma once

#include <span>
#include <string>
#include <vector>

#include "abcgrpo/token_batch.hpp"

namespace abcgrpo {

inline constexpr double kStdFloor = 1e-6;

/// G sampled responses to one prompt together with their rewards, group
/// advantages and the old policy's per-token log-probabilities.
struct GroupRollout {
  std::size_t prompt_id = 0;
  TokenSeq prompt;
  std::vector<TokenSeq> sequences;
  std::vector<double> rewards;
  std::vector<double> advantages;
  std::vector<std::vector<double>> logprobs_old;

  std::size_t group_size() const { return sequences.size(); }
  std::size_t token_count() const;
  bool degenerate() const;  // every advantage is zero

  // Throws InvalidInput when the invariants do not hold.
  void validate() const;
};

// reward_i - mean(reward); divided by the population std (floored at
// kStdFloor) when normalize_std is set. Throws DegenerateGroup for G < 2.
std::vector<double> group_advantages(std::span<const double> rewards, bool normalize_std = false);

// One record per token, each carrying its sequence's advantage and 1/|y_i|.
TokenBatch broadcast_to_tokens(const GroupRollout& rollout, std::size_t group_id = 0);

}  // namespace abcgrpo
