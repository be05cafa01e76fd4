#pragma once

#include <span>
#include <string>
#include <vector>

#include "abcgrpo/advantage.hpp"
#include "abcgrpo/rng.hpp"
#include "abcgrpo/token_batch.hpp"

namespace abcgrpo {

enum class TaskKind { LastToken, Needle };

std::string to_string(TaskKind kind);
TaskKind task_kind_from_string(const std::string& name);

/// Synthetic verifiable-reward task with a binary reward and a known set of
/// outcome-determining ("critical") positions.
///
/// Prompts are single tokens. The target for prompt p is tau(p) = (m p + 1)
/// mod V with m the smallest odd m >= 3 coprime to V, a fixed permutation of
/// the vocabulary.
class Task {
public:
  // Reward 1 iff the final token equals tau(prompt). Requires V >= 4, T >= 2.
  static Task last_token(int vocab_size, int episode_len);
  // Reward 1 iff sequence[needle_pos] equals tau(prompt).
  static Task needle(int vocab_size, int episode_len, int needle_pos);

  TaskKind kind() const { return kind_; }
  const std::string& name() const { return name_; }
  int vocab_size() const { return vocab_size_; }
  std::size_t episode_len() const { return static_cast<std::size_t>(episode_len_); }
  std::size_t critical_position() const { return static_cast<std::size_t>(critical_pos_); }

  Token target(Token prompt) const;
  TokenSeq sample_prompt(RngStream& rng) const;

  double reward(std::span<const Token> prompt, std::span<const Token> seq) const;
  bool critical(std::span<const Token> prompt, std::span<const Token> seq, std::size_t token_index) const;

private:
  Task(TaskKind kind, int vocab_size, int episode_len, int critical_pos);
  void check_shape(std::span<const Token> prompt, std::span<const Token> seq) const;

  TaskKind kind_;
  std::string name_;
  int vocab_size_;
  int episode_len_;
  int critical_pos_;
  int multiplier_;
};

struct RewardRecord {
  std::size_t prompt_id = 0;
  std::size_t seq_index = 0;
  double reward = 0.0;
};

// Throws InvalidInput on an empty group or a sequence of the wrong shape.
std::vector<RewardRecord> score_group(const Task& task, std::size_t prompt_id, std::span<const Token> prompt,
                                      std::span<const TokenSeq> sequences);

// Neutral tokens carrying a nonzero advantage, divided by all tokens of the
// rollout.
double misattribution_rate(const Task& task, const GroupRollout& rollout);

// The same ratio computed separately for each sequence.
std::vector<double> misattribution_by_sequence(const Task& task, const GroupRollout& rollout);

struct MisattributionCount {
  std::size_t misattributed = 0;
  std::size_t tokens = 0;
};
MisattributionCount count_misattributed(const Task& task, const GroupRollout& rollout);

}  // namespace abcgrpo
