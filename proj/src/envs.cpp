#include "abcgrpo/envs.hpp"

#include <algorithm>
#include <numeric>

#include "abcgrpo/error.hpp"

namespace abcgrpo {

std::string to_string(TaskKind kind) { return kind == TaskKind::LastToken ? "last_token" : "needle"; }

TaskKind task_kind_from_string(const std::string& name) {
  if (name == "last_token") return TaskKind::LastToken;
  if (name == "needle") return TaskKind::Needle;
  throw InvalidInput("unknown task kind '" + name + "' (expected last_token or needle)");
}

Task::Task(TaskKind kind, int vocab_size, int episode_len, int critical_pos)
    : kind_(kind), name_(to_string(kind)), vocab_size_(vocab_size), episode_len_(episode_len),
      critical_pos_(critical_pos), multiplier_(3) {
  while (std::gcd(multiplier_, vocab_size_) != 1) multiplier_ += 2;
}

Task Task::last_token(int vocab_size, int episode_len) {
  if (vocab_size < 4) throw InvalidInput("last_token task needs vocab_size >= 4");
  if (episode_len < 2) throw InvalidInput("last_token task needs episode_len >= 2");
  return Task(TaskKind::LastToken, vocab_size, episode_len, episode_len - 1);
}

Task Task::needle(int vocab_size, int episode_len, int needle_pos) {
  if (vocab_size < 4) throw InvalidInput("needle task needs vocab_size >= 4");
  if (episode_len < 1) throw InvalidInput("needle task needs episode_len >= 1");
  if (needle_pos < 0 || needle_pos >= episode_len) {
    throw InvalidInput("needle_pos " + std::to_string(needle_pos) + " outside [0, " + std::to_string(episode_len) +
                       ")");
  }
  return Task(TaskKind::Needle, vocab_size, episode_len, needle_pos);
}

Token Task::target(Token prompt) const {
  if (prompt < 0 || prompt >= vocab_size_) throw InvalidInput("prompt token outside vocabulary");
  return static_cast<Token>((multiplier_ * prompt + 1) % vocab_size_);
}

TokenSeq Task::sample_prompt(RngStream& rng) const {
  return {static_cast<Token>(rng.below(static_cast<std::size_t>(vocab_size_)))};
}

void Task::check_shape(std::span<const Token> prompt, std::span<const Token> seq) const {
  if (prompt.size() != 1) throw InvalidInput("prompts are single tokens");
  if (seq.size() != episode_len()) {
    throw InvalidInput("sequence length " + std::to_string(seq.size()) + " does not match episode length " +
                       std::to_string(episode_len_));
  }
  const auto out_of_range = [this](Token t) { return t < 0 || t >= vocab_size_; };
  if (out_of_range(prompt[0]) || std::any_of(seq.begin(), seq.end(), out_of_range)) {
    throw InvalidInput("token outside the vocabulary");
  }
}

double Task::reward(std::span<const Token> prompt, std::span<const Token> seq) const {
  check_shape(prompt, seq);
  return seq[critical_position()] == target(prompt[0]) ? 1.0 : 0.0;
}

bool Task::critical(std::span<const Token> prompt, std::span<const Token> seq, std::size_t token_index) const {
  check_shape(prompt, seq);
  if (token_index >= seq.size()) throw InvalidInput("token index out of range");
  return token_index == critical_position();
}

std::vector<RewardRecord> score_group(const Task& task, std::size_t prompt_id, std::span<const Token> prompt,
                                      std::span<const TokenSeq> sequences) {
  if (sequences.empty()) throw InvalidInput("cannot score an empty group");
  std::vector<RewardRecord> out;
  out.reserve(sequences.size());
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    out.push_back({prompt_id, i, task.reward(prompt, sequences[i])});
  }
  return out;
}

MisattributionCount count_misattributed(const Task& task, const GroupRollout& rollout) {
  MisattributionCount c;
  for (std::size_t i = 0; i < rollout.sequences.size(); ++i) {
    const auto& seq = rollout.sequences[i];
    const bool nonzero = rollout.advantages.at(i) != 0.0;
    c.tokens += seq.size();
    if (!nonzero) continue;
    for (std::size_t t = 0; t < seq.size(); ++t) {
      if (!task.critical(rollout.prompt, seq, t)) ++c.misattributed;
    }
  }
  return c;
}

double misattribution_rate(const Task& task, const GroupRollout& rollout) {
  const auto c = count_misattributed(task, rollout);
  if (c.tokens == 0) return 0.0;
  return static_cast<double>(c.misattributed) / static_cast<double>(c.tokens);
}

std::vector<double> misattribution_by_sequence(const Task& task, const GroupRollout& rollout) {
  std::vector<double> out;
  out.reserve(rollout.sequences.size());
  for (std::size_t i = 0; i < rollout.sequences.size(); ++i) {
    const auto& seq = rollout.sequences[i];
    std::size_t bad = 0;
    if (rollout.advantages.at(i) != 0.0) {
      for (std::size_t t = 0; t < seq.size(); ++t) bad += task.critical(rollout.prompt, seq, t) ? 0 : 1;
    }
    out.push_back(seq.empty() ? 0.0 : static_cast<double>(bad) / static_cast<double>(seq.size()));
  }
  return out;
}

}  // namespace abcgrpo
