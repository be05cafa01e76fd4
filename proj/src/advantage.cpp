#include "abcgrpo/advantage.hpp"

#include <algorithm>
#include <cmath>

#include "abcgrpo/error.hpp"

namespace abcgrpo {

std::size_t GroupRollout::token_count() const {
  std::size_t n = 0;
  for (const auto& s : sequences) n += s.size();
  return n;
}

bool GroupRollout::degenerate() const {
  return std::all_of(advantages.begin(), advantages.end(), [](double a) { return a == 0.0; });
}

void GroupRollout::validate() const {
  const std::size_t g = sequences.size();
  if (g < 2) throw DegenerateGroup("a group needs at least two sequences");
  if (rewards.size() != g || advantages.size() != g) {
    throw InvalidInput("sequences, rewards and advantages must have equal length");
  }
  if (!logprobs_old.empty() && logprobs_old.size() != g) {
    throw InvalidInput("logprobs_old must have one entry per sequence");
  }
  for (std::size_t i = 0; i < g; ++i) {
    if (sequences[i].empty()) throw InvalidInput("sequence " + std::to_string(i) + " is empty");
    if (!logprobs_old.empty() && logprobs_old[i].size() != sequences[i].size()) {
      throw InvalidInput("logprobs_old[" + std::to_string(i) + "] is misaligned with its sequence");
    }
  }
}

std::vector<double> group_advantages(std::span<const double> rewards, bool normalize_std) {
  const std::size_t g = rewards.size();
  if (g < 2) throw DegenerateGroup("group advantages need at least two rewards");

  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= static_cast<double>(g);

  std::vector<double> adv(g);
  for (std::size_t i = 0; i < g; ++i) adv[i] = rewards[i] - mean;

  if (normalize_std) {
    double var = 0.0;
    for (double a : adv) var += a * a;
    const double sd = std::max(std::sqrt(var / static_cast<double>(g)), kStdFloor);
    for (double& a : adv) a /= sd;
  }
  return adv;
}

TokenBatch broadcast_to_tokens(const GroupRollout& rollout, std::size_t group_id) {
  rollout.validate();
  TokenBatch batch;
  batch.group_size = rollout.group_size();
  batch.records.reserve(rollout.token_count());
  batch.sequences.reserve(rollout.group_size());
  for (std::size_t i = 0; i < rollout.group_size(); ++i) {
    const auto& seq = rollout.sequences[i];
    const double weight = 1.0 / static_cast<double>(seq.size());
    for (std::size_t t = 0; t < seq.size(); ++t) {
      const double lp = rollout.logprobs_old.empty() ? 0.0 : rollout.logprobs_old[i][t];
      batch.records.push_back({i, t, lp, rollout.advantages[i], weight});
    }
    batch.sequences.push_back({rollout.prompt, seq, group_id});
  }
  return batch;
}

void append_batch(TokenBatch& into, const TokenBatch& other) {
  if (into.sequences.empty() && into.records.empty()) {
    into.group_size = other.group_size;
  } else if (into.group_size != other.group_size) {
    throw InvalidInput("cannot append batches with different group sizes");
  }
  const std::size_t offset = into.sequences.size();
  into.sequences.insert(into.sequences.end(), other.sequences.begin(), other.sequences.end());
  into.records.reserve(into.records.size() + other.records.size());
  for (TokenRecord r : other.records) {
    r.seq_id += offset;
    into.records.push_back(r);
  }
}

std::vector<TokenBatch> shard_by_sequence(const TokenBatch& batch, std::size_t shards) {
  if (shards == 0) throw InvalidInput("shard count must be positive");
  std::vector<TokenBatch> out(shards);
  std::vector<std::size_t> local_id(batch.sequences.size());
  for (std::size_t j = 0; j < batch.sequences.size(); ++j) {
    auto& shard = out[j % shards];
    shard.group_size = batch.group_size;
    local_id[j] = shard.sequences.size();
    shard.sequences.push_back(batch.sequences[j]);
  }
  for (const TokenRecord& r : batch.records) {
    TokenRecord copy = r;
    copy.seq_id = local_id[r.seq_id];
    out[r.seq_id % shards].records.push_back(copy);
  }
  return out;
}

}  // namespace abcgrpo
