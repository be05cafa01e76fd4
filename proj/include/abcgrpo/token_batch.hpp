#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace abcgrpo {

using Token = std::int32_t;
using TokenSeq = std::vector<Token>;

struct TokenRecord {
  std::size_t seq_id = 0;       // index into TokenBatch::sequences
  std::size_t token_index = 0;  // position inside that sequence
  double logp_old = 0.0;
  double adv = 0.0;
  double length_weight = 0.0;  // 1 / |y_seq|
};

// The prompt and response a record's context is rebuilt from.
struct SequenceRef {
  TokenSeq prompt;
  TokenSeq tokens;
  std::size_t group_id = 0;
};

/// Flattened per-token view of one or more rollout groups.
///
/// The group-normalized objectives divide the length-weighted sum of token
/// terms by sequence_count(); for a single group that is G.
struct TokenBatch {
  std::vector<TokenRecord> records;
  std::vector<SequenceRef> sequences;
  std::size_t group_size = 0;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
  std::size_t sequence_count() const { return sequences.size(); }
};

// Appends `other` to `into`, renumbering sequence ids. Group sizes must agree.
void append_batch(TokenBatch& into, const TokenBatch& other);

// Splits whole sequences into `shards` batches; sequence j of the
// concatenated batch goes to shard j % shards.
std::vector<TokenBatch> shard_by_sequence(const TokenBatch& batch, std::size_t shards);

}  // namespace abcgrpo
