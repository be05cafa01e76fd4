#include "abcgrpo/objective.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "abcgrpo/error.hpp"

namespace abcgrpo {

namespace {

struct Term {
  double value;
  bool clipped;
};

Term evaluate_term(Surrogate kind, double ratio, double adv, const ClipConfig& cfg) {
  if (kind == Surrogate::ABC) {
    return {clip_abc(ratio, adv, cfg) * adv, was_clipped(ratio, adv, cfg, ClipMode::ABC)};
  }
  return {clip_grpo_term(ratio, adv, cfg.grpo_eps), was_clipped(ratio, adv, cfg, ClipMode::GRPO)};
}

double normalizer(Surrogate kind, const TokenBatch& batch) {
  if (kind == Surrogate::PPO) return static_cast<double>(batch.size());
  const std::size_t n = batch.sequences.empty() ? batch.group_size : batch.sequences.size();
  if (n == 0) throw InvalidInput("batch has neither sequences nor a group size");
  return static_cast<double>(n);
}

double record_weight(Surrogate kind, const TokenRecord& rec) {
  return kind == Surrogate::PPO ? 1.0 : rec.length_weight;
}

ClipConfig single_eps(double eps) {
  ClipConfig cfg = ClipConfig::uniform(eps);
  cfg.validate(ClipMode::GRPO);
  return cfg;
}

}  // namespace

std::size_t SurrogateResult::clipped() const {
  return static_cast<std::size_t>(std::accumulate(clip_counts.begin(), clip_counts.end(), std::int64_t{0}));
}

SurrogateResult surrogate_objective(Surrogate kind, const TokenBatch& batch, std::span<const double> logp_new,
                                    const ClipConfig& cfg) {
  if (logp_new.size() != batch.size()) {
    throw InvalidInput("logp_new has " + std::to_string(logp_new.size()) + " entries for " +
                       std::to_string(batch.size()) + " records");
  }
  SurrogateResult res;
  if (batch.empty()) return res;
  const double norm = normalizer(kind, batch);
  res.per_token_terms.resize(batch.size());
  res.ratios.resize(batch.size());
  res.clip_mask.resize(batch.size());

  double sum = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const TokenRecord& rec = batch.records[i];
    const Ratio r = ratio_from_logprobs(logp_new[i], rec.logp_old);
    const Term term = evaluate_term(kind, r.value, rec.adv, cfg);
    const std::size_t q = index_of(quadrant_of(r.value, rec.adv));
    res.ratios[i] = r.value;
    res.per_token_terms[i] = term.value;
    res.clip_mask[i] = term.clipped ? 1 : 0;
    res.quadrant_counts[q] += 1;
    if (term.clipped) res.clip_counts[q] += 1;
    if (r.overflow) ++res.overflow_count;
    sum += record_weight(kind, rec) * term.value;
  }
  res.objective = sum / norm;
  return res;
}

SurrogateResult ppo_objective(const TokenBatch& batch, std::span<const double> logp_new, double eps) {
  return surrogate_objective(Surrogate::PPO, batch, logp_new, single_eps(eps));
}

SurrogateResult grpo_objective(const TokenBatch& batch, std::span<const double> logp_new, double eps) {
  return surrogate_objective(Surrogate::GRPO, batch, logp_new, single_eps(eps));
}

SurrogateResult abc_objective(const TokenBatch& batch, std::span<const double> logp_new, const ClipConfig& cfg) {
  cfg.validate(ClipMode::ABC);
  return surrogate_objective(Surrogate::ABC, batch, logp_new, cfg);
}

std::vector<double> batch_logprobs(const TokenBatch& batch, const PolicyParams& policy) {
  std::vector<double> out(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const TokenRecord& rec = batch.records[i];
    if (rec.seq_id >= batch.sequences.size()) throw InvalidInput("record refers to a missing sequence");
    const SequenceRef& s = batch.sequences[rec.seq_id];
    if (rec.token_index >= s.tokens.size()) throw InvalidInput("record token index out of range");
    out[i] = policy.logprob_token(policy.context_at(s.prompt, s.tokens, rec.token_index), s.tokens[rec.token_index]);
  }
  return out;
}

SurrogateGradient surrogate_gradient(Surrogate kind, const TokenBatch& batch, const PolicyParams& policy,
                                     const ClipConfig& cfg) {
  SurrogateGradient out;
  out.gradient.assign(policy.num_params(), 0.0);
  const auto logp_new = batch_logprobs(batch, policy);
  out.result = surrogate_objective(kind, batch, logp_new, cfg);
  if (batch.empty()) return out;

  const double norm = normalizer(kind, batch);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (out.result.clip_mask[i]) continue;
    const TokenRecord& rec = batch.records[i];
    const double scale = record_weight(kind, rec) * rec.adv * out.result.ratios[i] / norm;
    if (!std::isfinite(scale)) throw NumericalFailure("non-finite gradient scale", i);
    if (scale == 0.0) continue;
    const SequenceRef& s = batch.sequences[rec.seq_id];
    policy.accumulate_grad_logprob(policy.context_at(s.prompt, s.tokens, rec.token_index), s.tokens[rec.token_index],
                                   scale, out.gradient);
  }
  for (std::size_t j = 0; j < out.gradient.size(); ++j) {
    if (!std::isfinite(out.gradient[j])) {
      // Locate the first record whose contribution broke the sum.
      std::vector<double> probe(policy.num_params(), 0.0);
      for (std::size_t i = 0; i < batch.size(); ++i) {
        if (out.result.clip_mask[i]) continue;
        const TokenRecord& rec = batch.records[i];
        const SequenceRef& s = batch.sequences[rec.seq_id];
        policy.accumulate_grad_logprob(policy.context_at(s.prompt, s.tokens, rec.token_index),
                                       s.tokens[rec.token_index],
                                       record_weight(kind, rec) * rec.adv * out.result.ratios[i] / norm, probe);
        if (!std::isfinite(probe[j])) throw NumericalFailure("non-finite gradient component", i);
      }
      throw NumericalFailure("non-finite gradient component", batch.size());
    }
  }
  return out;
}

std::vector<double> abc_gradient(const TokenBatch& batch, const PolicyParams& policy, const ClipConfig& cfg) {
  cfg.validate(ClipMode::ABC);
  return surrogate_gradient(Surrogate::ABC, batch, policy, cfg).gradient;
}

std::vector<double> grpo_gradient(const TokenBatch& batch, const PolicyParams& policy, double eps) {
  return surrogate_gradient(Surrogate::GRPO, batch, policy, single_eps(eps)).gradient;
}

std::vector<double> ppo_gradient(const TokenBatch& batch, const PolicyParams& policy, double eps) {
  return surrogate_gradient(Surrogate::PPO, batch, policy, single_eps(eps)).gradient;
}

GradientAudit gradient_norm_audit(const TokenBatch& batch, const PolicyParams& policy, const ClipConfig& cfg,
                                  ClipMode mode, double a_max, std::optional<double> g_max) {
  GradientAudit audit;
  audit.a_max = a_max;
  audit.token_norms.assign(batch.size(), 0.0);
  const auto logp_new = batch_logprobs(batch, policy);
  std::vector<double> g(policy.num_params());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const TokenRecord& rec = batch.records[i];
    const SequenceRef& s = batch.sequences[rec.seq_id];
    std::fill(g.begin(), g.end(), 0.0);
    policy.accumulate_grad_logprob(policy.context_at(s.prompt, s.tokens, rec.token_index), s.tokens[rec.token_index],
                                   1.0, g);
    double sq = 0.0;
    for (double x : g) sq += x * x;
    const double score_norm = std::sqrt(sq);
    audit.measured_g_max = std::max(audit.measured_g_max, score_norm);

    const double r = ratio_from_logprobs(logp_new[i], rec.logp_old).value;
    if (was_clipped(r, rec.adv, cfg, mode)) continue;
    const double contribution = std::abs(rec.adv) * r * score_norm;
    audit.token_norms[i] = contribution;
    if (contribution > audit.empirical_max) {
      audit.empirical_max = contribution;
      audit.argmax = i;
    }
  }
  audit.g_max = g_max.value_or(audit.measured_g_max);
  audit.bound = gradient_bound(a_max, cfg, audit.g_max);
  audit.pass = audit.empirical_max <= audit.bound;
  return audit;
}

}  // namespace abcgrpo
