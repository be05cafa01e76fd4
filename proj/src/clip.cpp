#include "abcgrpo/clip.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "abcgrpo/error.hpp"

namespace abcgrpo {

std::string_view to_string(ClipMode mode) {
  switch (mode) {
    case ClipMode::GRPO:
      return "grpo";
    case ClipMode::ABC:
      return "abc";
  }
  return "unknown";
}

ClipMode clip_mode_from_string(std::string_view name) {
  if (name == "grpo" || name == "GRPO") return ClipMode::GRPO;
  if (name == "abc" || name == "ABC") return ClipMode::ABC;
  throw InvalidInput("unknown clip mode '" + std::string(name) + "' (expected grpo or abc)");
}

void ClipConfig::validate(ClipMode mode) const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || std::isnan(v)) {
      throw InvalidInput(std::string(name) + " must be positive");
    }
  };
  positive(eps1, "eps1");
  positive(eps2, "eps2");
  positive(eps3, "eps3");
  positive(eps4, "eps4");
  positive(grpo_eps, "grpo_eps");
  if (!std::isfinite(eps1) || !std::isfinite(eps2) || !std::isfinite(eps4) || !std::isfinite(grpo_eps)) {
    throw InvalidInput("only eps3 may be infinite");
  }
  if (mode == ClipMode::ABC && eps4 >= 1.0) {
    throw InvalidInput("eps4 must be < 1 in ABC mode");
  }
}

double ClipConfig::eps_max() const { return std::max(eps1, eps3); }

double ClipConfig::eps_min() const { return std::min(eps2, eps4); }

ClipBounds ClipConfig::positive_bounds() const { return {std::max(0.0, 1.0 - eps2), 1.0 + eps1}; }

ClipBounds ClipConfig::nonpositive_bounds() const { return {std::max(0.0, 1.0 - eps4), 1.0 + eps3}; }

Ratio ratio_from_logprobs(double logp_new, double logp_old) {
  if (!std::isfinite(logp_new) || !std::isfinite(logp_old)) {
    throw InvalidInput("log-probabilities must be finite");
  }
  const double log_ratio = logp_new - logp_old;
  const double clamped = std::clamp(log_ratio, -kMaxLogRatio, kMaxLogRatio);
  return {std::exp(clamped), clamped != log_ratio};
}

double clip(double value, double low, double high) { return std::max(std::min(value, high), low); }

double clip_abc(double ratio, double adv, const ClipConfig& cfg) {
  const ClipBounds b = cfg.bounds_for(adv);
  return clip(ratio, b.low, b.high);
}

double clip_grpo_term(double ratio, double adv, double eps) {
  return std::min(ratio * adv, clip(ratio, 1.0 - eps, 1.0 + eps) * adv);
}

Quadrant quadrant_of(double ratio, double adv) {
  if (adv > 0.0) return ratio >= 1.0 ? Quadrant::Q1 : Quadrant::Q2;
  return ratio >= 1.0 ? Quadrant::Q4 : Quadrant::Q3;
}

bool was_clipped(double ratio, double adv, const ClipConfig& cfg, ClipMode mode) {
  if (mode == ClipMode::ABC) {
    const ClipBounds b = cfg.bounds_for(adv);
    return ratio <= b.low || ratio >= b.high;
  }
  if (adv > 0.0) return ratio >= 1.0 + cfg.grpo_eps;
  return ratio <= 1.0 - cfg.grpo_eps;
}

double gradient_bound(double a_max, const ClipConfig& cfg, double g_max) {
  if (a_max < 0.0 || g_max < 0.0) throw InvalidInput("gradient_bound: a_max and g_max must be nonnegative");
  if (a_max == 0.0 || g_max == 0.0) return 0.0;
  if (!std::isfinite(cfg.eps3)) return kInfinity;
  return a_max * (1.0 + cfg.eps_max()) * g_max;
}

}  // namespace abcgrpo
