#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <string_view>

namespace abcgrpo {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

// Log-ratios are clamped to this magnitude before exponentiation.
inline constexpr double kMaxLogRatio = 30.0;

enum class ClipMode { GRPO, ABC };

std::string_view to_string(ClipMode mode);
ClipMode clip_mode_from_string(std::string_view name);

enum class Quadrant : std::uint8_t { Q1 = 0, Q2 = 1, Q3 = 2, Q4 = 3 };

using QuadrantCounts = std::array<std::int64_t, 4>;

inline constexpr std::size_t index_of(Quadrant q) { return static_cast<std::size_t>(q); }

struct ClipBounds {
  double low;
  double high;
};

/// Four sign-aware clipping thresholds plus the single threshold of the
/// conditional (GRPO/PPO) rule.
///
/// eps1/eps2 are the upper/lower slack for positive advantages, eps3/eps4 for
/// non-positive ones. eps3 may be kInfinity, which turns the ABC rule into the
/// GRPO rule on the (A <= 0, r > 1) side.
struct ClipConfig {
  double eps1 = 0.2;
  double eps2 = 0.2;
  double eps3 = 0.2;
  double eps4 = 0.2;
  double grpo_eps = 0.2;

  static ClipConfig uniform(double eps) { return {eps, eps, eps, eps, eps}; }

  // ABC thresholds under which clip_abc(r, A) * A == clip_grpo_term(r, A, eps).
  static ClipConfig grpo_equivalent(double eps) { return {eps, 1.0, kInfinity, eps, eps}; }

  // Throws InvalidInput. eps4 < 1 is only enforced for ABC mode.
  void validate(ClipMode mode) const;

  double eps_max() const;  // max(eps1, eps3); infinite when eps3 is
  double eps_min() const;  // min(eps2, eps4)

  ClipBounds positive_bounds() const;     // active interval for A > 0
  ClipBounds nonpositive_bounds() const;  // active interval for A <= 0
  ClipBounds bounds_for(double adv) const { return adv > 0.0 ? positive_bounds() : nonpositive_bounds(); }

  friend bool operator==(const ClipConfig&, const ClipConfig&) = default;
};

struct Ratio {
  double value;
  bool overflow;  // log-ratio hit the +/- kMaxLogRatio clamp
};

// exp(logp_new - logp_old). Throws InvalidInput on non-finite input.
Ratio ratio_from_logprobs(double logp_new, double logp_old);

double clip(double value, double low, double high);

// Clipped ratio of the four-boundary rule.
double clip_abc(double ratio, double adv, const ClipConfig& cfg);

// min(r * A, clip(r, 1 - eps, 1 + eps) * A).
double clip_grpo_term(double ratio, double adv, double eps);

// r == 1 groups with r > 1; adv == 0 groups with adv < 0.
Quadrant quadrant_of(double ratio, double adv);

/// True when the token's surrogate term is constant in r at this point, i.e.
/// r is outside the open interval of the active bounds. A ratio sitting
/// exactly on a bound counts as clipped. In GRPO mode only the upper bound for
/// A > 0 and the lower bound for A <= 0 exist; the other two sides are blind
/// spots and never report clipped.
bool was_clipped(double ratio, double adv, const ClipConfig& cfg, ClipMode mode);

// Per-token gradient ceiling A_max * (1 + eps_max) * G_max. Infinite when eps3
// is infinite and a_max > 0.
double gradient_bound(double a_max, const ClipConfig& cfg, double g_max);

}  // namespace abcgrpo
