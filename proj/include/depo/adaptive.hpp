#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

#include "depo/core.hpp"

namespace depo {

inline constexpr double kBetaMin = 1e-8;
inline constexpr double kBetaMax = 1e8;

/// Penalty coefficients of one agent: beta1 weighs sqrt(KL), beta2 weighs KL.
struct PenaltyCoefficients {
  double beta1 = 0.01;
  double beta2 = 0.01;

  friend bool operator==(const PenaltyCoefficients&, const PenaltyCoefficients&) = default;
};

struct AdaptiveRule {
  double d_target = 0.1;
  double delta = 1.5;
  double omega = 2.0;

  void validate() const {
    if (!(d_target > 0.0)) throw ConfigError("d_target", "must be positive");
    if (!(delta >= 1.0)) throw ConfigError("delta", "must be at least 1");
    if (!(omega > 0.0)) throw ConfigError("omega", "must be positive");
  }
};

/// Per-agent coefficients together with the shared controller settings.
struct AdaptiveState {
  std::vector<PenaltyCoefficients> agents;
  AdaptiveRule rule;
};

/// Scales both coefficients by omega when the realized average KL exceeds
/// d_target*delta, by 1/omega when it falls below d_target/delta, then clamps.
inline PenaltyCoefficients adapt_coefficients(PenaltyCoefficients c, double realized_kl, const AdaptiveRule& rule) {
  if (realized_kl > rule.d_target * rule.delta) {
    c.beta1 *= rule.omega;
    c.beta2 *= rule.omega;
  } else if (realized_kl < rule.d_target / rule.delta) {
    c.beta1 /= rule.omega;
    c.beta2 /= rule.omega;
  }
  c.beta1 = std::clamp(c.beta1, kBetaMin, kBetaMax);
  c.beta2 = std::clamp(c.beta2, kBetaMin, kBetaMax);
  return c;
}

}  // namespace depo
