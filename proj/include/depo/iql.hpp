#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "depo/core.hpp"

namespace depo {

/// Independent Q-learner of one agent: Q_i[state][a_i] with epsilon-greedy
/// exploration and step size alpha.
struct QTable {
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  std::vector<double> values;
  double epsilon = 1.0;
  double alpha = 0.1;

  QTable() = default;
  QTable(std::size_t states, std::size_t actions, double eps, double lr)
      : n_states(states), n_actions(actions), values(states * actions, 0.0), epsilon(eps), alpha(lr) {
    if (!(eps >= 0.0 && eps <= 1.0)) throw ConfigError("epsilon", "must lie in [0, 1]");
  }

  double at(std::size_t s, std::size_t a) const { return values[s * n_actions + a]; }
  double& at(std::size_t s, std::size_t a) { return values[s * n_actions + a]; }

  /// Greedy action, lowest index on ties.
  std::size_t greedy(std::size_t s) const {
    std::size_t best = 0;
    for (std::size_t a = 1; a < n_actions; ++a)
      if (at(s, a) > at(s, best)) best = a;
    return best;
  }

  double max_value(std::size_t s) const { return at(s, greedy(s)); }
};

/// Q(s,a) += alpha (r + gamma max_a' Q(s',a') - Q(s,a)). Truncated episodes
/// bootstrap; the games here have no true terminal states.
inline void iql_update(QTable& q, std::size_t state, std::size_t action, double reward, std::size_t next_state,
                       double gamma) {
  if (state >= q.n_states || next_state >= q.n_states || action >= q.n_actions)
    throw BoundsError("iql_update: index out of range");
  const double target = reward + gamma * q.max_value(next_state);
  q.at(state, action) += q.alpha * (target - q.at(state, action));
}

/// Logits whose softmax is the epsilon-greedy distribution. Zero-probability
/// actions get a finite floor so the result remains a valid softmax policy.
inline std::vector<double> epsilon_greedy_logits(const QTable& q, double epsilon) {
  std::vector<double> logits(q.values.size());
  const double n = static_cast<double>(q.n_actions);
  const double floor_p = 1e-300;
  for (std::size_t s = 0; s < q.n_states; ++s) {
    const std::size_t g = q.greedy(s);
    for (std::size_t a = 0; a < q.n_actions; ++a) {
      const double p = epsilon / n + (a == g ? 1.0 - epsilon : 0.0);
      logits[s * q.n_actions + a] = std::log(std::max(p, floor_p));
    }
  }
  return logits;
}

/// Logits of the greedy policy; the non-greedy mass is below 1e-17.
inline std::vector<double> greedy_logits(const QTable& q) {
  std::vector<double> logits(q.values.size(), 0.0);
  for (std::size_t s = 0; s < q.n_states; ++s) logits[s * q.n_actions + q.greedy(s)] = 40.0;
  return logits;
}

}  // namespace depo
