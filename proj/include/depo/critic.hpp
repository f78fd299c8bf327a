#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "depo/core.hpp"
#include "depo/env.hpp"
#include "depo/optimizer.hpp"

namespace depo {

/// An agent's state-value table V_i(s).
struct CriticTable {
  std::vector<double> values;

  CriticTable() = default;
  explicit CriticTable(std::size_t n_states) : values(n_states, 0.0) {}
  double operator()(std::size_t s) const { return values[s]; }
};

enum class CriticTarget { td, mc };

inline CriticTarget parse_critic_target(const std::string& s) {
  if (s == "td") return CriticTarget::td;
  if (s == "mc") return CriticTarget::mc;
  throw ConfigError("critic_target", "expected 'td' or 'mc', got '" + s + "'");
}

inline const char* to_string(CriticTarget t) { return t == CriticTarget::td ? "td" : "mc"; }

/// One-step TD advantage r + gamma V(s') - V(s) per record. At truncation
/// records the bootstrap term is dropped unless `bootstrap_truncation`.
inline std::vector<double> advantage_estimate(const TransitionBatch& batch, const CriticTable& critic, double gamma,
                                              bool bootstrap_truncation = true) {
  std::vector<double> adv(batch.size());
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const bool cut = batch.terminal[k] && !bootstrap_truncation;
    adv[k] = batch.rewards[k] + (cut ? 0.0 : gamma * critic(batch.next_states[k])) - critic(batch.states[k]);
  }
  return adv;
}

/// Discounted reward-to-go within each episode, optionally bootstrapped from
/// `critic` at the truncation record.
inline std::vector<double> monte_carlo_returns(const TransitionBatch& batch, const CriticTable& critic, double gamma,
                                               bool bootstrap_truncation = true) {
  std::vector<double> g(batch.size());
  double next = 0.0;
  for (std::size_t k = batch.size(); k-- > 0;) {
    if (batch.terminal[k]) next = bootstrap_truncation ? critic(batch.next_states[k]) : 0.0;
    next = batch.rewards[k] + gamma * next;
    g[k] = next;
  }
  return g;
}

/// Minimizes mean_k (V(s_k) - y_k)^2 for `epochs` full-batch steps. Targets are
/// computed once from a frozen copy of V at the start of the call.
inline void critic_update(CriticTable& critic, const TransitionBatch& batch, double gamma, Optimizer& opt,
                          std::size_t epochs, CriticTarget target = CriticTarget::td,
                          bool bootstrap_truncation = true) {
  if (batch.size() == 0 || epochs == 0) return;
  const CriticTable frozen = critic;
  std::vector<double> y;
  if (target == CriticTarget::mc) {
    y = monte_carlo_returns(batch, frozen, gamma, bootstrap_truncation);
  } else {
    y.resize(batch.size());
    for (std::size_t k = 0; k < batch.size(); ++k) {
      const bool cut = batch.terminal[k] && !bootstrap_truncation;
      y[k] = batch.rewards[k] + (cut ? 0.0 : gamma * frozen(batch.next_states[k]));
    }
  }
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  std::vector<double> grad(critic.values.size());
  for (std::size_t e = 0; e < epochs; ++e) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t k = 0; k < batch.size(); ++k)
      grad[batch.states[k]] += 2.0 * inv_b * (critic(batch.states[k]) - y[k]);
    opt.descend(critic.values, grad);
  }
}

}  // namespace depo
