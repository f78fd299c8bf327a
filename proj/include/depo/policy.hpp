#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "depo/core.hpp"

namespace depo {

/// In-place numerically stable softmax.
inline void softmax_inplace(std::span<double> x) {
  const double mx = *std::max_element(x.begin(), x.end());
  double z = 0.0;
  for (double& v : x) {
    v = std::exp(v - mx);
    z += v;
  }
  for (double& v : x) v /= z;
}

inline void softmax(std::span<const double> logits, std::span<double> out) {
  std::copy(logits.begin(), logits.end(), out.begin());
  softmax_inplace(out);
}

/// log-softmax, stable for large logit gaps.
inline void log_softmax(std::span<const double> logits, std::span<double> out) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double v : logits) z += std::exp(v - mx);
  const double lse = mx + std::log(z);
  for (std::size_t a = 0; a < logits.size(); ++a) out[a] = logits[a] - lse;
}

/// KL(p || q) for categorical distributions. Rejects q(a) = 0 where p(a) > 0.
inline double categorical_kl(std::span<const double> p, std::span<const double> q) {
  double kl = 0.0;
  for (std::size_t a = 0; a < p.size(); ++a) {
    if (p[a] <= 0.0) continue;
    if (q[a] <= 0.0) throw std::domain_error("categorical_kl: q has zero mass on the support of p");
    kl += p[a] * (std::log(p[a]) - std::log(q[a]));
  }
  return std::max(kl, 0.0);
}

/// KL between two softmax distributions given by logits. Works in log space
/// so that near-deterministic policies do not lose precision.
inline double softmax_kl(std::span<const double> logits_p, std::span<const double> logits_q) {
  const std::size_t n = logits_p.size();
  std::vector<double> lp(n), lq(n);
  log_softmax(logits_p, lp);
  log_softmax(logits_q, lq);
  double kl = 0.0;
  for (std::size_t a = 0; a < n; ++a) kl += std::exp(lp[a]) * (lp[a] - lq[a]);
  return std::max(kl, 0.0);
}

/// Per-agent tabular softmax policies; the joint policy is their product.
/// Each agent owns its own logits table, indexed [state][action].
class ProductPolicy {
 public:
  ProductPolicy() = default;

  /// Uniform policy (all logits zero).
  ProductPolicy(std::size_t n_states, std::vector<std::size_t> action_counts)
      : n_states_(n_states), action_counts_(std::move(action_counts)) {
    logits_.reserve(action_counts_.size());
    for (std::size_t a : action_counts_) logits_.emplace_back(n_states_ * a, 0.0);
  }

  static ProductPolicy from_logits(std::size_t n_states, std::vector<std::size_t> action_counts,
                                   std::vector<std::vector<double>> logits) {
    ProductPolicy p(n_states, std::move(action_counts));
    if (logits.size() != p.action_counts_.size())
      throw ConfigError("policy", "logits table count does not match number of agents");
    for (std::size_t i = 0; i < logits.size(); ++i) {
      if (logits[i].size() != n_states * p.action_counts_[i])
        throw ConfigError("policy", "logits table of agent " + std::to_string(i) + " has wrong size");
      for (double v : logits[i])
        if (!std::isfinite(v)) throw ConfigError("policy", "non-finite logit");
    }
    p.logits_ = std::move(logits);
    return p;
  }

  /// Logits drawn i.i.d. normal with the given scale.
  static ProductPolicy random(std::size_t n_states, const std::vector<std::size_t>& action_counts,
                              double scale, Rng& rng) {
    ProductPolicy p(n_states, action_counts);
    std::normal_distribution<double> nd(0.0, scale);
    for (auto& table : p.logits_)
      for (double& v : table) v = nd(rng);
    return p;
  }

  std::size_t n_states() const noexcept { return n_states_; }
  std::size_t n_agents() const noexcept { return action_counts_.size(); }
  const std::vector<std::size_t>& action_counts() const noexcept { return action_counts_; }
  std::size_t n_actions(std::size_t agent) const { return action_counts_.at(agent); }

  std::span<const double> logits(std::size_t agent, std::size_t state) const {
    const std::size_t na = action_counts_.at(agent);
    return std::span<const double>(logits_.at(agent)).subspan(state * na, na);
  }
  std::span<double> logits(std::size_t agent, std::size_t state) {
    const std::size_t na = action_counts_.at(agent);
    return std::span<double>(logits_.at(agent)).subspan(state * na, na);
  }

  const std::vector<double>& table(std::size_t agent) const { return logits_.at(agent); }
  std::vector<double>& table(std::size_t agent) { return logits_.at(agent); }

  /// π^i(·|s) written into `out` (size A_i).
  void probs(std::size_t agent, std::size_t state, std::span<double> out) const {
    softmax(logits(agent, state), out);
  }

  std::vector<double> probs(std::size_t agent, std::size_t state) const {
    std::vector<double> out(action_counts_.at(agent));
    probs(agent, state, out);
    return out;
  }

  /// Probability table for one agent, [state][action].
  std::vector<double> prob_table(std::size_t agent) const {
    const std::size_t na = action_counts_.at(agent);
    std::vector<double> out(n_states_ * na);
    for (std::size_t s = 0; s < n_states_; ++s)
      probs(agent, s, std::span<double>(out).subspan(s * na, na));
    return out;
  }

  /// Joint distribution π(a|s) over all joint actions, in codec order
  /// (agent 0 most significant).
  std::vector<double> joint_probs(std::size_t state) const {
    std::vector<double> joint{1.0};
    for (std::size_t i = 0; i < n_agents(); ++i) {
      const auto p = probs(i, state);
      std::vector<double> next(joint.size() * p.size());
      for (std::size_t k = 0; k < joint.size(); ++k)
        for (std::size_t a = 0; a < p.size(); ++a) next[k * p.size() + a] = joint[k] * p[a];
      joint = std::move(next);
    }
    return joint;
  }

  bool same_shape(const ProductPolicy& other) const {
    return n_states_ == other.n_states_ && action_counts_ == other.action_counts_;
  }

  friend bool operator==(const ProductPolicy&, const ProductPolicy&) = default;

 private:
  std::size_t n_states_ = 0;
  std::vector<std::size_t> action_counts_;
  std::vector<std::vector<double>> logits_;
};

/// Draws an index from a probability vector using one uniform variate.
inline std::size_t sample_categorical(std::span<const double> probs, Rng& rng) {
  const double u = uniform01(rng);
  double c = 0.0;
  std::size_t last = 0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    if (probs[k] <= 0.0) continue;
    c += probs[k];
    last = k;
    if (u < c) return k;
  }
  return last;
}

}  // namespace depo
