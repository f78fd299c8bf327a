#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "depo/core.hpp"
#include "depo/env.hpp"
#include "depo/oracle.hpp"
#include "depo/policy.hpp"

namespace depo {

/// L^joint = sum_s rho_old(s) sum_a pi_new(a|s) A_old(s,a), with rho unnormalized.
inline double surrogate_joint(const StochasticGame& g, const ExactEvalResult& old_eval,
                              const ProductPolicy& new_policy) {
  detail::check_policy_shape(g, new_policy);
  const std::size_t S = g.n_states, nj = g.n_joint();
  if (old_eval.adv_joint.size() != S * nj) throw ConfigError("old_eval", "dimension mismatch with game");
  double total = 0.0;
  for (std::size_t s = 0; s < S; ++s) {
    const auto w = new_policy.joint_probs(s);
    double inner = 0.0;
    for (std::size_t a = 0; a < nj; ++a) inner += w[a] * old_eval.adv_joint[s * nj + a];
    total += old_eval.rho[s] * inner;
  }
  return total;
}

/// L^i from a precomputed marginal advantage table and agent i's new
/// probabilities, both laid out [state][a_i].
inline double surrogate_individual(std::span<const double> rho, std::span<const double> marginal_adv,
                                   std::span<const double> new_probs, std::size_t n_actions) {
  if (marginal_adv.size() != rho.size() * n_actions || new_probs.size() != marginal_adv.size())
    throw ConfigError("policy", "dimension mismatch in surrogate_individual");
  double total = 0.0;
  for (std::size_t s = 0; s < rho.size(); ++s) {
    double inner = 0.0;
    for (std::size_t a = 0; a < n_actions; ++a) inner += new_probs[s * n_actions + a] * marginal_adv[s * n_actions + a];
    total += rho[s] * inner;
  }
  return total;
}

/// L^i = sum_s rho_old(s) sum_{a_i} pi^i_new(a_i|s) A^i_old(s,a_i). Only agent
/// `agent` of `new_policy` is read.
inline double surrogate_individual(const StochasticGame& g, const ProductPolicy& old_policy,
                                   const ExactEvalResult& old_eval, std::size_t agent,
                                   const ProductPolicy& new_policy) {
  detail::check_policy_shape(g, new_policy);
  const auto adv = marginal_advantage(g, old_policy, agent, old_eval);
  return surrogate_individual(old_eval.rho, adv, new_policy.prob_table(agent), g.action_counts[agent]);
}

/// KL(pi^i_old(.|s) || pi^i_new(.|s)) for every state.
inline std::vector<double> kl_per_state(const ProductPolicy& old_policy, const ProductPolicy& new_policy,
                                        std::size_t agent) {
  if (!old_policy.same_shape(new_policy)) throw ConfigError("policy", "policies have different shapes");
  std::vector<double> out(old_policy.n_states());
  for (std::size_t s = 0; s < out.size(); ++s)
    out[s] = softmax_kl(old_policy.logits(agent, s), new_policy.logits(agent, s));
  return out;
}

inline double kl_max(std::span<const double> per_state) {
  double m = 0.0;
  for (double k : per_state) m = std::max(m, k);
  return m;
}

inline double kl_max(const ProductPolicy& old_policy, const ProductPolicy& new_policy, std::size_t agent) {
  return kl_max(kl_per_state(old_policy, new_policy, agent));
}

/// Weighted mean of per-state KLs, weights normalized to sum to one.
inline double kl_avg(std::span<const double> weights, std::span<const double> per_state) {
  double num = 0.0, den = 0.0;
  for (std::size_t s = 0; s < per_state.size(); ++s) {
    num += weights[s] * per_state[s];
    den += weights[s];
  }
  return den > 0.0 ? num / den : 0.0;
}

/// Occupancy-weighted average KL under pi_old.
inline double kl_avg(const ExactEvalResult& old_eval, const ProductPolicy& old_policy,
                     const ProductPolicy& new_policy, std::size_t agent) {
  return kl_avg(old_eval.rho, kl_per_state(old_policy, new_policy, agent));
}

/// KL between the joint (product) distributions at one state, computed over
/// all joint outcomes from the multiplied-out probabilities.
inline double joint_kl_at_state(const ProductPolicy& old_policy, const ProductPolicy& new_policy, std::size_t state) {
  const auto p = old_policy.joint_probs(state);
  const auto q = new_policy.joint_probs(state);
  return categorical_kl(p, q);
}

struct SurrogateConstants {
  double m_abs = 0.0;    // max_{s,a} |A_old(s,a)|
  double m_tilde = 0.0;  // 2 m_abs / (1 - gamma)
  double c_const = 0.0;  // 4 gamma m_abs / (1 - gamma)^2
};

inline SurrogateConstants constants_from_max_advantage(double m_abs, double gamma) {
  SurrogateConstants c;
  c.m_abs = m_abs;
  c.m_tilde = 2.0 * m_abs / (1.0 - gamma);
  c.c_const = 4.0 * gamma * m_abs / ((1.0 - gamma) * (1.0 - gamma));
  return c;
}

inline SurrogateConstants constants(const ExactEvalResult& old_eval, double gamma) {
  double m = 0.0;
  for (double a : old_eval.adv_joint) m = std::max(m, std::abs(a));
  return constants_from_max_advantage(m, gamma);
}

struct BoundOptions {
  double tol = 1e-9;
  /// Mutation hook for the verification suite: negates C.
  bool flip_c_sign = false;
};

/// Every term of the decentralized lower bound
///   J_new - J_old >= (1/N) sum_i L^i - M~ sum_i sqrt(KLmax_i) - C sum_i KLmax_i
/// plus the per-agent intermediate inequality
///   |L^joint - L^i| <= M~ sqrt(sum_{j != i} KLmax_j)
/// and the joint TRPO bound it starts from.
struct BoundReport {
  double j_old = 0.0, j_new = 0.0;
  double l_joint = 0.0;
  std::vector<double> l_individual;
  std::vector<double> kl_max_per_agent;
  double joint_kl_max = 0.0;
  double m_abs = 0.0, m_tilde = 0.0, c_const = 0.0;
  double lhs = 0.0, rhs = 0.0;
  bool holds = false;
  double trpo_rhs = 0.0;  // L^joint - C * joint KLmax
  bool trpo_holds = false;
  std::vector<double> proof_step_gap;    // |L^joint - L^i|
  std::vector<double> proof_step_bound;  // M~ sqrt(sum_{j != i} KLmax_j)
  bool proof_steps_hold = false;

  double margin() const { return lhs - rhs; }
};

inline BoundReport verify_bound(const StochasticGame& g, const ProductPolicy& old_policy,
                                const ProductPolicy& new_policy, BoundOptions opt = {}) {
  detail::check_policy_shape(g, old_policy);
  detail::check_policy_shape(g, new_policy);
  const std::size_t N = g.n_agents();
  const auto old_eval = evaluate_joint_policy(g, old_policy);
  BoundReport r;
  r.j_old = old_eval.j_return;
  r.j_new = exact_return(g, new_policy);
  const auto c = constants(old_eval, g.gamma);
  r.m_abs = c.m_abs;
  r.m_tilde = c.m_tilde;
  r.c_const = opt.flip_c_sign ? -c.c_const : c.c_const;
  r.l_joint = surrogate_joint(g, old_eval, new_policy);

  r.l_individual.resize(N);
  r.kl_max_per_agent.resize(N);
  for (std::size_t i = 0; i < N; ++i) {
    r.l_individual[i] = surrogate_individual(g, old_policy, old_eval, i, new_policy);
    r.kl_max_per_agent[i] = kl_max(old_policy, new_policy, i);
  }
  for (std::size_t s = 0; s < g.n_states; ++s)
    r.joint_kl_max = std::max(r.joint_kl_max, joint_kl_at_state(old_policy, new_policy, s));

  double mean_l = 0.0, sum_sqrt = 0.0, sum_kl = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    mean_l += r.l_individual[i];
    sum_sqrt += std::sqrt(r.kl_max_per_agent[i]);
    sum_kl += r.kl_max_per_agent[i];
  }
  mean_l /= static_cast<double>(N);
  r.lhs = r.j_new - r.j_old;
  r.rhs = mean_l - r.m_tilde * sum_sqrt - r.c_const * sum_kl;
  r.holds = r.lhs >= r.rhs - opt.tol;
  r.trpo_rhs = r.l_joint - r.c_const * r.joint_kl_max;
  r.trpo_holds = r.lhs >= r.trpo_rhs - opt.tol;

  r.proof_step_gap.resize(N);
  r.proof_step_bound.resize(N);
  r.proof_steps_hold = true;
  for (std::size_t i = 0; i < N; ++i) {
    r.proof_step_gap[i] = std::abs(r.l_joint - r.l_individual[i]);
    r.proof_step_bound[i] = r.m_tilde * std::sqrt(sum_kl - r.kl_max_per_agent[i] > 0.0 ? sum_kl - r.kl_max_per_agent[i] : 0.0);
    if (r.proof_step_gap[i] > r.proof_step_bound[i] + opt.tol) r.proof_steps_hold = false;
  }
  return r;
}

/// Agent-local decentralized surrogate
///   f(theta) = (1/N) L^i(theta) - M~ sqrt(KLmax(theta)) - C KLmax(theta)
/// over agent i's logits, with everything else frozen at pi_old.
class DecentralizedSurrogate {
 public:
  DecentralizedSurrogate(std::vector<double> rho, std::vector<double> marginal_adv, std::vector<double> old_logits,
                         std::size_t n_actions, std::size_t n_agents, SurrogateConstants c)
      : rho_(std::move(rho)),
        adv_(std::move(marginal_adv)),
        old_logits_(std::move(old_logits)),
        na_(n_actions),
        n_agents_(static_cast<double>(n_agents)),
        c_(c) {
    old_probs_.resize(old_logits_.size());
    for (std::size_t s = 0; s < rho_.size(); ++s)
      softmax(std::span<const double>(old_logits_).subspan(s * na_, na_),
              std::span<double>(old_probs_).subspan(s * na_, na_));
  }

  std::size_t n_states() const noexcept { return rho_.size(); }

  /// Returns (KLmax, argmax state), lowest index on ties.
  std::pair<double, std::size_t> max_kl(std::span<const double> logits) const {
    double best = -1.0;
    std::size_t arg = 0;
    for (std::size_t s = 0; s < n_states(); ++s) {
      const double k = softmax_kl(std::span<const double>(old_logits_).subspan(s * na_, na_), logits.subspan(s * na_, na_));
      if (k > best) {
        best = k;
        arg = s;
      }
    }
    return {std::max(best, 0.0), arg};
  }

  double value(std::span<const double> logits) const {
    double l = 0.0;
    std::vector<double> p(na_);
    for (std::size_t s = 0; s < n_states(); ++s) {
      softmax(logits.subspan(s * na_, na_), p);
      double inner = 0.0;
      for (std::size_t a = 0; a < na_; ++a) inner += p[a] * adv_[s * na_ + a];
      l += rho_[s] * inner;
    }
    const double kl = max_kl(logits).first;
    return l / n_agents_ - c_.m_tilde * std::sqrt(kl) - c_.c_const * kl;
  }

  /// Subgradient; the max-KL term is differentiated at its argmax state and
  /// the square root is smoothed by `sqrt_eps`.
  std::vector<double> gradient(std::span<const double> logits, double sqrt_eps = 1e-12) const {
    std::vector<double> grad(logits.size(), 0.0);
    std::vector<double> p(na_);
    for (std::size_t s = 0; s < n_states(); ++s) {
      softmax(logits.subspan(s * na_, na_), p);
      double mean = 0.0;
      for (std::size_t a = 0; a < na_; ++a) mean += p[a] * adv_[s * na_ + a];
      for (std::size_t a = 0; a < na_; ++a)
        grad[s * na_ + a] = rho_[s] * p[a] * (adv_[s * na_ + a] - mean) / n_agents_;
    }
    const auto [kl, s_star] = max_kl(logits);
    softmax(logits.subspan(s_star * na_, na_), p);
    const double coef = c_.m_tilde / (2.0 * std::sqrt(kl + sqrt_eps)) + c_.c_const;
    for (std::size_t a = 0; a < na_; ++a)
      grad[s_star * na_ + a] -= coef * (p[a] - old_probs_[s_star * na_ + a]);
    return grad;
  }

 private:
  std::vector<double> rho_, adv_, old_logits_, old_probs_;
  std::size_t na_;
  double n_agents_;
  SurrogateConstants c_;
};

/// Each agent independently gradient-ascends its decentralized surrogate from
/// theta_old using the true old-policy constants; the results are combined
/// into the new joint policy. A step that would lower the surrogate is halved
/// until it does not, so each agent's surrogate never drops below its value
/// at theta_old (zero).
inline ProductPolicy exact_improvement_step(const StochasticGame& g, const ProductPolicy& old_policy,
                                            std::size_t inner_steps = 200, double inner_lr = 0.05,
                                            std::size_t max_halvings = 40) {
  detail::check_policy_shape(g, old_policy);
  if (inner_steps == 0) return old_policy;
  if (!(inner_lr > 0.0)) throw ConfigError("inner_lr", "must be positive");
  const auto old_eval = evaluate_joint_policy(g, old_policy);
  const auto c = constants(old_eval, g.gamma);
  ProductPolicy next = old_policy;
  for (std::size_t i = 0; i < g.n_agents(); ++i) {
    DecentralizedSurrogate f(old_eval.rho, marginal_advantage(g, old_policy, i, old_eval), old_policy.table(i),
                             g.action_counts[i], g.n_agents(), c);
    std::vector<double> theta = old_policy.table(i);
    double fv = f.value(theta);
    if (!std::isfinite(fv)) throw OptimizationError("exact_improvement_step: non-finite surrogate");
    for (std::size_t it = 0; it < inner_steps; ++it) {
      const auto grad = f.gradient(theta);
      double eta = inner_lr;
      bool accepted = false;
      for (std::size_t h = 0; h <= max_halvings; ++h, eta *= 0.5) {
        std::vector<double> cand(theta);
        for (std::size_t k = 0; k < cand.size(); ++k) cand[k] += eta * grad[k];
        const double cv = f.value(cand);
        if (!std::isfinite(cv)) throw OptimizationError("exact_improvement_step: non-finite surrogate");
        if (cv > fv) {
          theta = std::move(cand);
          fv = cv;
          accepted = true;
          break;
        }
      }
      if (!accepted) break;
    }
    next.table(i) = std::move(theta);
  }
  return next;
}

}  // namespace depo
