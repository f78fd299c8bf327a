#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "depo/core.hpp"
#include "depo/env.hpp"
#include "depo/policy.hpp"

namespace depo {

/// States up to this size are evaluated with a dense LU solve.
inline constexpr std::size_t kDirectSolveMaxStates = 512;

namespace detail {

/// Threshold on the sup-norm change between iterates that guarantees the
/// value error is below `tol` for a gamma-contraction.
inline double change_threshold(double tol, double gamma) {
  if (gamma <= 0.0) return std::numeric_limits<double>::infinity();
  return tol * (1.0 - gamma) / gamma;
}

/// Sup-norm change below which successive iterates differ only by rounding.
inline double rounding_floor(std::span<const double> v) {
  double scale = 1.0;
  for (double x : v) scale = std::max(scale, std::abs(x));
  return 64.0 * std::numeric_limits<double>::epsilon() * scale;
}

inline double sup_diff(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) d = std::max(d, std::abs(a[k] - b[k]));
  return d;
}

/// Expected next-state value for every (state, joint action).
inline std::vector<double> backup_q(const StochasticGame& g, std::span<const double> v) {
  const std::size_t S = g.n_states, nj = g.n_joint();
  std::vector<double> q(S * nj);
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t a = 0; a < nj; ++a) {
      const double* row = g.transition.data() + (s * nj + a) * S;
      double ev = 0.0;
      for (std::size_t k = 0; k < S; ++k) ev += row[k] * v[k];
      q[s * nj + a] = g.reward[s * nj + a] + g.gamma * ev;
    }
  return q;
}

/// Solves v = r + gamma * P v, either directly or by iteration.
inline std::vector<double> solve_policy_values(const std::vector<double>& p_pi, const std::vector<double>& r_pi,
                                               std::size_t S, double gamma, double tol, bool transpose = false) {
  std::vector<double> v(S, 0.0);
  if (S <= kDirectSolveMaxStates) {
    Eigen::MatrixXd m(S, S);
    Eigen::VectorXd b(S);
    for (std::size_t s = 0; s < S; ++s) {
      b(s) = r_pi[s];
      for (std::size_t k = 0; k < S; ++k) {
        const double p = transpose ? p_pi[k * S + s] : p_pi[s * S + k];
        m(s, k) = (s == k ? 1.0 : 0.0) - gamma * p;
      }
    }
    const Eigen::VectorXd x = m.partialPivLu().solve(b);
    for (std::size_t s = 0; s < S; ++s) v[s] = x(s);
    return v;
  }
  const double thr = change_threshold(tol, gamma);
  std::vector<double> next(S);
  for (;;) {
    for (std::size_t s = 0; s < S; ++s) {
      double acc = 0.0;
      for (std::size_t k = 0; k < S; ++k) acc += (transpose ? p_pi[k * S + s] : p_pi[s * S + k]) * v[k];
      next[s] = r_pi[s] + gamma * acc;
    }
    const double d = sup_diff(next, v);
    v.swap(next);
    if (d < thr || d <= rounding_floor(v)) break;
  }
  return v;
}

/// Product over agents j != skip of pi^j(a_j|s), for every joint action.
/// Pass skip = n_agents to include every agent.
inline std::vector<double> product_weights(const ProductPolicy& policy, std::size_t state, std::size_t skip) {
  std::vector<double> w{1.0};
  for (std::size_t i = 0; i < policy.n_agents(); ++i) {
    const std::size_t na = policy.n_actions(i);
    std::vector<double> p(na, 1.0);
    if (i != skip) policy.probs(i, state, p);
    std::vector<double> next(w.size() * na);
    for (std::size_t k = 0; k < w.size(); ++k)
      for (std::size_t a = 0; a < na; ++a) next[k * na + a] = w[k] * p[a];
    w = std::move(next);
  }
  return w;
}

inline void check_policy_shape(const StochasticGame& g, const ProductPolicy& p) {
  if (p.n_states() != g.n_states || p.action_counts() != g.action_counts)
    throw ConfigError("policy", "policy dimensions do not match the game");
}

}  // namespace detail

struct ValueIterationResult {
  std::vector<double> v_star;
  double j_star = 0.0;
  std::vector<std::size_t> greedy;  // joint action per state
  std::size_t iterations = 0;
  double residual = 0.0;  // last sup-norm Bellman change
};

/// Bellman optimality iteration over the joint action space. Stops when the
/// sup-norm change drops below tol*(1-gamma)/gamma, which bounds the value
/// error by tol. With `accelerate`, a non-final iterate is replaced by the
/// exact value of its greedy policy (modified policy iteration); the fixed
/// point and stopping rule are unchanged. Greedy ties go to the lowest index.
inline ValueIterationResult joint_value_iteration(const StochasticGame& g, double tol, bool accelerate = true,
                                                  std::size_t max_iterations = 1'000'000) {
  if (!(tol > 0.0)) throw ConfigError("tol", "must be positive");
  const std::size_t S = g.n_states, nj = g.n_joint();
  const double thr = detail::change_threshold(tol, g.gamma);
  ValueIterationResult res;
  res.v_star.assign(S, 0.0);
  res.greedy.assign(S, 0);
  std::vector<double> tv(S);
  std::vector<std::size_t> previous_greedy;
  while (res.iterations < max_iterations) {
    ++res.iterations;
    const auto q = detail::backup_q(g, res.v_star);
    for (std::size_t s = 0; s < S; ++s) {
      std::size_t best = 0;
      for (std::size_t a = 1; a < nj; ++a)
        if (q[s * nj + a] > q[s * nj + best]) best = a;
      res.greedy[s] = best;
      tv[s] = q[s * nj + best];
    }
    res.residual = detail::sup_diff(tv, res.v_star);
    if (res.residual < thr || res.residual <= detail::rounding_floor(tv)) {
      res.v_star = tv;
      break;
    }
    if (accelerate && res.iterations > 1 && res.greedy == previous_greedy) {
      // v_star already is the exact value of this greedy policy: policy iteration has converged.
      break;
    }
    previous_greedy = res.greedy;
    if (accelerate) {
      std::vector<double> p_pi(S * S), r_pi(S);
      for (std::size_t s = 0; s < S; ++s) {
        const auto row = g.transition_row(s, res.greedy[s]);
        std::copy(row.begin(), row.end(), p_pi.begin() + static_cast<std::ptrdiff_t>(s * S));
        r_pi[s] = g.reward_at(s, res.greedy[s]);
      }
      res.v_star = detail::solve_policy_values(p_pi, r_pi, S, g.gamma, tol * 1e-3);
    } else {
      res.v_star = tv;
    }
  }
  res.j_star = 0.0;
  for (std::size_t s = 0; s < S; ++s) res.j_star += g.initial_dist[s] * res.v_star[s];
  return res;
}

/// Exact quantities of a joint policy. Tables over joint actions are laid out
/// [state][joint_action].
struct ExactEvalResult {
  std::vector<double> v_joint;
  std::vector<double> q_joint;
  std::vector<double> adv_joint;
  std::vector<double> rho;  // unnormalized discounted occupancy, mass 1/(1-gamma)
  double j_return = 0.0;
  std::vector<double> joint_probs;  // pi(a|s), same layout as q_joint
};

inline ExactEvalResult evaluate_joint_policy(const StochasticGame& g, const ProductPolicy& policy,
                                             double tol = 1e-12) {
  detail::check_policy_shape(g, policy);
  const std::size_t S = g.n_states, nj = g.n_joint();
  ExactEvalResult out;
  out.joint_probs.resize(S * nj);
  std::vector<double> p_pi(S * S, 0.0), r_pi(S, 0.0);
  for (std::size_t s = 0; s < S; ++s) {
    const auto w = policy.joint_probs(s);
    std::copy(w.begin(), w.end(), out.joint_probs.begin() + static_cast<std::ptrdiff_t>(s * nj));
    double* prow = p_pi.data() + s * S;
    for (std::size_t a = 0; a < nj; ++a) {
      r_pi[s] += w[a] * g.reward_at(s, a);
      const double* row = g.transition.data() + (s * nj + a) * S;
      for (std::size_t k = 0; k < S; ++k) prow[k] += w[a] * row[k];
    }
  }
  out.v_joint = detail::solve_policy_values(p_pi, r_pi, S, g.gamma, tol);
  out.q_joint = detail::backup_q(g, out.v_joint);
  out.adv_joint.resize(S * nj);
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t a = 0; a < nj; ++a) out.adv_joint[s * nj + a] = out.q_joint[s * nj + a] - out.v_joint[s];
  out.rho = detail::solve_policy_values(p_pi, g.initial_dist, S, g.gamma, tol, /*transpose=*/true);
  for (std::size_t s = 0; s < S; ++s) out.j_return += g.initial_dist[s] * out.v_joint[s];
  return out;
}

/// Agent i's decentralized action-value table, [state][a_i].
struct DecentralizedQ {
  std::size_t agent = 0;
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  std::vector<double> table;
  std::size_t iterations = 0;
  std::vector<double> successive_diffs;  // sup-norm change of each iterate

  double at(std::size_t s, std::size_t a) const { return table[s * n_actions + a]; }
};

/// Agent-local view of the game with the other agents marginalized out under
/// pi^{-i}: r_i(s, a_i) and P_i(s, a_i, s').
struct MarginalModel {
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  std::vector<double> reward;      // [s][a_i]
  std::vector<double> transition;  // [s][a_i][s']
  std::vector<double> own_probs;   // pi^i, [s][a_i]
  double gamma = 0.0;
};

inline MarginalModel marginal_model(const StochasticGame& g, const ProductPolicy& policy, std::size_t agent) {
  detail::check_policy_shape(g, policy);
  if (agent >= g.n_agents()) throw BoundsError("agent index out of range");
  const std::size_t S = g.n_states, nj = g.n_joint(), na = g.action_counts[agent];
  const JointActionCodec codec = g.codec();
  MarginalModel m;
  m.n_states = S;
  m.n_actions = na;
  m.gamma = g.gamma;
  m.reward.assign(S * na, 0.0);
  m.transition.assign(S * na * S, 0.0);
  m.own_probs = policy.prob_table(agent);
  for (std::size_t s = 0; s < S; ++s) {
    const auto w = detail::product_weights(policy, s, agent);
    for (std::size_t a = 0; a < nj; ++a) {
      const std::size_t ai = codec.component(a, agent);
      m.reward[s * na + ai] += w[a] * g.reward_at(s, a);
      const double* row = g.transition.data() + (s * nj + a) * S;
      double* dst = m.transition.data() + (s * na + ai) * S;
      for (std::size_t k = 0; k < S; ++k) dst[k] += w[a] * row[k];
    }
  }
  return m;
}

/// One application of the decentralized Bellman operator:
/// (Gamma Q)(s,a_i) = r_i(s,a_i) + gamma * sum_{s'} P_i(s'|s,a_i) sum_{a'} pi^i(a'|s') Q(s',a').
inline std::vector<double> apply_decentralized_operator(const MarginalModel& m, std::span<const double> q) {
  const std::size_t S = m.n_states, na = m.n_actions;
  std::vector<double> v(S, 0.0);
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t a = 0; a < na; ++a) v[s] += m.own_probs[s * na + a] * q[s * na + a];
  std::vector<double> out(S * na);
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t a = 0; a < na; ++a) {
      const double* row = m.transition.data() + (s * na + a) * S;
      double ev = 0.0;
      for (std::size_t k = 0; k < S; ++k) ev += row[k] * v[k];
      out[s * na + a] = m.reward[s * na + a] + m.gamma * ev;
    }
  return out;
}

/// Iterates the decentralized operator from the zero table to its fixed point.
inline DecentralizedQ decentralized_q_fixed_point(const StochasticGame& g, const ProductPolicy& policy,
                                                  std::size_t agent, double tol = 1e-12) {
  const MarginalModel m = marginal_model(g, policy, agent);
  DecentralizedQ out;
  out.agent = agent;
  out.n_states = m.n_states;
  out.n_actions = m.n_actions;
  out.table.assign(m.n_states * m.n_actions, 0.0);
  const double thr = detail::change_threshold(tol, g.gamma);
  for (;;) {
    auto next = apply_decentralized_operator(m, out.table);
    const double d = detail::sup_diff(next, out.table);
    out.table = std::move(next);
    out.successive_diffs.push_back(d);
    ++out.iterations;
    if (d < thr || d <= detail::rounding_floor(out.table)) break;
  }
  return out;
}

/// A^i(s,a_i) = sum_{a_-i} pi^{-i}(a_-i|s) A(s, a_i, a_-i), laid out [s][a_i].
inline std::vector<double> marginal_advantage(const StochasticGame& g, const ProductPolicy& policy,
                                              std::size_t agent, const ExactEvalResult& eval) {
  detail::check_policy_shape(g, policy);
  if (agent >= g.n_agents()) throw BoundsError("agent index out of range");
  const std::size_t S = g.n_states, nj = g.n_joint(), na = g.action_counts[agent];
  const JointActionCodec codec = g.codec();
  std::vector<double> out(S * na, 0.0);
  for (std::size_t s = 0; s < S; ++s) {
    const auto w = detail::product_weights(policy, s, agent);
    for (std::size_t a = 0; a < nj; ++a)
      out[s * na + codec.component(a, agent)] += w[a] * eval.adv_joint[s * nj + a];
  }
  return out;
}

/// V_i(s) = sum_{a_i} pi^i(a_i|s) Q_i(s,a_i) from the decentralized fixed point.
inline std::vector<double> decentralized_v(const StochasticGame& g, const ProductPolicy& policy, std::size_t agent,
                                           double tol = 1e-12) {
  const auto q = decentralized_q_fixed_point(g, policy, agent, tol);
  const auto pi = policy.prob_table(agent);
  std::vector<double> v(g.n_states, 0.0);
  for (std::size_t s = 0; s < g.n_states; ++s)
    for (std::size_t a = 0; a < q.n_actions; ++a) v[s] += pi[s * q.n_actions + a] * q.at(s, a);
  return v;
}

/// J(pi) alone; skips the joint Q table and occupancy.
inline double exact_return(const StochasticGame& g, const ProductPolicy& policy, double tol = 1e-12) {
  detail::check_policy_shape(g, policy);
  const std::size_t S = g.n_states, nj = g.n_joint();
  std::vector<double> p_pi(S * S, 0.0), r_pi(S, 0.0);
  for (std::size_t s = 0; s < S; ++s) {
    const auto w = policy.joint_probs(s);
    double* prow = p_pi.data() + s * S;
    for (std::size_t a = 0; a < nj; ++a) {
      r_pi[s] += w[a] * g.reward_at(s, a);
      const double* row = g.transition.data() + (s * nj + a) * S;
      for (std::size_t k = 0; k < S; ++k) prow[k] += w[a] * row[k];
    }
  }
  const auto v = detail::solve_policy_values(p_pi, r_pi, S, g.gamma, tol);
  double j = 0.0;
  for (std::size_t s = 0; s < S; ++s) j += g.initial_dist[s] * v[s];
  return j;
}

}  // namespace depo
