#pragma once

// Test-side reference computations. These deliberately avoid the library's
// own solvers: dense Gaussian elimination, explicit enumeration and plain
// loops over decoded joint actions.

#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "depo/env.hpp"
#include "depo/policy.hpp"

namespace ref {

using depo::ProductPolicy;
using depo::StochasticGame;

/// The small game used throughout: 2 states, 2 agents with 2 actions each,
/// gamma 0.9, generator seed 3.
inline StochasticGame seed3_game() { return depo::generate_game(3, 2, 2, {2, 2}, 0.9, 0.2, 0.0, 1.0); }

/// Single-agent variant of the same setup.
inline StochasticGame seed3_single() { return depo::generate_game(3, 2, 1, {2}, 0.9, 0.2, 0.0, 1.0); }

/// One state; reward per joint action as given.
inline StochasticGame single_state(std::vector<std::size_t> counts, std::vector<double> rewards, double gamma) {
  StochasticGame g;
  g.n_states = 1;
  g.action_counts = std::move(counts);
  g.gamma = gamma;
  g.reward = std::move(rewards);
  g.transition.assign(g.reward.size(), 1.0);
  g.initial_dist = {1.0};
  return g;
}

/// Solves A x = b (n x n, row-major) by Gaussian elimination with partial pivoting.
inline std::vector<double> solve(std::vector<double> A, std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(A[r * n + c]) > std::abs(A[piv * n + c])) piv = r;
    for (std::size_t k = 0; k < n; ++k) std::swap(A[c * n + k], A[piv * n + k]);
    std::swap(b[c], b[piv]);
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = A[r * n + c] / A[c * n + c];
      for (std::size_t k = c; k < n; ++k) A[r * n + k] -= f * A[c * n + k];
      b[r] -= f * b[c];
    }
  }
  std::vector<double> x(n);
  for (std::size_t r = n; r-- > 0;) {
    double s = b[r];
    for (std::size_t k = r + 1; k < n; ++k) s -= A[r * n + k] * x[k];
    x[r] = s / A[r * n + r];
  }
  return x;
}

/// pi(a|s) for a joint index, from decoded per-agent probabilities.
inline double joint_prob(const StochasticGame& g, const ProductPolicy& p, std::size_t s, std::size_t joint) {
  const auto acts = g.codec().decode(joint);
  double prob = 1.0;
  for (std::size_t i = 0; i < acts.size(); ++i) prob *= p.probs(i, s)[acts[i]];
  return prob;
}

/// Joint policy as an explicit [s][joint] table.
using JointTable = std::vector<double>;

inline JointTable joint_table(const StochasticGame& g, const ProductPolicy& p) {
  const std::size_t J = g.n_joint();
  JointTable t(g.n_states * J);
  for (std::size_t s = 0; s < g.n_states; ++s)
    for (std::size_t a = 0; a < J; ++a) t[s * J + a] = joint_prob(g, p, s, a);
  return t;
}

/// V for an arbitrary (possibly non-product) joint policy table.
inline std::vector<double> values(const StochasticGame& g, const JointTable& pi) {
  const std::size_t S = g.n_states, J = g.n_joint();
  std::vector<double> A(S * S, 0.0), r(S, 0.0);
  for (std::size_t s = 0; s < S; ++s) {
    A[s * S + s] += 1.0;
    for (std::size_t a = 0; a < J; ++a) {
      const double w = pi[s * J + a];
      r[s] += w * g.reward[s * J + a];
      for (std::size_t t = 0; t < S; ++t) A[s * S + t] -= g.gamma * w * g.transition[(s * J + a) * S + t];
    }
  }
  return solve(A, r);
}

inline std::vector<double> values(const StochasticGame& g, const ProductPolicy& p) { return values(g, joint_table(g, p)); }

inline double ret(const StochasticGame& g, const std::vector<double>& v) {
  double j = 0.0;
  for (std::size_t s = 0; s < g.n_states; ++s) j += g.initial_dist[s] * v[s];
  return j;
}

inline double ret(const StochasticGame& g, const ProductPolicy& p) { return ret(g, values(g, p)); }

/// Q(s,a) = r(s,a) + gamma sum_s' P(s'|s,a) V(s').
inline std::vector<double> q_values(const StochasticGame& g, const std::vector<double>& v) {
  const std::size_t S = g.n_states, J = g.n_joint();
  std::vector<double> q(S * J);
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t a = 0; a < J; ++a) {
      double x = g.reward[s * J + a];
      for (std::size_t t = 0; t < S; ++t) x += g.gamma * g.transition[(s * J + a) * S + t] * v[t];
      q[s * J + a] = x;
    }
  return q;
}

/// Discounted occupancy by truncated power series sum_t gamma^t mu P^t.
inline std::vector<double> occupancy(const StochasticGame& g, const ProductPolicy& p) {
  const std::size_t S = g.n_states, J = g.n_joint();
  const auto pi = joint_table(g, p);
  std::vector<double> mu = g.initial_dist, rho(S, 0.0);
  double disc = 1.0;
  while (disc > 1e-17) {
    std::vector<double> next(S, 0.0);
    for (std::size_t s = 0; s < S; ++s) {
      rho[s] += disc * mu[s];
      for (std::size_t a = 0; a < J; ++a)
        for (std::size_t t = 0; t < S; ++t) next[t] += mu[s] * pi[s * J + a] * g.transition[(s * J + a) * S + t];
    }
    mu = std::move(next);
    disc *= g.gamma;
  }
  return rho;
}

/// Best return over all deterministic joint policies, by enumeration.
inline double brute_force_j_star(const StochasticGame& g) {
  const std::size_t S = g.n_states, J = g.n_joint();
  std::vector<std::size_t> choice(S, 0);
  double best = -1e300;
  for (;;) {
    JointTable pi(S * J, 0.0);
    for (std::size_t s = 0; s < S; ++s) pi[s * J + choice[s]] = 1.0;
    best = std::max(best, ret(g, values(g, pi)));
    std::size_t k = 0;
    while (k < S && ++choice[k] == J) choice[k++] = 0;
    if (k == S) break;
  }
  return best;
}

/// Plain categorical KL.
inline double kl(const std::vector<double>& p, const std::vector<double>& q) {
  double d = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k)
    if (p[k] > 0.0) d += p[k] * std::log(p[k] / q[k]);
  return d;
}

/// Central finite-difference gradient.
inline std::vector<double> fd_gradient(const std::function<double(std::span<const double>)>& f,
                                       std::vector<double> x, double h = 1e-6) {
  std::vector<double> g(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double keep = x[k];
    x[k] = keep + h;
    const double up = f(x);
    x[k] = keep - h;
    const double dn = f(x);
    x[k] = keep;
    g[k] = (up - dn) / (2.0 * h);
  }
  return g;
}

/// ||a - b||_2 / max(||b||_2, floor).
inline double rel_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-6) {
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    num += (a[k] - b[k]) * (a[k] - b[k]);
    den += b[k] * b[k];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), floor);
}

/// Random product policy with logits of the given scale.
inline ProductPolicy random_policy(const StochasticGame& g, double scale, std::mt19937_64& rng) {
  return ProductPolicy::random(g.n_states, g.action_counts, scale, rng);
}

/// Small random game: S in [1,max_s], N in [1,max_n], A_i in [1,max_a].
inline StochasticGame random_game(std::mt19937_64& rng, std::size_t max_s = 6, std::size_t max_n = 3,
                                  std::size_t max_a = 3) {
  std::uniform_int_distribution<std::size_t> ds(1, max_s), dn(1, max_n), da(1, max_a);
  std::uniform_real_distribution<double> dg(0.3, 0.95);
  const std::size_t S = ds(rng), N = dn(rng);
  std::vector<std::size_t> counts(N);
  for (auto& a : counts) a = da(rng);
  return depo::generate_game(rng(), S, N, counts, dg(rng), 0.5, -1.0, 1.0);
}

}  // namespace ref
