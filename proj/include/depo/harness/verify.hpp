#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "depo/adaptive.hpp"
#include "depo/core.hpp"
#include "depo/env.hpp"
#include "depo/oracle.hpp"
#include "depo/policy.hpp"
#include "depo/policy_update.hpp"
#include "depo/surrogate.hpp"

namespace depo::harness {

/// A random tabular game with an old and a new product policy.
struct SmallInstance {
  std::uint64_t seed = 0;
  StochasticGame game;
  ProductPolicy old_policy, new_policy;
};

inline std::size_t uniform_index(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(uniform01(rng) * static_cast<double>(hi - lo + 1));
}

/// S in [1, max_states], N in [1, max_agents], A_i in [1, max_actions], gamma
/// in [0.3, 0.95]. The new policy is the old one plus a perturbation whose
/// scale ranges from tiny to large so both tight and loose cases appear.
inline SmallInstance random_instance(std::uint64_t seed, std::size_t max_states = 6, std::size_t max_agents = 3,
                                     std::size_t max_actions = 3) {
  Rng rng(seed);
  SmallInstance inst;
  inst.seed = seed;
  const std::size_t S = uniform_index(rng, 1, max_states);
  const std::size_t N = uniform_index(rng, 1, max_agents);
  std::vector<std::size_t> counts(N);
  for (auto& a : counts) a = uniform_index(rng, 1, max_actions);
  const double gamma = 0.3 + 0.65 * uniform01(rng);
  const double alpha = 0.1 + 1.9 * uniform01(rng);
  inst.game = generate_game(GeneratorParams{mix64(seed), S, counts, gamma, alpha, -1.0, 1.0});
  inst.old_policy = ProductPolicy::random(S, counts, 1.5 * uniform01(rng), rng);
  const double scale = std::pow(10.0, -3.0 + 3.5 * uniform01(rng));
  const ProductPolicy delta = ProductPolicy::random(S, counts, scale, rng);
  inst.new_policy = inst.old_policy;
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t k = 0; k < inst.new_policy.table(i).size(); ++k) inst.new_policy.table(i)[k] += delta.table(i)[k];
  return inst;
}

/// Q^pi marginalized over the other agents: sum_{a_-i} pi^{-i}(a_-i|s) Q(s, a).
inline std::vector<double> marginalized_joint_q(const StochasticGame& g, const ProductPolicy& policy, std::size_t agent,
                                                const ExactEvalResult& eval) {
  const std::size_t na = g.action_counts[agent], J = g.n_joint();
  std::vector<double> out(g.n_states * na, 0.0);
  for (std::size_t s = 0; s < g.n_states; ++s) {
    const auto w = depo::detail::product_weights(policy, s, agent);
    for (std::size_t ja = 0; ja < J; ++ja) out[s * na + g.codec().component(ja, agent)] += w[ja] * eval.q_joint[s * J + ja];
  }
  return out;
}

/// ||grad - fd||_2 / max(||fd||_2, 1e-6), fd by central differences at step h.
template <class F>
double fd_relative_error(const F& f, std::span<const double> x, std::span<const double> grad, double h = 1e-6) {
  std::vector<double> p(x.begin(), x.end());
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double keep = p[k];
    p[k] = keep + h;
    const double up = f(std::span<const double>(p));
    p[k] = keep - h;
    const double dn = f(std::span<const double>(p));
    p[k] = keep;
    const double fd = (up - dn) / (2.0 * h);
    num += (grad[k] - fd) * (grad[k] - fd);
    den += fd * fd;
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-6);
}

/// Random single-agent batch for objective checks. The evaluation point is
/// moved off the old logits so sqrt(KL) is smooth, and clip kinks are avoided
/// by resampling until every ratio is at least 1e-3 away from 1 +- eps.
struct ObjectiveInstance {
  AgentSamples samples;
  std::vector<double> old_logits, logits;
};

inline ObjectiveInstance random_objective_instance(std::uint64_t seed, double clip_eps = 0.2) {
  Rng rng(seed);
  ObjectiveInstance o;
  const std::size_t S = uniform_index(rng, 1, 4), na = uniform_index(rng, 2, 4), B = uniform_index(rng, 5, 40);
  o.samples.n_states = S;
  o.samples.n_actions = na;
  std::normal_distribution<double> nd(0.0, 1.0);
  for (std::size_t k = 0; k < B; ++k) {
    o.samples.states.push_back(uniform_index(rng, 0, S - 1));
    o.samples.actions.push_back(uniform_index(rng, 0, na - 1));
    o.samples.advantages.push_back(nd(rng));
  }
  o.old_logits.resize(S * na);
  for (double& v : o.old_logits) v = nd(rng);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    o.logits = o.old_logits;
    for (double& v : o.logits) v += 0.3 * nd(rng);
    bool ok = true;
    for (std::size_t k = 0; k < B && ok; ++k) {
      const std::size_t s = o.samples.states[k];
      std::vector<double> lp(na), lq(na);
      log_softmax(std::span<const double>(o.logits).subspan(s * na, na), lp);
      log_softmax(std::span<const double>(o.old_logits).subspan(s * na, na), lq);
      const double u = std::exp(lp[o.samples.actions[k]] - lq[o.samples.actions[k]]);
      ok = std::abs(u - (1.0 + clip_eps)) > 1e-3 && std::abs(u - (1.0 - clip_eps)) > 1e-3;
    }
    if (ok) break;
  }
  return o;
}

struct BoundRow {
  std::uint64_t seed = 0;
  std::size_t n_states = 0, n_agents = 0;
  double lhs = 0.0, rhs = 0.0;
  bool holds = false;
};

struct CheckRow {
  std::string check;
  std::size_t trial = 0;
  std::uint64_t seed = 0;
  double value = 0.0;      // measured quantity
  double threshold = 0.0;  // pass iff value <= threshold
  bool passed = false;
};

struct VerifyOptions {
  std::uint64_t seed = 0;
  std::size_t trials = 200;
  double bound_tol = 1e-9;
  bool flip_c_sign = false;  // mutation hook: the suite must then fail
};

struct VerifyReport {
  std::vector<BoundRow> bound_rows;
  std::vector<CheckRow> checks;

  bool all_passed() const {
    for (const auto& r : bound_rows)
      if (!r.holds) return false;
    for (const auto& c : checks)
      if (!c.passed) return false;
    return true;
  }
  std::optional<CheckRow> first_failure() const {
    for (const auto& c : checks)
      if (!c.passed) return c;
    return std::nullopt;
  }
};

namespace detail {

inline void add_check(VerifyReport& rep, std::string name, std::size_t trial, std::uint64_t seed, double value,
                      double threshold) {
  rep.checks.push_back({std::move(name), trial, seed, value, threshold, std::isfinite(value) && value <= threshold});
}

inline void check_bound(VerifyReport& rep, const VerifyOptions& opt, std::size_t t) {
  const auto inst = random_instance(derive_seed(opt.seed, t));
  const auto r = verify_bound(inst.game, inst.old_policy, inst.new_policy, {opt.bound_tol, opt.flip_c_sign});
  rep.bound_rows.push_back({inst.seed, inst.game.n_states, inst.game.n_agents(), r.lhs, r.rhs, r.holds});
  add_check(rep, "bound", t, inst.seed, r.rhs - r.lhs, opt.bound_tol);
  add_check(rep, "joint_trust_region_bound", t, inst.seed, r.trpo_rhs - r.lhs, opt.bound_tol);
  double worst = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < r.proof_step_gap.size(); ++i)
    worst = std::max(worst, r.proof_step_gap[i] - r.proof_step_bound[i]);
  add_check(rep, "proof_step", t, inst.seed, worst, opt.bound_tol);
}

inline void check_fixed_point(VerifyReport& rep, const VerifyOptions& opt, std::size_t t) {
  const std::uint64_t seed = derive_seed(opt.seed ^ 0x5151, t);
  const auto inst = random_instance(seed);
  const auto& g = inst.game;
  const auto eval = evaluate_joint_policy(g, inst.old_policy);
  double q_err = 0.0, v_err = 0.0, ratio = 0.0;
  Rng rng(mix64(seed));
  for (std::size_t i = 0; i < g.n_agents(); ++i) {
    const auto dq = decentralized_q_fixed_point(g, inst.old_policy, i);
    const auto ref = marginalized_joint_q(g, inst.old_policy, i, eval);
    for (std::size_t k = 0; k < ref.size(); ++k) q_err = std::max(q_err, std::abs(dq.table[k] - ref[k]));
    const auto v = decentralized_v(g, inst.old_policy, i);
    for (std::size_t s = 0; s < g.n_states; ++s) v_err = std::max(v_err, std::abs(v[s] - eval.v_joint[s]));
    // contraction on arbitrary pairs of tables
    const auto m = marginal_model(g, inst.old_policy, i);
    for (int rep_k = 0; rep_k < 4; ++rep_k) {
      std::vector<double> q1(ref.size()), q2(ref.size());
      for (std::size_t k = 0; k < ref.size(); ++k) {
        q1[k] = 10.0 * (uniform01(rng) - 0.5);
        q2[k] = 10.0 * (uniform01(rng) - 0.5);
      }
      const auto a = apply_decentralized_operator(m, q1), b = apply_decentralized_operator(m, q2);
      const double num = depo::detail::sup_diff(a, b), den = depo::detail::sup_diff(q1, q2);
      if (den > 0.0) ratio = std::max(ratio, num / den - g.gamma);
    }
  }
  add_check(rep, "fixed_point_q", t, seed, q_err, 1e-8);
  add_check(rep, "fixed_point_v", t, seed, v_err, 1e-8);
  add_check(rep, "contraction_excess", t, seed, ratio, 1e-9);
}

inline void check_kl_additivity(VerifyReport& rep, const VerifyOptions& opt, std::size_t t) {
  const std::uint64_t seed = derive_seed(opt.seed ^ 0x6b6c, t);
  const auto inst = random_instance(seed);
  double err = 0.0;
  for (std::size_t s = 0; s < inst.game.n_states; ++s) {
    double sum = 0.0;
    for (std::size_t i = 0; i < inst.game.n_agents(); ++i)
      sum += softmax_kl(inst.old_policy.logits(i, s), inst.new_policy.logits(i, s));
    err = std::max(err, std::abs(joint_kl_at_state(inst.old_policy, inst.new_policy, s) - sum));
  }
  add_check(rep, "kl_additivity", t, seed, err, 1e-12);
}

inline void check_gradients(VerifyReport& rep, const VerifyOptions& opt, std::size_t t) {
  const std::uint64_t seed = derive_seed(opt.seed ^ 0x6772, t);
  const auto o = random_objective_instance(seed);
  Rng rng(mix64(seed));
  const PolicyLoss losses[] = {PolicyLoss::dpo, PolicyLoss::ippo_kl, PolicyLoss::ippo_clip};
  const char* names[] = {"gradient_dpo", "gradient_ippo_kl", "gradient_ippo_clip"};
  for (int l = 0; l < 3; ++l) {
    ObjectiveParams p;
    p.loss = losses[l];
    p.beta = {0.05 + uniform01(rng), 0.05 + uniform01(rng)};
    p.n_agents = static_cast<double>(uniform_index(rng, 1, 4));
    const SampledObjective f(o.samples, o.old_logits, p);
    const auto grad = f.gradient(o.logits);
    const double err = fd_relative_error([&](std::span<const double> x) { return f.value(x); },
                                         std::span<const double>(o.logits), grad);
    add_check(rep, names[l], t, seed, err, 1e-5);
  }
  // hinge form differs from the clipped form by a constant in the new logits
  ObjectiveParams p;
  p.loss = PolicyLoss::ippo_clip;
  const SampledObjective f(o.samples, o.old_logits, p);
  const double c0 = f.value(o.old_logits) - f.hinge_value(o.old_logits);
  double spread = 0.0;
  std::normal_distribution<double> nd(0.0, 1.0);
  for (int k = 0; k < 5; ++k) {
    std::vector<double> x = o.old_logits;
    for (double& v : x) v += nd(rng);
    spread = std::max(spread, std::abs(f.value(x) - f.hinge_value(x) - c0));
  }
  add_check(rep, "hinge_constant", t, seed, spread, 1e-10);
}

inline void check_adaptive(VerifyReport& rep) {
  const AdaptiveRule rule{0.1, 1.5, 2.0};
  const PenaltyCoefficients c{0.01, 0.01};
  const auto up = adapt_coefficients(c, 0.2, rule), down = adapt_coefficients(c, 0.05, rule),
             hold = adapt_coefficients(c, 0.1, rule);
  const double err = std::max({std::abs(up.beta1 - 0.02), std::abs(up.beta2 - 0.02), std::abs(down.beta1 - 0.005),
                               std::abs(down.beta2 - 0.005), std::abs(hold.beta1 - 0.01), std::abs(hold.beta2 - 0.01)});
  add_check(rep, "adaptive_rule", 0, 0, err, 0.0);
}

inline void check_monotonic_stepper(VerifyReport& rep, const VerifyOptions& opt, std::size_t t) {
  const std::uint64_t seed = derive_seed(opt.seed ^ 0x6d6f, t);
  const auto inst = random_instance(seed, 4, 2, 3);
  const auto& g = inst.game;
  const double j_star = joint_value_iteration(g, 1e-12).j_star;
  ProductPolicy p = inst.old_policy;
  double prev = exact_return(g, p), worst_drop = 0.0, worst_excess = prev - j_star;
  for (int k = 0; k < 5; ++k) {
    p = exact_improvement_step(g, p, 50, 1.0);
    const double j = exact_return(g, p);
    worst_drop = std::max(worst_drop, prev - j);
    worst_excess = std::max(worst_excess, j - j_star);
    prev = j;
  }
  add_check(rep, "stepper_monotone", t, seed, worst_drop, 1e-10);
  add_check(rep, "stepper_below_optimum", t, seed, worst_excess, 1e-9);
}

}  // namespace detail

/// Every module's property suite. Bound, proof-step and KL checks run once
/// per trial; the costlier checks run on a fraction of the trials.
inline VerifyReport run_verification(const VerifyOptions& opt) {
  VerifyReport rep;
  if (opt.trials == 0) return rep;
  for (std::size_t t = 0; t < opt.trials; ++t) {
    detail::check_bound(rep, opt, t);
    detail::check_kl_additivity(rep, opt, t);
  }
  const std::size_t fp = std::max<std::size_t>(1, opt.trials / 4);
  for (std::size_t t = 0; t < fp; ++t) detail::check_fixed_point(rep, opt, t);
  const std::size_t gr = std::max<std::size_t>(1, opt.trials / 10);
  for (std::size_t t = 0; t < gr; ++t) detail::check_gradients(rep, opt, t);
  detail::check_adaptive(rep);
  const std::size_t ms = std::max<std::size_t>(1, opt.trials / 40);
  for (std::size_t t = 0; t < ms; ++t) detail::check_monotonic_stepper(rep, opt, t);
  return rep;
}

inline constexpr const char* kVerifyHeader = "seed,S,N,lhs,rhs,margin,holds";
inline constexpr const char* kVerifyChecksHeader = "check,trial,seed,value,threshold,passed";

inline void write_verify_csv(std::ostream& os, const VerifyReport& rep) {
  os << kVerifyHeader << '\n';
  for (const auto& r : rep.bound_rows)
    os << r.seed << ',' << r.n_states << ',' << r.n_agents << ',' << format_double(r.lhs) << ','
       << format_double(r.rhs) << ',' << format_double(r.lhs - r.rhs) << ',' << (r.holds ? "true" : "false") << '\n';
}

inline void write_checks_csv(std::ostream& os, const VerifyReport& rep) {
  os << kVerifyChecksHeader << '\n';
  for (const auto& c : rep.checks)
    os << c.check << ',' << c.trial << ',' << c.seed << ',' << format_double(c.value) << ','
       << format_double(c.threshold) << ',' << (c.passed ? "true" : "false") << '\n';
}

}  // namespace depo::harness
