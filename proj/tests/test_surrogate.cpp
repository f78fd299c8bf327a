#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "depo/oracle.hpp"
#include "depo/surrogate.hpp"
#include "support.hpp"

using namespace depo;

namespace {

// L^joint by enumeration over decoded joint actions.
double ref_l_joint(const StochasticGame& g, const ProductPolicy& old_p, const ProductPolicy& new_p) {
  const auto v = ref::values(g, old_p);
  const auto q = ref::q_values(g, v);
  const auto rho = ref::occupancy(g, old_p);
  const std::size_t J = g.n_joint();
  double l = 0.0;
  for (std::size_t s = 0; s < g.n_states; ++s)
    for (std::size_t a = 0; a < J; ++a) l += rho[s] * ref::joint_prob(g, new_p, s, a) * (q[s * J + a] - v[s]);
  return l;
}

ProductPolicy perturb(const ProductPolicy& p, double scale, std::mt19937_64& rng) {
  ProductPolicy out = p;
  std::normal_distribution<double> nd(0.0, scale);
  for (std::size_t i = 0; i < p.n_agents(); ++i)
    for (double& x : out.table(i)) x += nd(rng);
  return out;
}

}  // namespace

TEST(SurrogateJoint, ZeroAtOldPolicy) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 20; ++t) {
    const auto g = ref::random_game(rng);
    const auto p = ref::random_policy(g, 1.0, rng);
    EXPECT_NEAR(surrogate_joint(g, evaluate_joint_policy(g, p), p), 0.0, 1e-10);
  }
}

TEST(SurrogateJoint, SingleStateHandExample) {
  const auto g = ref::single_state({2}, {1.0, 0.0}, 0.9);
  const ProductPolicy old_p(1, {2});
  const auto e = evaluate_joint_policy(g, old_p);
  EXPECT_NEAR(e.adv_joint[0], 0.5, 1e-12);
  EXPECT_NEAR(e.adv_joint[1], -0.5, 1e-12);
  EXPECT_NEAR(e.rho[0], 10.0, 1e-12);
  const auto point = ProductPolicy::from_logits(1, {2}, {{40.0, 0.0}});
  EXPECT_NEAR(surrogate_joint(g, e, point), 5.0, 1e-10);
}

TEST(SurrogateJoint, MatchesEnumeration) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 30; ++t) {
    const auto g = ref::random_game(rng);
    const auto p = ref::random_policy(g, 1.0, rng);
    const auto q = perturb(p, 1.0, rng);
    EXPECT_NEAR(surrogate_joint(g, evaluate_joint_policy(g, p), q), ref_l_joint(g, p, q), 1e-9);
  }
}

// States follow pi_old (geometric termination at rate 1-gamma); at each
// visited state an action is drawn from pi_new and A_old is accumulated.
TEST(SurrogateJoint, MonteCarloOnSeed3Game) {
  const auto g = ref::seed3_game();
  std::mt19937_64 prng(3);
  const auto old_p = ref::random_policy(g, 1.0, prng);
  const auto new_p = ref::random_policy(g, 1.0, prng);
  const auto e = evaluate_joint_policy(g, old_p);
  const auto told = ref::joint_table(g, old_p), tnew = ref::joint_table(g, new_p);
  const std::size_t J = g.n_joint();
  Rng rng(99);
  const int E = 100000;
  double sum = 0.0, sq = 0.0;
  for (int k = 0; k < E; ++k) {
    std::size_t s = sample_categorical(g.initial_dist, rng);
    double x = 0.0;
    for (;;) {
      const std::size_t a_new = sample_categorical(std::span<const double>(tnew).subspan(s * J, J), rng);
      x += e.adv_joint[s * J + a_new];
      const std::size_t a_old = sample_categorical(std::span<const double>(told).subspan(s * J, J), rng);
      s = step(g, s, a_old, rng).next_state;
      if (uniform01(rng) >= g.gamma) break;
    }
    sum += x;
    sq += x * x;
  }
  const double mean = sum / E, se = std::sqrt((sq / E - mean * mean) / E);
  EXPECT_NEAR(surrogate_joint(g, e, new_p), mean, 3.0 * se);
}

TEST(SurrogateIndividual, ZeroAtOldAndSingleAgentConsistency) {
  const auto g = ref::seed3_game();
  std::mt19937_64 rng(4);
  for (int t = 0; t < 20; ++t) {
    const auto old_p = ref::random_policy(g, 1.0, rng);
    const auto e = evaluate_joint_policy(g, old_p);
    for (std::size_t i = 0; i < 2; ++i) {
      EXPECT_NEAR(surrogate_individual(g, old_p, e, i, old_p), 0.0, 1e-10);
      ProductPolicy moved = old_p;
      std::normal_distribution<double> nd(0.0, 1.0);
      for (double& x : moved.table(i)) x += nd(rng);
      EXPECT_NEAR(surrogate_individual(g, old_p, e, i, moved), surrogate_joint(g, e, moved), 1e-10);
    }
  }
}

TEST(SurrogateIndividual, SingleChangedAgentOnRandomGames) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 30; ++t) {
    const auto g = ref::random_game(rng);
    const auto old_p = ref::random_policy(g, 1.0, rng);
    const auto e = evaluate_joint_policy(g, old_p);
    const std::size_t i = rng() % g.n_agents();
    ProductPolicy moved = old_p;
    std::normal_distribution<double> nd(0.0, 2.0);
    for (double& x : moved.table(i)) x += nd(rng);
    EXPECT_NEAR(surrogate_individual(g, old_p, e, i, moved), surrogate_joint(g, e, moved), 1e-10);
  }
}

TEST(SurrogateIndividual, SingleAgentIdenticalToJoint) {
  const auto g = ref::seed3_single();
  std::mt19937_64 rng(6);
  const auto old_p = ref::random_policy(g, 1.0, rng), new_p = ref::random_policy(g, 1.0, rng);
  const auto e = evaluate_joint_policy(g, old_p);
  EXPECT_NEAR(surrogate_individual(g, old_p, e, 0, new_p), surrogate_joint(g, e, new_p), 1e-12);
}

TEST(KlTerms, IdenticalPoliciesAreZero) {
  const auto g = ref::seed3_game();
  std::mt19937_64 rng(7);
  const auto p = ref::random_policy(g, 1.0, rng);
  const auto e = evaluate_joint_policy(g, p);
  for (std::size_t i = 0; i < 2; ++i) {
    for (double k : kl_per_state(p, p, i)) EXPECT_EQ(k, 0.0);
    EXPECT_EQ(kl_max(p, p, i), 0.0);
    EXPECT_EQ(kl_avg(e, p, p, i), 0.0);
  }
}

TEST(KlTerms, WeightedExample) {
  const std::vector<double> per_state{0.1, 0.3}, w{1.0, 3.0};
  EXPECT_NEAR(kl_max(per_state), 0.3, 1e-15);
  EXPECT_NEAR(kl_avg(w, per_state), 0.25, 1e-15);
}

TEST(KlTerms, AverageUsesOccupancy) {
  const auto g = ref::seed3_game();
  std::mt19937_64 rng(8);
  const auto p = ref::random_policy(g, 1.0, rng), q = ref::random_policy(g, 1.0, rng);
  const auto e = evaluate_joint_policy(g, p);
  const auto rho = ref::occupancy(g, p);
  for (std::size_t i = 0; i < 2; ++i) {
    double num = 0.0, den = 0.0;
    for (std::size_t s = 0; s < 2; ++s) {
      num += rho[s] * ref::kl(p.probs(i, s), q.probs(i, s));
      den += rho[s];
    }
    EXPECT_NEAR(kl_avg(e, p, q, i), num / den, 1e-10);
  }
}

TEST(KlTerms, JointKlIsSumOfAgentKls) {
  std::mt19937_64 rng(9);
  for (int t = 0; t < 100; ++t) {
    const auto g = ref::random_game(rng, 4, 3, 3);
    const auto p = ref::random_policy(g, 1.5, rng), q = ref::random_policy(g, 1.5, rng);
    for (std::size_t s = 0; s < g.n_states; ++s) {
      std::vector<double> jp(g.n_joint()), jq(g.n_joint());
      for (std::size_t a = 0; a < g.n_joint(); ++a) {
        jp[a] = ref::joint_prob(g, p, s, a);
        jq[a] = ref::joint_prob(g, q, s, a);
      }
      double sum = 0.0;
      for (std::size_t i = 0; i < g.n_agents(); ++i) sum += kl_per_state(p, q, i)[s];
      EXPECT_NEAR(ref::kl(jp, jq), sum, 1e-12);
      EXPECT_NEAR(joint_kl_at_state(p, q, s), sum, 1e-12);
    }
  }
}

TEST(Constants, Formulas) {
  const auto c = constants_from_max_advantage(1.0, 0.9);
  EXPECT_NEAR(c.m_tilde, 20.0, 1e-12);
  EXPECT_NEAR(c.c_const, 360.0, 1e-9);
  const auto z = constants_from_max_advantage(1.0, 0.0);
  EXPECT_NEAR(z.m_tilde, 2.0, 1e-15);
  EXPECT_EQ(z.c_const, 0.0);
}

TEST(Constants, DegenerateZeroAdvantage) {
  // every action pays the same, so every advantage is zero
  const auto g = generate_game(1, 3, 2, {2, 2}, 0.9, 0.3, 0.5, 0.5);
  std::mt19937_64 rng(10);
  const auto p = ref::random_policy(g, 1.0, rng);
  const auto c = constants(evaluate_joint_policy(g, p), g.gamma);
  EXPECT_NEAR(c.m_abs, 0.0, 1e-12);
  EXPECT_NEAR(c.m_tilde, 0.0, 1e-11);
  EXPECT_NEAR(c.c_const, 0.0, 1e-9);
  const auto r = verify_bound(g, p, p);
  EXPECT_TRUE(r.holds);
  EXPECT_NEAR(r.lhs, 0.0, 1e-12);
}

TEST(VerifyBound, EqualPoliciesGiveEquality) {
  const auto g = ref::seed3_game();
  std::mt19937_64 rng(11);
  const auto p = ref::random_policy(g, 1.0, rng);
  const auto r = verify_bound(g, p, p);
  EXPECT_NEAR(r.lhs, 0.0, 1e-12);
  EXPECT_NEAR(r.rhs, 0.0, 1e-10);
  EXPECT_TRUE(r.holds);
  EXPECT_TRUE(r.proof_steps_hold);
}

TEST(VerifyBound, ReportMatchesReferenceTerms) {
  std::mt19937_64 rng(12);
  for (int t = 0; t < 20; ++t) {
    const auto g = ref::random_game(rng);
    const auto p = ref::random_policy(g, 1.0, rng), q = perturb(p, 0.5, rng);
    const auto r = verify_bound(g, p, q);
    EXPECT_NEAR(r.j_old, ref::ret(g, p), 1e-10);
    EXPECT_NEAR(r.j_new, ref::ret(g, q), 1e-10);
    EXPECT_NEAR(r.l_joint, ref_l_joint(g, p, q), 1e-9);
    const auto v = ref::values(g, p);
    const auto qq = ref::q_values(g, v);
    double m = 0.0;
    for (std::size_t s = 0; s < g.n_states; ++s)
      for (std::size_t a = 0; a < g.n_joint(); ++a) m = std::max(m, std::abs(qq[s * g.n_joint() + a] - v[s]));
    EXPECT_NEAR(r.m_abs, m, 1e-10);
    EXPECT_NEAR(r.m_tilde, 2 * m / (1 - g.gamma), 1e-8);
    double sum_l = 0.0, sum_sqrt = 0.0, sum_kl = 0.0;
    for (std::size_t i = 0; i < g.n_agents(); ++i) {
      sum_l += r.l_individual[i];
      double mx = 0.0;
      for (std::size_t s = 0; s < g.n_states; ++s) mx = std::max(mx, ref::kl(p.probs(i, s), q.probs(i, s)));
      EXPECT_NEAR(r.kl_max_per_agent[i], mx, 1e-12);
      sum_sqrt += std::sqrt(mx);
      sum_kl += mx;
    }
    EXPECT_NEAR(r.rhs, sum_l / g.n_agents() - r.m_tilde * sum_sqrt - r.c_const * sum_kl, 1e-9);
  }
}

TEST(VerifyBound, HoldsOnRandomTriples) {
  std::mt19937_64 rng(13);
  int holds = 0, proof = 0, trpo = 0;
  for (int t = 0; t < 200; ++t) {
    const auto g = ref::random_game(rng);
    const auto p = ref::random_policy(g, 1.5, rng);
    const auto q = perturb(p, std::pow(10.0, -3.0 + 3.5 * (rng() % 1000) / 1000.0), rng);
    const auto r = verify_bound(g, p, q);
    holds += r.holds;
    proof += r.proof_steps_hold;
    trpo += r.trpo_holds;
  }
  EXPECT_EQ(holds, 200);
  EXPECT_EQ(proof, 200);
  EXPECT_EQ(trpo, 200);
}

TEST(VerifyBound, AdversarialFarApartPolicies) {
  std::mt19937_64 rng(14);
  for (int t = 0; t < 20; ++t) {
    const auto g = ref::random_game(rng, 5, 3, 3);
    bool multi = false;
    for (auto a : g.action_counts) multi = multi || a > 1;
    if (!multi) continue;
    ProductPolicy p(g.n_states, g.action_counts), q(g.n_states, g.action_counts);
    for (std::size_t i = 0; i < g.n_agents(); ++i)
      for (std::size_t s = 0; s < g.n_states; ++s) {
        const std::size_t na = g.action_counts[i];
        p.table(i)[s * na] = 12.0;
        q.table(i)[s * na + na - 1] = 12.0;
      }
    const auto r = verify_bound(g, p, q);
    EXPECT_TRUE(r.holds);
    EXPECT_TRUE(r.proof_steps_hold);
    if (r.m_abs > 1e-3) {
      EXPECT_LT(r.rhs, -1.0);
    }
  }
}

TEST(VerifyBound, SignFlipMutationIsCaught) {
  std::mt19937_64 rng(15);
  int violations = 0;
  for (int t = 0; t < 100; ++t) {
    const auto g = ref::random_game(rng);
    const auto p = ref::random_policy(g, 1.0, rng);
    const auto q = perturb(p, 1.0, rng);
    violations += !verify_bound(g, p, q, {1e-9, true}).holds;
  }
  EXPECT_GT(violations, 0);
}

// With the exact constants the decentralized surrogate is nonpositive:
// (1/N) L^i <= (1/N) M sqrt(2 KLmax)/(1-gamma) < M~ sqrt(KLmax).
TEST(DecentralizedSurrogate, NonPositiveEverywhere) {
  std::mt19937_64 rng(16);
  for (int t = 0; t < 50; ++t) {
    const auto g = ref::random_game(rng);
    const auto p = ref::random_policy(g, 1.0, rng);
    const auto e = evaluate_joint_policy(g, p);
    const auto c = constants(e, g.gamma);
    for (std::size_t i = 0; i < g.n_agents(); ++i) {
      DecentralizedSurrogate f(e.rho, marginal_advantage(g, p, i, e), p.table(i), g.action_counts[i], g.n_agents(), c);
      EXPECT_NEAR(f.value(p.table(i)), 0.0, 1e-12);
      for (int k = 0; k < 20; ++k) {
        auto x = p.table(i);
        std::normal_distribution<double> nd(0.0, std::pow(10.0, -4.0 + 5.0 * k / 20.0));
        for (double& v : x) v += nd(rng);
        EXPECT_LE(f.value(x), 1e-12);
      }
    }
  }
}

TEST(DecentralizedSurrogate, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(17);
  int checked = 0;
  for (int t = 0; t < 40 && checked < 20; ++t) {
    const auto g = ref::random_game(rng, 4, 2, 3);
    if (g.action_counts[0] < 2) continue;
    const auto p = ref::random_policy(g, 1.0, rng);
    const auto e = evaluate_joint_policy(g, p);
    DecentralizedSurrogate f(e.rho, marginal_advantage(g, p, 0, e), p.table(0), g.action_counts[0], g.n_agents(),
                             constants(e, g.gamma));
    auto x = p.table(0);
    std::normal_distribution<double> nd(0.0, 0.5);
    for (double& v : x) v += nd(rng);
    // keep the max-KL state unique so the objective is smooth at x
    std::vector<double> kls;
    const std::size_t na = g.action_counts[0];
    for (std::size_t s = 0; s < g.n_states; ++s)
      kls.push_back(softmax_kl(std::span<const double>(p.table(0)).subspan(s * na, na),
                               std::span<const double>(x).subspan(s * na, na)));
    std::sort(kls.begin(), kls.end());
    if (kls.size() > 1 && kls.back() - kls[kls.size() - 2] < 1e-3) continue;
    const auto grad = f.gradient(x, 0.0);
    const auto fd = ref::fd_gradient([&](std::span<const double> y) { return f.value(y); }, x);
    EXPECT_LE(ref::rel_error(grad, fd), 1e-5);
    ++checked;
  }
  EXPECT_GE(checked, 10);
}

TEST(ExactStep, ZeroInnerStepsIsIdentity) {
  const auto g = ref::seed3_game();
  std::mt19937_64 rng(18);
  const auto p = ref::random_policy(g, 1.0, rng);
  EXPECT_TRUE(exact_improvement_step(g, p, 0, 0.05) == p);
}

TEST(ExactStep, AlreadyOptimalSingleState) {
  const auto g = ref::single_state({2, 2}, {0.4, 0.4, 0.4, 0.4}, 0.9);
  const ProductPolicy p(1, {2, 2});
  const auto next = exact_improvement_step(g, p);
  EXPECT_NEAR(exact_return(g, next), exact_return(g, p), 1e-10);
}

TEST(ExactStep, MonotoneOnSeed3Game) {
  const auto g = ref::seed3_game();
  const double j_star = joint_value_iteration(g, 1e-12).j_star;
  ProductPolicy p(g.n_states, g.action_counts);
  double prev = exact_return(g, p);
  for (int k = 0; k < 20; ++k) {
    p = exact_improvement_step(g, p);
    const double j = exact_return(g, p);
    EXPECT_GE(j, prev - 1e-10);
    EXPECT_LE(j, j_star + 1e-9);
    prev = j;
  }
}

TEST(ExactStep, FixedPointIsTheStartingPolicy) {
  // follows from the surrogate being nonpositive with a unique zero at theta_old
  std::mt19937_64 rng(19);
  for (int t = 0; t < 10; ++t) {
    const auto g = ref::random_game(rng, 4, 2, 3);
    const auto p = ref::random_policy(g, 1.0, rng);
    const auto next = exact_improvement_step(g, p, 50, 0.5);
    // KL is resolved to ~1e-16, so sqrt(KL) only to ~1e-8: steps below that
    // floor can slip through the acceptance test
    for (std::size_t i = 0; i < g.n_agents(); ++i)
      for (std::size_t k = 0; k < p.table(i).size(); ++k) EXPECT_NEAR(next.table(i)[k], p.table(i)[k], 1e-6);
    EXPECT_NEAR(exact_return(g, next), exact_return(g, p), 1e-6);
  }
}

TEST(ExactStep, InvalidLearningRate) {
  const auto g = ref::seed3_game();
  EXPECT_THROW(exact_improvement_step(g, ProductPolicy(2, {2, 2}), 5, 0.0), ConfigError);
}
