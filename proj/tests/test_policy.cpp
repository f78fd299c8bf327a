#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "depo/policy.hpp"
#include "support.hpp"

using namespace depo;

TEST(Softmax, NormalizedAndPositive) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd(0.0, 5.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> x(1 + trial % 7), p(x.size());
    for (double& v : x) v = nd(rng);
    softmax(x, p);
    double sum = 0.0;
    for (double v : p) {
      EXPECT_GT(v, 0.0);
      sum += v;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
    std::vector<double> lp(x.size());
    log_softmax(x, lp);
    for (std::size_t k = 0; k < x.size(); ++k) EXPECT_NEAR(std::exp(lp[k]), p[k], 1e-14);
  }
}

TEST(Softmax, ShiftInvariantAndLargeLogits) {
  std::vector<double> a{1.0, 2.0, 3.0}, b{1001.0, 1002.0, 1003.0}, pa(3), pb(3);
  softmax(a, pa);
  softmax(b, pb);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(pa[k], pb[k], 1e-15);
}

TEST(Kl, MatchesDirectFormula) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> nd(0.0, 1.5);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> x(4), y(4), p(4), q(4);
    for (int k = 0; k < 4; ++k) {
      x[k] = nd(rng);
      y[k] = nd(rng);
    }
    softmax(x, p);
    softmax(y, q);
    EXPECT_NEAR(softmax_kl(x, y), ref::kl(p, q), 1e-13);
    EXPECT_NEAR(categorical_kl(p, q), ref::kl(p, q), 1e-13);
    EXPECT_GE(softmax_kl(x, y), 0.0);
  }
  std::vector<double> x{0.3, -0.2};
  EXPECT_EQ(softmax_kl(x, x), 0.0);
}

TEST(Kl, ZeroSupportRejected) {
  const std::vector<double> p{0.5, 0.5}, q{1.0, 0.0};
  EXPECT_THROW(categorical_kl(p, q), std::domain_error);
  EXPECT_NO_THROW(categorical_kl(q, p));
}

TEST(ProductPolicy, UniformAndJointOrder) {
  const ProductPolicy u(3, {2, 3});
  for (std::size_t s = 0; s < 3; ++s) {
    EXPECT_NEAR(u.probs(0, s)[1], 0.5, 1e-15);
    EXPECT_NEAR(u.probs(1, s)[2], 1.0 / 3.0, 1e-15);
  }
  const auto g = generate_game(1, 3, 2, {2, 3}, 0.9, 0.2, 0, 1);
  std::mt19937_64 rng(3);
  const auto pi = ref::random_policy(g, 2.0, rng);
  for (std::size_t s = 0; s < 3; ++s) {
    const auto joint = pi.joint_probs(s);
    double sum = 0.0;
    for (std::size_t a = 0; a < g.n_joint(); ++a) {
      EXPECT_NEAR(joint[a], ref::joint_prob(g, pi, s, a), 1e-15);
      sum += joint[a];
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(ProductPolicy, TablesAreDisjoint) {
  ProductPolicy p(2, {2, 2});
  const auto before = p.prob_table(1);
  p.table(0)[0] = 5.0;
  EXPECT_EQ(p.prob_table(1), before);
  EXPECT_NE(p.prob_table(0)[0], 0.5);
  EXPECT_NE(&p.table(0), &p.table(1));
}

TEST(ProductPolicy, FromLogitsValidates) {
  EXPECT_THROW(ProductPolicy::from_logits(2, {2}, {{0.0, 0.0, 0.0}}), ConfigError);
  EXPECT_THROW(ProductPolicy::from_logits(1, {2}, {{0.0, NAN}}), ConfigError);
  EXPECT_THROW(ProductPolicy::from_logits(1, {2}, {}), ConfigError);
  const auto p = ProductPolicy::from_logits(1, {2}, {{0.0, std::log(3.0)}});
  EXPECT_NEAR(p.probs(0, 0)[1], 0.75, 1e-15);
}

TEST(SampleCategorical, Frequencies) {
  Rng rng(4);
  const std::vector<double> p{0.1, 0.0, 0.6, 0.3};
  std::vector<int> counts(4, 0);
  const int n = 100000;
  for (int k = 0; k < n; ++k) ++counts[sample_categorical(p, rng)];
  EXPECT_EQ(counts[1], 0);
  for (int k = 0; k < 4; ++k) EXPECT_NEAR(static_cast<double>(counts[k]) / n, p[k], 0.01);
}

TEST(Seeds, DeriveSeedSpreads) {
  EXPECT_NE(derive_seed(1, 0), derive_seed(1, 1));
  EXPECT_NE(derive_seed(1, 0), derive_seed(2, 0));
  EXPECT_EQ(derive_seed(7, 3), derive_seed(7, 3));
  Rng rng(0);
  for (int k = 0; k < 1000; ++k) {
    const double u = uniform01(rng);
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
}

TEST(FormatDouble, ShortestRoundTrip) {
  for (double x : {0.1, 1.0 / 3.0, 1e-300, -2.5, 99.99270833}) {
    const auto s = format_double(x);
    EXPECT_EQ(std::stod(s), x) << s;
  }
  EXPECT_EQ(format_double(0.5), "0.5");
}
