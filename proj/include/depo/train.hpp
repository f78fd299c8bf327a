#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "depo/adaptive.hpp"
#include "depo/core.hpp"
#include "depo/critic.hpp"
#include "depo/env.hpp"
#include "depo/iql.hpp"
#include "depo/optimizer.hpp"
#include "depo/oracle.hpp"
#include "depo/policy.hpp"
#include "depo/policy_update.hpp"

namespace depo {

enum class Algo { dpo, ippo, ippo_kl, iql };

inline Algo parse_algo(const std::string& s) {
  if (s == "dpo") return Algo::dpo;
  if (s == "ippo") return Algo::ippo;
  if (s == "ippo_kl") return Algo::ippo_kl;
  if (s == "iql") return Algo::iql;
  throw ConfigError("algo", "expected one of dpo|ippo|ippo_kl|iql, got '" + s + "'");
}

inline const char* to_string(Algo a) {
  switch (a) {
    case Algo::dpo: return "dpo";
    case Algo::ippo: return "ippo";
    case Algo::ippo_kl: return "ippo_kl";
    case Algo::iql: return "iql";
  }
  return "?";
}

inline bool uses_penalty(Algo a) { return a == Algo::dpo || a == Algo::ippo_kl; }

struct TrainConfig {
  Algo algo = Algo::dpo;
  std::size_t iterations = 300;
  std::size_t horizon = 100;
  std::size_t batch_episodes = 32;
  std::size_t epochs = 15;
  OptimizerKind optimizer = OptimizerKind::adam;
  double actor_lr = 0.05;
  double critic_lr = 0.5;
  AdaptiveRule adaptive{};
  PenaltyCoefficients beta_init{};
  double clip_eps = 0.2;
  bool exact_advantage = false;
  CriticTarget critic_target = CriticTarget::td;
  bool bootstrap_truncation = true;
  bool normalize_advantages = false;
  double iql_lr = 0.1;
  double iql_eps_start = 1.0;
  double iql_eps_end = 0.05;
  /// Exact J is computed every `eval_every` iterations and at the last one;
  /// 0 means only at the last iteration.
  std::size_t eval_every = 10;

  void validate() const {
    if (horizon == 0) throw ConfigError("horizon", "must be at least 1");
    if (batch_episodes == 0) throw ConfigError("batch_episodes", "must be at least 1");
    if (!(actor_lr >= 0.0)) throw ConfigError("actor_lr", "must be non-negative");
    if (!(critic_lr >= 0.0)) throw ConfigError("critic_lr", "must be non-negative");
    adaptive.validate();
    if (!(beta_init.beta1 >= 0.0)) throw ConfigError("beta1_init", "must be non-negative");
    if (!(beta_init.beta2 >= 0.0)) throw ConfigError("beta2_init", "must be non-negative");
    if (!(clip_eps > 0.0 && clip_eps < 1.0)) throw ConfigError("clip_eps", "must lie in (0, 1)");
    if (!(iql_lr >= 0.0 && iql_lr <= 1.0)) throw ConfigError("iql_lr", "must lie in [0, 1]");
    if (!(iql_eps_start >= 0.0 && iql_eps_start <= 1.0)) throw ConfigError("iql_eps_start", "must lie in [0, 1]");
    if (!(iql_eps_end >= 0.0 && iql_eps_end <= 1.0)) throw ConfigError("iql_eps_end", "must lie in [0, 1]");
  }
};

struct CurveRow {
  std::size_t iteration = 0;
  std::size_t env_steps = 0;
  double mean_return_undiscounted = 0.0;
  double discounted_j_estimate = 0.0;
  std::optional<double> exact_j;
  std::vector<double> kl;
  std::vector<double> beta1, beta2;
};

struct LearningCurve {
  Algo algo = Algo::dpo;
  std::uint64_t seed = 0;
  std::size_t n_agents = 0;
  double initial_exact_j = 0.0;
  std::vector<CurveRow> rows;
  ProductPolicy final_policy;
};

/// Epsilon for IQL at a given iteration: linear from start to end over the
/// first half of training, constant afterwards.
inline double iql_epsilon(const TrainConfig& cfg, std::size_t iteration) {
  const double half = 0.5 * static_cast<double>(cfg.iterations);
  if (half <= 0.0) return cfg.iql_eps_end;
  const double frac = std::min(1.0, static_cast<double>(iteration) / half);
  return cfg.iql_eps_start + frac * (cfg.iql_eps_end - cfg.iql_eps_start);
}

namespace detail {

inline AgentSamples project(const TransitionBatch& batch, std::size_t agent, std::size_t n_states,
                            std::size_t n_actions, std::vector<double> advantages) {
  AgentSamples out;
  out.n_states = n_states;
  out.n_actions = n_actions;
  out.states = batch.states;
  out.actions = batch.agent_actions(agent);
  out.advantages = std::move(advantages);
  return out;
}

inline void normalize(std::vector<double>& x) {
  if (x.size() < 2) return;
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(x.size() - 1));
  for (double& v : x) v = (v - mean) / (sd + 1e-8);
}

}  // namespace detail

/// Fully decentralized training. Each iteration collects batch_episodes x
/// horizon joint transitions with the current product policy, then every agent
/// updates its own critic and policy from its projection of the batch.
/// Deterministic in (game, cfg, seed).
inline LearningCurve train(const StochasticGame& game, const TrainConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const std::size_t N = game.n_agents(), S = game.n_states;
  LearningCurve curve;
  curve.algo = cfg.algo;
  curve.seed = seed;
  curve.n_agents = N;

  ProductPolicy policy(S, game.action_counts);
  std::vector<CriticTable> critics(N, CriticTable(S));
  std::vector<Optimizer> actor_opt, critic_opt;
  std::vector<QTable> qs;
  for (std::size_t i = 0; i < N; ++i) {
    actor_opt.emplace_back(cfg.optimizer, cfg.actor_lr, S * game.action_counts[i]);
    critic_opt.emplace_back(cfg.optimizer, cfg.critic_lr, S);
    qs.emplace_back(S, game.action_counts[i], cfg.iql_eps_start, cfg.iql_lr);
  }
  std::vector<PenaltyCoefficients> beta(N, cfg.beta_init);

  if (cfg.algo == Algo::iql)
    for (std::size_t i = 0; i < N; ++i) policy.table(i) = epsilon_greedy_logits(qs[i], iql_epsilon(cfg, 0));
  curve.initial_exact_j = exact_return(game, policy);

  const std::size_t steps_per_iter = cfg.batch_episodes * cfg.horizon;
  for (std::size_t it = 1; it <= cfg.iterations; ++it) {
    const TransitionBatch batch = rollout(game, policy, cfg.horizon, cfg.batch_episodes, derive_seed(seed, it));

    CurveRow row;
    row.iteration = it;
    row.env_steps = it * steps_per_iter;
    double disc = 0.0, total = 0.0, discount = 1.0;
    for (std::size_t k = 0; k < batch.size(); ++k) {
      total += batch.rewards[k];
      disc += discount * batch.rewards[k];
      discount = batch.terminal[k] ? 1.0 : discount * game.gamma;
    }
    row.mean_return_undiscounted = total / static_cast<double>(cfg.batch_episodes);
    row.discounted_j_estimate = disc / static_cast<double>(cfg.batch_episodes);
    row.kl.assign(N, 0.0);

    const ProductPolicy old_policy = policy;
    std::optional<ExactEvalResult> old_eval;
    if (cfg.exact_advantage && cfg.algo != Algo::iql) old_eval = evaluate_joint_policy(game, old_policy);

    for (std::size_t i = 0; i < N; ++i) {
      const std::size_t na = game.action_counts[i];
      if (cfg.algo == Algo::iql) {
        qs[i].epsilon = iql_epsilon(cfg, it);
        for (std::size_t k = 0; k < batch.size(); ++k)
          iql_update(qs[i], batch.states[k], batch.action(k, i), batch.rewards[k], batch.next_states[k], game.gamma);
        policy.table(i) = epsilon_greedy_logits(qs[i], iql_epsilon(cfg, it));
        double d = 0.0;
        for (std::size_t k = 0; k < batch.size(); ++k)
          d += softmax_kl(old_policy.logits(i, batch.states[k]), policy.logits(i, batch.states[k]));
        row.kl[i] = d / static_cast<double>(batch.size());
        continue;
      }

      std::vector<double> adv;
      if (old_eval) {
        const auto table = marginal_advantage(game, old_policy, i, *old_eval);
        adv.resize(batch.size());
        for (std::size_t k = 0; k < batch.size(); ++k) adv[k] = table[batch.states[k] * na + batch.action(k, i)];
      } else {
        adv = advantage_estimate(batch, critics[i], game.gamma, cfg.bootstrap_truncation);
        critic_update(critics[i], batch, game.gamma, critic_opt[i], cfg.epochs, cfg.critic_target,
                      cfg.bootstrap_truncation);
      }
      if (cfg.normalize_advantages) detail::normalize(adv);
      const AgentSamples samples = detail::project(batch, i, S, na, std::move(adv));

      PolicyUpdateResult res;
      switch (cfg.algo) {
        case Algo::dpo:
          res = dpo_policy_update(old_policy.table(i), samples, beta[i], N, actor_opt[i], cfg.epochs);
          break;
        case Algo::ippo_kl:
          res = ippo_kl_policy_update(old_policy.table(i), samples, beta[i], N, actor_opt[i], cfg.epochs);
          break;
        default:
          res = ippo_policy_update(old_policy.table(i), samples, cfg.clip_eps, actor_opt[i], cfg.epochs);
          break;
      }
      policy.table(i) = std::move(res.logits);
      row.kl[i] = res.realized_kl;
      if (uses_penalty(cfg.algo)) beta[i] = adapt_coefficients(beta[i], res.realized_kl, cfg.adaptive);
    }

    if (uses_penalty(cfg.algo)) {
      for (const auto& b : beta) {
        row.beta1.push_back(b.beta1);
        row.beta2.push_back(b.beta2);
      }
    }
    const bool last = it == cfg.iterations;
    if (last || (cfg.eval_every > 0 && it % cfg.eval_every == 0)) {
      if (cfg.algo == Algo::iql) {
        ProductPolicy greedy(S, game.action_counts);
        for (std::size_t i = 0; i < N; ++i) greedy.table(i) = greedy_logits(qs[i]);
        row.exact_j = exact_return(game, greedy);
      } else {
        row.exact_j = exact_return(game, policy);
      }
    }
    curve.rows.push_back(std::move(row));
  }
  if (cfg.algo == Algo::iql) {
    ProductPolicy greedy(S, game.action_counts);
    for (std::size_t i = 0; i < N; ++i) greedy.table(i) = greedy_logits(qs[i]);
    curve.final_policy = std::move(greedy);
  } else {
    curve.final_policy = std::move(policy);
  }
  return curve;
}

}  // namespace depo
