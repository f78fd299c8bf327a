#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "depo/core.hpp"
#include "depo/policy.hpp"

namespace depo {

/// Bijection between action tuples and joint-action indices. Mixed radix
/// with agent 0 most significant: index = sum_i a_i * prod_{j>i} A_j.
class JointActionCodec {
 public:
  JointActionCodec() = default;

  explicit JointActionCodec(std::vector<std::size_t> action_counts)
      : counts_(std::move(action_counts)), stride_(counts_.size()) {
    std::size_t s = 1;
    for (std::size_t i = counts_.size(); i-- > 0;) {
      if (counts_[i] == 0) throw ConfigError("action_counts", "every agent needs at least one action");
      stride_[i] = s;
      s *= counts_[i];
    }
    size_ = s;
  }

  std::size_t size() const noexcept { return size_; }
  std::size_t n_agents() const noexcept { return counts_.size(); }
  const std::vector<std::size_t>& action_counts() const noexcept { return counts_; }
  std::size_t stride(std::size_t agent) const { return stride_.at(agent); }

  std::size_t encode(std::span<const std::size_t> actions) const {
    if (actions.size() != counts_.size())
      throw BoundsError("encode: expected " + std::to_string(counts_.size()) + " actions");
    std::size_t idx = 0;
    for (std::size_t i = 0; i < counts_.size(); ++i) {
      if (actions[i] >= counts_[i])
        throw BoundsError("encode: action " + std::to_string(actions[i]) + " of agent " +
                          std::to_string(i) + " out of range");
      idx += actions[i] * stride_[i];
    }
    return idx;
  }

  std::vector<std::size_t> decode(std::size_t index) const {
    if (index >= size_) throw BoundsError("decode: joint index " + std::to_string(index) + " out of range");
    std::vector<std::size_t> out(counts_.size());
    for (std::size_t i = 0; i < counts_.size(); ++i) {
      out[i] = index / stride_[i];
      index %= stride_[i];
    }
    return out;
  }

  /// Action of one agent inside a joint index.
  std::size_t component(std::size_t index, std::size_t agent) const {
    return (index / stride_[agent]) % counts_[agent];
  }

 private:
  std::vector<std::size_t> counts_;
  std::vector<std::size_t> stride_;
  std::size_t size_ = 0;
};

/// Parameters of the random game generator; stored alongside generated games.
struct GeneratorParams {
  std::uint64_t seed = 0;
  std::size_t n_states = 100;
  std::vector<std::size_t> action_counts = std::vector<std::size_t>(6, 5);
  double gamma = 0.99;
  double transition_alpha = 0.2;
  double reward_low = 0.0;
  double reward_high = 1.0;

  friend bool operator==(const GeneratorParams&, const GeneratorParams&) = default;
};

/// Dense tabular cooperative stochastic game with a shared reward.
/// transition is laid out [state][joint_action][next_state], reward [state][joint_action].
struct StochasticGame {
  std::size_t n_states = 0;
  std::vector<std::size_t> action_counts;
  std::vector<double> transition;
  std::vector<double> reward;
  double gamma = 0.0;
  std::vector<double> initial_dist;
  std::optional<GeneratorParams> generator;

  std::size_t n_agents() const noexcept { return action_counts.size(); }
  std::size_t n_joint() const noexcept {
    std::size_t j = 1;
    for (std::size_t a : action_counts) j *= a;
    return j;
  }
  JointActionCodec codec() const { return JointActionCodec(action_counts); }

  std::span<const double> transition_row(std::size_t s, std::size_t joint) const {
    return std::span<const double>(transition).subspan((s * n_joint() + joint) * n_states, n_states);
  }
  double reward_at(std::size_t s, std::size_t joint) const { return reward[s * n_joint() + joint]; }

  /// Checks every structural invariant; throws ConfigError naming the field.
  void validate() const {
    if (n_states == 0) throw ConfigError("n_states", "must be positive");
    if (action_counts.empty()) throw ConfigError("n_agents", "must be positive");
    for (std::size_t a : action_counts)
      if (a == 0) throw ConfigError("action_counts", "every agent needs at least one action");
    if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("gamma", "must lie in [0, 1)");
    const std::size_t nj = n_joint();
    if (reward.size() != n_states * nj) throw ConfigError("reward", "wrong size");
    if (transition.size() != n_states * nj * n_states) throw ConfigError("transition", "wrong size");
    if (initial_dist.size() != n_states) throw ConfigError("initial_dist", "wrong size");
    for (double r : reward)
      if (!std::isfinite(r)) throw ConfigError("reward", "non-finite entry");
    for (std::size_t row = 0; row < n_states * nj; ++row) {
      double sum = 0.0;
      for (std::size_t k = 0; k < n_states; ++k) {
        const double p = transition[row * n_states + k];
        if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("transition", "probability outside [0, 1]");
        sum += p;
      }
      if (std::abs(sum - 1.0) > 1e-12) throw ConfigError("transition", "row does not sum to 1");
    }
    double mass = 0.0;
    for (double p : initial_dist) {
      if (!(p >= 0.0)) throw ConfigError("initial_dist", "negative probability");
      mass += p;
    }
    if (std::abs(mass - 1.0) > 1e-12) throw ConfigError("initial_dist", "does not sum to 1");
  }
};

/// Checks generator arguments without allocating anything.
inline void validate_generator_params(const GeneratorParams& p) {
  if (p.n_states == 0) throw ConfigError("n_states", "must be positive");
  if (p.action_counts.empty()) throw ConfigError("n_agents", "must be positive");
  for (std::size_t a : p.action_counts)
    if (a == 0) throw ConfigError("action_counts", "every agent needs at least one action");
  if (!(p.gamma >= 0.0 && p.gamma < 1.0)) throw ConfigError("gamma", "must lie in [0, 1)");
  if (!(p.transition_alpha > 0.0) || !std::isfinite(p.transition_alpha))
    throw ConfigError("transition_alpha", "must be positive");
  if (!std::isfinite(p.reward_low) || !std::isfinite(p.reward_high) || p.reward_low > p.reward_high)
    throw ConfigError("reward_low", "need finite reward_low <= reward_high");
}

/// Random game: rewards i.i.d. uniform on [reward_low, reward_high], every
/// transition row from a symmetric Dirichlet(transition_alpha), uniform start.
/// Deterministic in all arguments.
inline StochasticGame generate_game(const GeneratorParams& params) {
  validate_generator_params(params);
  StochasticGame g;
  g.n_states = params.n_states;
  g.action_counts = params.action_counts;
  g.gamma = params.gamma;
  g.generator = params;
  const std::size_t S = params.n_states;
  const std::size_t nj = g.n_joint();

  Rng rng(params.seed);
  g.reward.resize(S * nj);
  const double span = params.reward_high - params.reward_low;
  for (double& r : g.reward) r = params.reward_low + span * uniform01(rng);

  g.transition.resize(S * nj * S);
  std::gamma_distribution<double> gd(params.transition_alpha, 1.0);
  for (std::size_t row = 0; row < S * nj; ++row) {
    double* p = g.transition.data() + row * S;
    if (S == 1) {
      p[0] = 1.0;
      continue;
    }
    double sum = 0.0;
    for (std::size_t k = 0; k < S; ++k) {
      p[k] = gd(rng);
      sum += p[k];
    }
    if (!(sum > 0.0)) {
      // every draw underflowed; fall back to a point mass
      for (std::size_t k = 0; k < S; ++k) p[k] = 0.0;
      p[rng() % S] = 1.0;
      continue;
    }
    for (std::size_t k = 0; k < S; ++k) p[k] /= sum;
  }
  g.initial_dist.assign(S, 1.0 / static_cast<double>(S));
  return g;
}

inline StochasticGame generate_game(std::uint64_t seed, std::size_t n_states, std::size_t n_agents,
                                    std::vector<std::size_t> action_counts, double gamma,
                                    double transition_alpha, double reward_low, double reward_high) {
  if (n_agents == 0) throw ConfigError("n_agents", "must be positive");
  if (action_counts.size() != n_agents)
    throw ConfigError("action_counts", "length must equal n_agents");
  GeneratorParams p{seed, n_states, std::move(action_counts), gamma, transition_alpha, reward_low, reward_high};
  return generate_game(p);
}

struct StepResult {
  std::size_t next_state;
  double reward;
};

inline StepResult step(const StochasticGame& game, std::size_t state, std::size_t joint_action, Rng& rng) {
  if (state >= game.n_states) throw BoundsError("step: state out of range");
  if (joint_action >= game.n_joint()) throw BoundsError("step: joint action out of range");
  const auto row = game.transition_row(state, joint_action);
  return {sample_categorical(row, rng), game.reward_at(state, joint_action)};
}

inline StepResult step(const StochasticGame& game, std::size_t state,
                       std::span<const std::size_t> actions, Rng& rng) {
  return step(game, state, game.codec().encode(actions), rng);
}

/// Joint transitions, stored column-wise. Records of one episode are contiguous.
/// `terminal` marks horizon truncation only.
struct TransitionBatch {
  std::size_t n_agents = 0;
  std::vector<std::size_t> states;
  std::vector<std::size_t> actions;  // [record][agent]
  std::vector<double> rewards;
  std::vector<std::size_t> next_states;
  std::vector<char> terminal;

  std::size_t size() const noexcept { return states.size(); }
  std::size_t action(std::size_t record, std::size_t agent) const { return actions[record * n_agents + agent]; }

  /// Agent's own column of the joint action.
  std::vector<std::size_t> agent_actions(std::size_t agent) const {
    std::vector<std::size_t> out(size());
    for (std::size_t k = 0; k < size(); ++k) out[k] = action(k, agent);
    return out;
  }
};

/// Samples `n_episodes` horizon-truncated episodes. Episode e uses its own
/// stream derived from (stream_seed, e).
inline TransitionBatch rollout(const StochasticGame& game, const ProductPolicy& policy, std::size_t horizon,
                               std::size_t n_episodes, std::uint64_t stream_seed) {
  if (horizon == 0) throw ConfigError("horizon", "must be at least 1");
  if (policy.n_states() != game.n_states || policy.action_counts() != game.action_counts)
    throw ConfigError("policy", "policy dimensions do not match the game");
  const std::size_t N = game.n_agents();
  const JointActionCodec codec = game.codec();

  std::vector<std::vector<double>> tables(N);
  for (std::size_t i = 0; i < N; ++i) tables[i] = policy.prob_table(i);

  TransitionBatch b;
  b.n_agents = N;
  const std::size_t total = horizon * n_episodes;
  b.states.reserve(total);
  b.actions.reserve(total * N);
  b.rewards.reserve(total);
  b.next_states.reserve(total);
  b.terminal.reserve(total);

  std::vector<std::size_t> acts(N);
  for (std::size_t e = 0; e < n_episodes; ++e) {
    Rng rng(derive_seed(stream_seed, e));
    std::size_t s = sample_categorical(game.initial_dist, rng);
    for (std::size_t t = 0; t < horizon; ++t) {
      for (std::size_t i = 0; i < N; ++i) {
        const std::size_t na = game.action_counts[i];
        acts[i] = sample_categorical(std::span<const double>(tables[i]).subspan(s * na, na), rng);
      }
      const auto [next, r] = step(game, s, codec.encode(acts), rng);
      b.states.push_back(s);
      b.actions.insert(b.actions.end(), acts.begin(), acts.end());
      b.rewards.push_back(r);
      b.next_states.push_back(next);
      b.terminal.push_back(t + 1 == horizon ? 1 : 0);
      s = next;
    }
  }
  return b;
}

inline TransitionBatch rollout(const StochasticGame& game, const ProductPolicy& policy, std::size_t horizon,
                               std::size_t n_episodes, Rng& rng) {
  return rollout(game, policy, horizon, n_episodes, rng());
}

}  // namespace depo
