#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "depo/adaptive.hpp"
#include "depo/core.hpp"
#include "depo/optimizer.hpp"
#include "depo/policy.hpp"

namespace depo {

/// What one agent sees of a batch: its own state/action pairs and advantages.
/// No other agent's actions or parameters are reachable from here.
struct AgentSamples {
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  std::vector<std::size_t> states;
  std::vector<std::size_t> actions;
  std::vector<double> advantages;

  std::size_t size() const noexcept { return states.size(); }
};

enum class PolicyLoss { dpo, ippo_kl, ippo_clip };

struct ObjectiveParams {
  PolicyLoss loss = PolicyLoss::dpo;
  PenaltyCoefficients beta{};
  double clip_eps = 0.2;
  double n_agents = 1.0;  // the 1/N factor on the advantage term (penalty forms)
  double sqrt_eps = 1e-12;
};

/// Batch estimate of an agent's policy objective as a function of its logits.
/// Ratios u = pi_new(a|s)/pi_old(a|s) weight the advantages; the average KL
/// is exact per visited state, weighted by visit frequency in the batch.
class SampledObjective {
 public:
  SampledObjective(const AgentSamples& samples, std::vector<double> old_logits, ObjectiveParams params)
      : samples_(samples), old_logits_(std::move(old_logits)), params_(params) {
    const std::size_t na = samples.n_actions, S = samples.n_states;
    if (old_logits_.size() != S * na) throw ConfigError("policy", "old logits do not match sample dimensions");
    if (samples.actions.size() != samples.size() || samples.advantages.size() != samples.size())
      throw ConfigError("batch", "ragged agent samples");
    old_logp_.resize(S * na);
    old_probs_.resize(S * na);
    for (std::size_t s = 0; s < S; ++s) {
      log_softmax(std::span<const double>(old_logits_).subspan(s * na, na), std::span<double>(old_logp_).subspan(s * na, na));
      for (std::size_t a = 0; a < na; ++a) old_probs_[s * na + a] = std::exp(old_logp_[s * na + a]);
    }
    weight_.assign(S, 0.0);
    const double inv_b = samples.size() ? 1.0 / static_cast<double>(samples.size()) : 0.0;
    for (std::size_t k = 0; k < samples.size(); ++k) {
      if (samples.states[k] >= S || samples.actions[k] >= na) throw BoundsError("agent sample index out of range");
      weight_[samples.states[k]] += inv_b;
    }
  }

  const ObjectiveParams& params() const noexcept { return params_; }
  std::span<const double> old_logits() const noexcept { return old_logits_; }

  /// Empirical D^avg = sum_s w_s KL(pi_old(.|s) || pi(.|s)).
  double average_kl(std::span<const double> logits) const {
    const std::size_t na = samples_.n_actions;
    double d = 0.0;
    for (std::size_t s = 0; s < samples_.n_states; ++s)
      if (weight_[s] > 0.0)
        d += weight_[s] * softmax_kl(std::span<const double>(old_logits_).subspan(s * na, na), logits.subspan(s * na, na));
    return d;
  }

  /// Mean ratio-weighted advantage, (1/B) sum_k u_k A_k.
  double surrogate(std::span<const double> logits) const {
    const auto logp = log_probs(logits);
    double l = 0.0;
    for (std::size_t k = 0; k < samples_.size(); ++k) l += ratio(logp, k) * samples_.advantages[k];
    return samples_.size() ? l / static_cast<double>(samples_.size()) : 0.0;
  }

  double value(std::span<const double> logits) const {
    const std::size_t B = samples_.size();
    if (B == 0) return 0.0;
    const auto logp = log_probs(logits);
    const double inv_b = 1.0 / static_cast<double>(B);
    if (params_.loss == PolicyLoss::ippo_clip) {
      const double lo = 1.0 - params_.clip_eps, hi = 1.0 + params_.clip_eps;
      double v = 0.0;
      for (std::size_t k = 0; k < B; ++k) {
        const double u = ratio(logp, k), A = samples_.advantages[k];
        v += std::min(u * A, std::clamp(u, lo, hi) * A);
      }
      return v * inv_b;
    }
    double l = 0.0;
    for (std::size_t k = 0; k < B; ++k) l += ratio(logp, k) * samples_.advantages[k];
    l *= inv_b / params_.n_agents;
    const double d = average_kl(logits);
    double v = l - params_.beta.beta2 * d;
    if (params_.loss == PolicyLoss::dpo) v -= params_.beta.beta1 * std::sqrt(d + params_.sqrt_eps);
    return v;
  }

  /// The clipped objective written as a negated hinge loss,
  ///   -(1/B) sum_k |A_k| max(0, eps - sign(A_k)(u_k - 1)).
  /// Differs from the clipped value by a term independent of the new logits.
  double hinge_value(std::span<const double> logits) const {
    const std::size_t B = samples_.size();
    if (B == 0) return 0.0;
    const auto logp = log_probs(logits);
    double v = 0.0;
    for (std::size_t k = 0; k < B; ++k) {
      const double A = samples_.advantages[k];
      const double y = A > 0.0 ? 1.0 : (A < 0.0 ? -1.0 : 0.0);
      v += std::abs(A) * std::max(0.0, params_.clip_eps - y * (ratio(logp, k) - 1.0));
    }
    return -v / static_cast<double>(B);
  }

  std::vector<double> gradient(std::span<const double> logits) const {
    const std::size_t na = samples_.n_actions, S = samples_.n_states, B = samples_.size();
    std::vector<double> grad(S * na, 0.0);
    if (B == 0) return grad;
    const auto logp = log_probs(logits);
    const double inv_b = 1.0 / static_cast<double>(B);
    const bool clip = params_.loss == PolicyLoss::ippo_clip;
    const double scale = clip ? inv_b : inv_b / params_.n_agents;
    // d u / d theta[s][a] = u (1[a = a_k] - pi(a|s))
    for (std::size_t k = 0; k < B; ++k) {
      const double u = ratio(logp, k), A = samples_.advantages[k];
      if (clip) {
        const bool active = (A > 0.0 && u < 1.0 + params_.clip_eps) || (A < 0.0 && u > 1.0 - params_.clip_eps);
        if (!active) continue;
      }
      const std::size_t s = samples_.states[k];
      const double c = scale * A * u;
      for (std::size_t a = 0; a < na; ++a) grad[s * na + a] -= c * std::exp(logp[s * na + a]);
      grad[s * na + samples_.actions[k]] += c;
    }
    if (clip) return grad;
    const double d = average_kl(logits);
    double coef = params_.beta.beta2;
    if (params_.loss == PolicyLoss::dpo) coef += params_.beta.beta1 / (2.0 * std::sqrt(d + params_.sqrt_eps));
    // d KL_s / d theta[s][a] = pi(a|s) - pi_old(a|s)
    for (std::size_t s = 0; s < S; ++s) {
      if (weight_[s] == 0.0) continue;
      for (std::size_t a = 0; a < na; ++a)
        grad[s * na + a] -= coef * weight_[s] * (std::exp(logp[s * na + a]) - old_probs_[s * na + a]);
    }
    return grad;
  }

 private:
  std::vector<double> log_probs(std::span<const double> logits) const {
    const std::size_t na = samples_.n_actions;
    std::vector<double> out(logits.size());
    for (std::size_t s = 0; s < samples_.n_states; ++s)
      log_softmax(logits.subspan(s * na, na), std::span<double>(out).subspan(s * na, na));
    return out;
  }

  double ratio(const std::vector<double>& logp, std::size_t k) const {
    const std::size_t idx = samples_.states[k] * samples_.n_actions + samples_.actions[k];
    return std::exp(logp[idx] - old_logp_[idx]);
  }

  const AgentSamples& samples_;
  std::vector<double> old_logits_;
  std::vector<double> old_logp_, old_probs_;
  std::vector<double> weight_;
  ObjectiveParams params_;
};

struct PolicyUpdateResult {
  std::vector<double> logits;
  bool diverged = false;    // a non-finite value appeared; logits are the old ones
  double realized_kl = 0.0;  // empirical D^avg(pi_old || pi_new) over the batch
  double objective = 0.0;    // final sampled objective
};

/// `epochs` full-batch ascent steps on the sampled objective starting from
/// `old_logits`. A step that lowers the objective is halved (up to
/// `max_halvings` times) and dropped if it still does; near theta_old the
/// sqrt(KL) term is too sharp for a fixed step. On a non-finite value the
/// round is abandoned and the old logits (and optimizer state) are kept.
inline PolicyUpdateResult policy_update(const std::vector<double>& old_logits, const AgentSamples& samples,
                                        const ObjectiveParams& params, Optimizer& opt, std::size_t epochs,
                                        std::size_t max_halvings = 30) {
  const SampledObjective f(samples, old_logits, params);
  const Optimizer saved = opt;
  PolicyUpdateResult res;
  res.logits = old_logits;
  double fv = f.value(res.logits);
  auto abandon = [&] {
    res.logits = old_logits;
    res.diverged = true;
    opt = saved;
  };
  bool finite = std::isfinite(fv);
  for (std::size_t e = 0; e < epochs && finite; ++e) {
    const auto grad = f.gradient(res.logits);
    for (double g : grad) finite = finite && std::isfinite(g);
    if (!finite) break;
    std::vector<double> cand = res.logits;
    opt.ascend(cand, grad);
    for (double x : cand) finite = finite && std::isfinite(x);
    double cv = finite ? f.value(cand) : 0.0;
    finite = finite && std::isfinite(cv);
    if (!finite) break;
    for (std::size_t h = 0; h < max_halvings && cv < fv; ++h) {
      for (std::size_t k = 0; k < cand.size(); ++k) cand[k] = res.logits[k] + 0.5 * (cand[k] - res.logits[k]);
      cv = f.value(cand);
    }
    if (cv >= fv) {
      res.logits = std::move(cand);
      fv = cv;
    }
  }
  if (!finite) {
    abandon();
    fv = f.value(res.logits);
  }
  res.objective = fv;
  res.realized_kl = f.average_kl(res.logits);
  return res;
}

/// DPO: maximize (1/N) L^i - beta1 sqrt(D^avg) - beta2 D^avg.
inline PolicyUpdateResult dpo_policy_update(const std::vector<double>& old_logits, const AgentSamples& samples,
                                            PenaltyCoefficients beta, std::size_t n_agents, Optimizer& opt,
                                            std::size_t epochs) {
  ObjectiveParams p;
  p.loss = PolicyLoss::dpo;
  p.beta = beta;
  p.n_agents = static_cast<double>(n_agents);
  return policy_update(old_logits, samples, p, opt, epochs);
}

/// IPPO-KL: DPO without the sqrt(KL) term.
inline PolicyUpdateResult ippo_kl_policy_update(const std::vector<double>& old_logits, const AgentSamples& samples,
                                                PenaltyCoefficients beta, std::size_t n_agents, Optimizer& opt,
                                                std::size_t epochs) {
  ObjectiveParams p;
  p.loss = PolicyLoss::ippo_kl;
  p.beta = beta;
  p.n_agents = static_cast<double>(n_agents);
  return policy_update(old_logits, samples, p, opt, epochs);
}

/// IPPO: maximize mean min(u A, clip(u, 1-eps, 1+eps) A).
inline PolicyUpdateResult ippo_policy_update(const std::vector<double>& old_logits, const AgentSamples& samples,
                                             double clip_eps, Optimizer& opt, std::size_t epochs) {
  ObjectiveParams p;
  p.loss = PolicyLoss::ippo_clip;
  p.clip_eps = clip_eps;
  return policy_update(old_logits, samples, p, opt, epochs);
}

}  // namespace depo
