#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "depo/core.hpp"
#include "depo/env.hpp"
#include "depo/train.hpp"

namespace depo::harness {

using nlohmann::json;

struct EnvConfig {
  std::size_t n_states = 100;
  std::size_t n_agents = 6;
  std::vector<std::size_t> action_counts = std::vector<std::size_t>(6, 5);
  double gamma = 0.99;
  std::uint64_t seed = 0;
  double transition_alpha = 0.2;
  double reward_low = 0.0;
  double reward_high = 1.0;
  std::size_t horizon = 100;

  GeneratorParams generator() const {
    return {seed, n_states, action_counts, gamma, transition_alpha, reward_low, reward_high};
  }
};

struct TrainBlock {
  std::string algo = "dpo";
  std::size_t iterations = 300;
  std::size_t batch_episodes = 32;
  std::size_t epochs = 15;
  std::string optimizer = "adam";
  double actor_lr = 0.05;
  double critic_lr = 0.5;
  double d_target = 0.1;
  double delta = 1.5;
  double omega = 2.0;
  double beta1_init = 0.01;
  double beta2_init = 0.01;
  double clip_eps = 0.2;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  bool exact_advantage = false;
  std::string critic_target = "td";
  bool bootstrap_truncation = true;
  bool normalize_advantages = false;
  double iql_lr = 0.1;
  double iql_eps_start = 1.0;
  double iql_eps_end = 0.05;
  std::size_t eval_every = 10;
  std::vector<double> d_target_values{0.001, 0.01, 0.1, 1.0};
  double dp_tol = 1e-8;
};

struct OutputBlock {
  std::string directory = "out";
  bool emit_svg = false;
};

struct ExperimentConfig {
  EnvConfig env;
  TrainBlock train;
  OutputBlock output;

  /// `train.algo` may list several algorithms separated by commas.
  std::vector<Algo> algos() const {
    std::vector<Algo> out;
    std::size_t start = 0;
    while (start <= train.algo.size()) {
      const auto comma = std::min(train.algo.find(',', start), train.algo.size());
      try {
        out.push_back(parse_algo(train.algo.substr(start, comma - start)));
      } catch (const ConfigError& e) {
        throw ConfigError("train.algo", std::string(e.what()).substr(e.field().size() + 2));
      }
      start = comma + 1;
    }
    return out;
  }

  /// Core trainer settings for one algorithm.
  TrainConfig train_config(Algo algo) const {
    TrainConfig c;
    c.algo = algo;
    c.iterations = train.iterations;
    c.horizon = env.horizon;
    c.batch_episodes = train.batch_episodes;
    c.epochs = train.epochs;
    c.optimizer = parse_optimizer_kind(train.optimizer);
    c.actor_lr = train.actor_lr;
    c.critic_lr = train.critic_lr;
    c.adaptive = {train.d_target, train.delta, train.omega};
    c.beta_init = {train.beta1_init, train.beta2_init};
    c.clip_eps = train.clip_eps;
    c.exact_advantage = train.exact_advantage;
    c.critic_target = parse_critic_target(train.critic_target);
    c.bootstrap_truncation = train.bootstrap_truncation;
    c.normalize_advantages = train.normalize_advantages;
    c.iql_lr = train.iql_lr;
    c.iql_eps_start = train.iql_eps_start;
    c.iql_eps_end = train.iql_eps_end;
    c.eval_every = train.eval_every;
    return c;
  }

  /// Range checks on every field; throws ConfigError naming the field.
  void validate() const {
    if (env.n_states == 0) throw ConfigError("env.n_states", "must be positive");
    if (env.n_agents == 0) throw ConfigError("env.n_agents", "must be positive");
    if (env.action_counts.size() != env.n_agents)
      throw ConfigError("env.action_counts", "length must equal env.n_agents");
    for (std::size_t a : env.action_counts)
      if (a == 0) throw ConfigError("env.action_counts", "entries must be positive");
    if (!(env.gamma >= 0.0 && env.gamma < 1.0)) throw ConfigError("env.gamma", "must lie in [0, 1)");
    if (!(env.transition_alpha > 0.0)) throw ConfigError("env.transition_alpha", "must be positive");
    if (!(env.reward_low <= env.reward_high)) throw ConfigError("env.reward_low", "must not exceed env.reward_high");
    if (env.horizon == 0) throw ConfigError("env.horizon", "must be at least 1");
    if (train.seeds.empty()) throw ConfigError("train.seeds", "must not be empty");
    if (!(train.dp_tol > 0.0)) throw ConfigError("train.dp_tol", "must be positive");
    for (double d : train.d_target_values)
      if (!(d > 0.0)) throw ConfigError("train.d_target_values", "entries must be positive");
    if (output.directory.empty()) throw ConfigError("output.directory", "must not be empty");
    const auto list = algos();
    try {
      train_config(list.front()).validate();
    } catch (const ConfigError& e) {
      throw ConfigError("train." + e.field(), std::string(e.what()).substr(e.field().size() + 2));
    }
  }
};

inline json to_json(const ExperimentConfig& c) {
  json j;
  j["env"] = {{"n_states", c.env.n_states},
              {"n_agents", c.env.n_agents},
              {"action_counts", c.env.action_counts},
              {"gamma", c.env.gamma},
              {"seed", c.env.seed},
              {"transition_alpha", c.env.transition_alpha},
              {"reward_low", c.env.reward_low},
              {"reward_high", c.env.reward_high},
              {"horizon", c.env.horizon}};
  const auto& t = c.train;
  j["train"] = {{"algo", t.algo},
                {"iterations", t.iterations},
                {"batch_episodes", t.batch_episodes},
                {"epochs", t.epochs},
                {"optimizer", t.optimizer},
                {"actor_lr", t.actor_lr},
                {"critic_lr", t.critic_lr},
                {"d_target", t.d_target},
                {"delta", t.delta},
                {"omega", t.omega},
                {"beta1_init", t.beta1_init},
                {"beta2_init", t.beta2_init},
                {"clip_eps", t.clip_eps},
                {"seeds", t.seeds},
                {"exact_advantage", t.exact_advantage},
                {"critic_target", t.critic_target},
                {"bootstrap_truncation", t.bootstrap_truncation},
                {"normalize_advantages", t.normalize_advantages},
                {"iql_lr", t.iql_lr},
                {"iql_eps_start", t.iql_eps_start},
                {"iql_eps_end", t.iql_eps_end},
                {"eval_every", t.eval_every},
                {"d_target_values", t.d_target_values},
                {"dp_tol", t.dp_tol}};
  j["output"] = {{"directory", c.output.directory}, {"emit_svg", c.output.emit_svg}};
  return j;
}

namespace detail {

template <class T>
void read_field(const json& obj, const std::string& block, const char* key, T& dst) {
  const auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    dst = it->template get<T>();
  } catch (const json::exception&) {
    throw ConfigError(block + "." + key, "has the wrong type");
  }
}

inline void reject_unknown(const json& obj, const std::string& block, std::initializer_list<const char*> known) {
  if (!obj.is_object()) throw ConfigError(block, "must be an object");
  const std::set<std::string> k(known.begin(), known.end());
  for (const auto& [key, _] : obj.items())
    if (!k.count(key)) throw ConfigError(block.empty() ? key : block + "." + key, "unknown key");
}

}  // namespace detail

/// Builds a config from a (possibly partial) document over the defaults.
/// Unknown keys are rejected and every range is validated.
inline ExperimentConfig from_json(const json& j) {
  ExperimentConfig c;
  detail::reject_unknown(j, "", {"env", "train", "output"});
  if (j.contains("env")) {
    const auto& e = j["env"];
    detail::reject_unknown(e, "env", {"n_states", "n_agents", "action_counts", "gamma", "seed", "transition_alpha",
                                      "reward_low", "reward_high", "horizon"});
    detail::read_field(e, "env", "n_states", c.env.n_states);
    detail::read_field(e, "env", "n_agents", c.env.n_agents);
    detail::read_field(e, "env", "action_counts", c.env.action_counts);
    detail::read_field(e, "env", "gamma", c.env.gamma);
    detail::read_field(e, "env", "seed", c.env.seed);
    detail::read_field(e, "env", "transition_alpha", c.env.transition_alpha);
    detail::read_field(e, "env", "reward_low", c.env.reward_low);
    detail::read_field(e, "env", "reward_high", c.env.reward_high);
    detail::read_field(e, "env", "horizon", c.env.horizon);
    // one entry means "same count for every agent"
    if (c.env.action_counts.size() == 1 && c.env.n_agents > 1)
      c.env.action_counts.assign(c.env.n_agents, c.env.action_counts[0]);
    else if (e.contains("n_agents") && !e.contains("action_counts") && c.env.action_counts.size() != c.env.n_agents)
      c.env.action_counts.assign(c.env.n_agents, c.env.action_counts.empty() ? 1 : c.env.action_counts[0]);
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    detail::reject_unknown(t, "train",
                           {"algo", "iterations", "batch_episodes", "epochs", "optimizer", "actor_lr", "critic_lr",
                            "d_target", "delta", "omega", "beta1_init", "beta2_init", "clip_eps", "seeds",
                            "exact_advantage", "critic_target", "bootstrap_truncation", "normalize_advantages",
                            "iql_lr", "iql_eps_start", "iql_eps_end", "eval_every", "d_target_values", "dp_tol"});
    auto& b = c.train;
    detail::read_field(t, "train", "algo", b.algo);
    detail::read_field(t, "train", "iterations", b.iterations);
    detail::read_field(t, "train", "batch_episodes", b.batch_episodes);
    detail::read_field(t, "train", "epochs", b.epochs);
    detail::read_field(t, "train", "optimizer", b.optimizer);
    detail::read_field(t, "train", "actor_lr", b.actor_lr);
    detail::read_field(t, "train", "critic_lr", b.critic_lr);
    detail::read_field(t, "train", "d_target", b.d_target);
    detail::read_field(t, "train", "delta", b.delta);
    detail::read_field(t, "train", "omega", b.omega);
    detail::read_field(t, "train", "beta1_init", b.beta1_init);
    detail::read_field(t, "train", "beta2_init", b.beta2_init);
    detail::read_field(t, "train", "clip_eps", b.clip_eps);
    detail::read_field(t, "train", "seeds", b.seeds);
    detail::read_field(t, "train", "exact_advantage", b.exact_advantage);
    detail::read_field(t, "train", "critic_target", b.critic_target);
    detail::read_field(t, "train", "bootstrap_truncation", b.bootstrap_truncation);
    detail::read_field(t, "train", "normalize_advantages", b.normalize_advantages);
    detail::read_field(t, "train", "iql_lr", b.iql_lr);
    detail::read_field(t, "train", "iql_eps_start", b.iql_eps_start);
    detail::read_field(t, "train", "iql_eps_end", b.iql_eps_end);
    detail::read_field(t, "train", "eval_every", b.eval_every);
    detail::read_field(t, "train", "d_target_values", b.d_target_values);
    detail::read_field(t, "train", "dp_tol", b.dp_tol);
  }
  if (j.contains("output")) {
    const auto& o = j["output"];
    detail::reject_unknown(o, "output", {"directory", "emit_svg"});
    detail::read_field(o, "output", "directory", c.output.directory);
    detail::read_field(o, "output", "emit_svg", c.output.emit_svg);
  }
  c.validate();
  return c;
}

/// Applies `block.key=value`. The value is parsed as JSON when possible and
/// taken as a bare string otherwise, so `train.algo=ippo` works unquoted.
inline void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError(assignment, "override must look like block.key=value");
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  const auto dot = path.find('.');
  if (dot == std::string::npos) throw ConfigError(path, "override key must be block.key");
  const std::string block = path.substr(0, dot), key = path.substr(dot + 1);
  json value = json::parse(raw, nullptr, /*allow_exceptions=*/false);
  if (value.is_discarded()) value = raw;
  doc[block][key] = std::move(value);
}

inline ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
  json doc = json::object();
  if (!path.empty()) {
    std::ifstream is(path);
    if (!is) throw ConfigError("config", "cannot open '" + path + "'");
    doc = json::parse(is, nullptr, false);
    if (doc.is_discarded()) throw ConfigError("config", "'" + path + "' is not valid JSON");
  }
  for (const auto& o : overrides) apply_override(doc, o);
  return from_json(doc);
}

/// Keys are emitted sorted, so the dump is a canonical form.
inline std::string canonical_json(const ExperimentConfig& c) { return to_json(c).dump(); }

/// 64-bit FNV-1a of the canonical serialization, as 16 hex digits.
inline std::string config_hash(const ExperimentConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : canonical_json(c)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace depo::harness
