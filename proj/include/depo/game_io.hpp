#pragma once

#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "depo/core.hpp"
#include "depo/env.hpp"

namespace depo {

/// Writes a game as a JSON document. Reals use the shortest round-trip form,
/// so a save/load cycle is bit-exact. With `compact` the dense tensors are
/// omitted and the loader regenerates them from `seed` and `generator_params`;
/// this requires a generated game.
inline void write_game_json(std::ostream& os, const StochasticGame& g, bool compact = false) {
  if (compact && !g.generator) throw ConfigError("compact", "only generated games can be written compactly");
  const std::size_t S = g.n_states;
  const std::size_t nj = g.n_joint();
  os << "{\n  \"n_states\": " << S << ",\n  \"n_agents\": " << g.n_agents() << ",\n  \"action_counts\": [";
  for (std::size_t i = 0; i < g.n_agents(); ++i) os << (i ? ", " : "") << g.action_counts[i];
  os << "],\n  \"gamma\": " << format_double(g.gamma) << ",\n";
  if (g.generator) {
    const auto& p = *g.generator;
    os << "  \"seed\": " << p.seed << ",\n  \"generator_params\": {\"transition_alpha\": "
       << format_double(p.transition_alpha) << ", \"reward_low\": " << format_double(p.reward_low)
       << ", \"reward_high\": " << format_double(p.reward_high) << "},\n";
  } else {
    os << "  \"seed\": null,\n  \"generator_params\": null,\n";
  }
  os << "  \"initial_dist\": [";
  for (std::size_t s = 0; s < S; ++s) os << (s ? ", " : "") << format_double(g.initial_dist[s]);
  os << "]";
  if (!compact) {
    os << ",\n  \"reward\": [";
    for (std::size_t s = 0; s < S; ++s) {
      os << (s ? ",\n    [" : "\n    [");
      for (std::size_t a = 0; a < nj; ++a) os << (a ? "," : "") << format_double(g.reward[s * nj + a]);
      os << "]";
    }
    os << "\n  ],\n  \"transition\": [";
    for (std::size_t s = 0; s < S; ++s) {
      os << (s ? ",\n    [" : "\n    [");
      for (std::size_t a = 0; a < nj; ++a) {
        os << (a ? ",\n     [" : "\n     [");
        const auto row = g.transition_row(s, a);
        for (std::size_t k = 0; k < S; ++k) os << (k ? "," : "") << format_double(row[k]);
        os << "]";
      }
      os << "]";
    }
    os << "\n  ]";
  }
  os << "\n}\n";
}

namespace detail {

/// SAX consumer that flattens the nested tensors straight into vectors.
class GameSax : public nlohmann::json_sax<nlohmann::json> {
 public:
  using json = nlohmann::json;

  struct Parsed {
    std::optional<std::size_t> n_states, n_agents;
    std::optional<double> gamma;
    std::optional<std::uint64_t> seed;
    bool has_generator = false;
    std::optional<double> alpha, reward_low, reward_high;
    std::vector<std::size_t> action_counts;
    std::vector<double> initial_dist, reward, transition;
    bool has_reward = false, has_transition = false, has_action_counts = false, has_initial = false;
  } out;

  bool null() override { return scalar_null(); }
  bool boolean(bool) override { return fail("unexpected boolean"); }
  bool number_integer(number_integer_t v) override { return number(static_cast<double>(v), v >= 0, static_cast<std::uint64_t>(v)); }
  bool number_unsigned(number_unsigned_t v) override { return number(static_cast<double>(v), true, v); }
  bool number_float(number_float_t v, const string_t&) override { return number(v, false, 0); }
  bool string(string_t&) override { return fail("unexpected string"); }
  bool binary(binary_t&) override { return fail("unexpected binary"); }

  bool start_object(std::size_t) override {
    ++depth_;
    if (depth_ == 2 && key_ == "generator_params") {
      out.has_generator = true;
      in_gen_ = true;
      return true;
    }
    if (depth_ != 1) return fail("unexpected object");
    return true;
  }
  bool end_object() override {
    if (depth_ == 2) in_gen_ = false;
    --depth_;
    return true;
  }
  bool start_array(std::size_t) override {
    ++depth_;
    if (depth_ == 2) {
      array_key_ = key_;
      if (key_ == "reward") out.has_reward = true;
      else if (key_ == "transition") out.has_transition = true;
      else if (key_ == "action_counts") out.has_action_counts = true;
      else if (key_ == "initial_dist") out.has_initial = true;
      else return fail("unexpected array for key '" + key_ + "'");
    }
    return true;
  }
  bool end_array() override {
    if (depth_ == 2) array_key_.clear();
    --depth_;
    return true;
  }
  bool key(string_t& k) override {
    if (depth_ == 1) key_ = k;
    else if (in_gen_) gen_key_ = k;
    return true;
  }
  bool parse_error(std::size_t pos, const std::string&, const nlohmann::detail::exception& ex) override {
    error = "parse error at byte " + std::to_string(pos) + ": " + ex.what();
    return false;
  }

  std::string error;

 private:
  bool fail(const std::string& msg) {
    error = msg;
    return false;
  }
  bool scalar_null() {
    if (depth_ == 1 && (key_ == "seed" || key_ == "generator_params")) return true;
    return fail("unexpected null for key '" + key_ + "'");
  }
  bool number(double v, bool nonneg_int, std::uint64_t u) {
    if (!array_key_.empty()) {
      if (array_key_ == "reward") out.reward.push_back(v);
      else if (array_key_ == "transition") out.transition.push_back(v);
      else if (array_key_ == "initial_dist") out.initial_dist.push_back(v);
      else if (array_key_ == "action_counts") {
        if (!nonneg_int) return fail("action_counts must be non-negative integers");
        out.action_counts.push_back(static_cast<std::size_t>(u));
      }
      return true;
    }
    if (in_gen_) {
      if (gen_key_ == "transition_alpha") out.alpha = v;
      else if (gen_key_ == "reward_low") out.reward_low = v;
      else if (gen_key_ == "reward_high") out.reward_high = v;
      else return fail("unknown generator_params key '" + gen_key_ + "'");
      return true;
    }
    if (depth_ != 1) return fail("unexpected number");
    if (key_ == "n_states" || key_ == "n_agents" || key_ == "seed") {
      if (!nonneg_int) return fail(key_ + " must be a non-negative integer");
      if (key_ == "n_states") out.n_states = static_cast<std::size_t>(u);
      else if (key_ == "n_agents") out.n_agents = static_cast<std::size_t>(u);
      else out.seed = u;
    } else if (key_ == "gamma") {
      out.gamma = v;
    } else {
      return fail("unknown key '" + key_ + "'");
    }
    return true;
  }

  int depth_ = 0;
  bool in_gen_ = false;
  std::string key_, gen_key_, array_key_;
};

}  // namespace detail

/// Parses a game document. Throws ConfigError on malformed or invalid input.
inline StochasticGame read_game_json(std::istream& is) {
  detail::GameSax sax;
  const bool ok = nlohmann::json::sax_parse(is, &sax);
  if (!ok) throw ConfigError("game", sax.error.empty() ? "malformed game document" : sax.error);
  auto& p = sax.out;
  if (!p.n_states) throw ConfigError("n_states", "missing");
  if (!p.gamma) throw ConfigError("gamma", "missing");
  if (!p.has_action_counts) throw ConfigError("action_counts", "missing");
  if (p.n_agents && *p.n_agents != p.action_counts.size())
    throw ConfigError("n_agents", "does not match length of action_counts");

  if (!p.has_reward || !p.has_transition) {
    if (p.has_reward != p.has_transition) throw ConfigError("transition", "reward and transition must both be present");
    if (!p.seed || !p.has_generator || !p.alpha || !p.reward_low || !p.reward_high)
      throw ConfigError("generator_params", "needed to regenerate a compact game");
    GeneratorParams gp{*p.seed, *p.n_states, p.action_counts, *p.gamma, *p.alpha, *p.reward_low, *p.reward_high};
    StochasticGame g = generate_game(gp);
    if (p.has_initial) g.initial_dist = p.initial_dist;
    g.validate();
    return g;
  }

  StochasticGame g;
  g.n_states = *p.n_states;
  g.action_counts = std::move(p.action_counts);
  g.gamma = *p.gamma;
  g.reward = std::move(p.reward);
  g.transition = std::move(p.transition);
  if (!p.has_initial) throw ConfigError("initial_dist", "missing");
  g.initial_dist = std::move(p.initial_dist);
  if (p.seed && p.has_generator && p.alpha && p.reward_low && p.reward_high)
    g.generator = GeneratorParams{*p.seed, g.n_states, g.action_counts, g.gamma, *p.alpha, *p.reward_low, *p.reward_high};
  g.validate();
  return g;
}

inline void save_game(const std::string& path, const StochasticGame& g, bool compact = false) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_game_json(os, g, compact);
  if (!os) throw std::runtime_error("write to '" + path + "' failed");
}

inline StochasticGame load_game(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open '" + path + "'");
  return read_game_json(is);
}

}  // namespace depo
