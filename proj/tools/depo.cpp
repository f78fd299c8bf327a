// depo: command-line driver for game generation, exact solves, training runs,
// the d_target ablation, the verification suite and plotting.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "depo/env.hpp"
#include "depo/game_io.hpp"
#include "depo/harness/config.hpp"
#include "depo/harness/csv.hpp"
#include "depo/harness/experiment.hpp"
#include "depo/harness/svg.hpp"
#include "depo/harness/verify.hpp"
#include "depo/oracle.hpp"

#ifndef DEPO_GIT_DESCRIBE
#define DEPO_GIT_DESCRIBE "unknown"
#endif

namespace {

using namespace depo;
using namespace depo::harness;
namespace fs = std::filesystem;

constexpr int kOk = 0, kFail = 1, kConfig = 2;

struct Common {
  std::string config;
  std::vector<std::string> sets;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "JSON experiment config (defaults used when omitted)");
  sub->add_option("--set", c.sets, "Field override, block.key=value (repeatable)");
}

StochasticGame game_for(const ExperimentConfig& cfg, const std::string& game_path) {
  if (!game_path.empty()) return load_game(game_path);
  return generate_game(cfg.env.generator());
}

double elapsed(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void write_record(const fs::path& dir, const ExperimentConfig& cfg, RunRecord rec, const nlohmann::json& extra) {
  auto j = rec.to_json(cfg);
  for (const auto& [k, v] : extra.items()) j[k] = v;
  write_file(dir / "run.json", j.dump(2) + "\n");
}

int cmd_gen(const Common& c, const std::string& out, bool with_dp, bool compact) {
  const auto cfg = load_config(c.config, c.sets);
  const auto game = generate_game(cfg.env.generator());
  const fs::path path = out.empty() ? fs::path(cfg.output.directory) / "game.json" : fs::path(out);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  save_game(path.string(), game, compact);
  std::cout << "wrote " << path.string() << " (S=" << game.n_states << ", N=" << game.n_agents() << ")\n";
  if (with_dp) {
    const auto vi = joint_value_iteration(game, cfg.train.dp_tol);
    std::cout << "j_star " << format_double(vi.j_star) << "\n";
  }
  return kOk;
}

int cmd_dp(const Common& c, const std::string& game_path, double tol, const std::string& csv) {
  const auto cfg = load_config(c.config, c.sets);
  const auto game = game_for(cfg, game_path);
  const auto vi = joint_value_iteration(game, tol > 0.0 ? tol : cfg.train.dp_tol);
  nlohmann::json j{{"j_star", vi.j_star}, {"iterations", vi.iterations}, {"residual", vi.residual}};
  std::cout << j.dump() << "\n";
  if (!csv.empty()) {
    std::ostringstream os;
    os << "state,v_star,greedy_joint_action\n";
    for (std::size_t s = 0; s < game.n_states; ++s)
      os << s << ',' << format_double(vi.v_star[s]) << ',' << vi.greedy[s] << '\n';
    write_file(csv, os.str());
  }
  return kOk;
}

int cmd_train(const Common& c, const std::string& game_path, std::size_t jobs) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto cfg = load_config(c.config, c.sets);
  const auto game = game_for(cfg, game_path);
  const double j_star = joint_value_iteration(game, cfg.train.dp_tol).j_star;
  std::vector<LearningCurve> all;
  for (Algo a : cfg.algos()) {
    auto curves = run_seeds(game, cfg.train_config(a), cfg.train.seeds, jobs);
    for (auto& cv : curves) all.push_back(std::move(cv));
  }
  const fs::path dir = cfg.output.directory;
  RunRecord rec;
  rec.config_hash = config_hash(cfg);
  rec.git_describe = DEPO_GIT_DESCRIBE;
  rec.jobs = jobs;
  for (const auto& cv : all) rec.curve_rows.push_back(cv.rows.size());
  for (const auto& p : write_training_outputs(dir, all)) rec.outputs.push_back(p.string());

  int status = kOk;
  nlohmann::json finals = nlohmann::json::object();
  for (Algo a : cfg.algos()) {
    std::vector<double> f;
    for (const auto& cv : all)
      if (cv.algo == a) {
        if (auto fj = final_exact_j(cv)) f.push_back(*fj);
        for (const auto& r : cv.rows)
          if (r.exact_j && *r.exact_j > j_star + 1e-6) {
            std::cerr << "error: " << to_string(a) << " seed " << cv.seed << " iteration " << r.iteration
                      << " exact_J " << format_double(*r.exact_j) << " exceeds j_star " << format_double(j_star)
                      << "\n";
            status = kFail;
          }
      }
    const auto m = mean_ci(f);
    finals[to_string(a)] = {{"final_exact_J_mean", m.mean}, {"final_exact_J_ci95", m.ci95}};
    std::cout << to_string(a) << ": final exact J " << format_double(m.mean) << " +- " << format_double(m.ci95)
              << " over " << m.n << " seeds\n";
  }
  std::cout << "j_star " << format_double(j_star) << "\n";
  if (cfg.output.emit_svg) {
    std::vector<Series> series;
    for (Algo a : cfg.algos()) {
      std::ifstream is(dir / ("summary_" + std::string(to_string(a)) + ".csv"));
      series.push_back(series_from_csv(read_csv(is, "summary")));
    }
    write_file(dir / "curves.svg", render_svg(series, j_star));
  }
  rec.wall_clock_seconds = elapsed(t0);
  write_record(dir, cfg, rec, {{"j_star", j_star}, {"finals", finals}});
  return status;
}

int cmd_ablate(const Common& c, const std::string& game_path, std::vector<double> values, std::size_t jobs) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto cfg = load_config(c.config, c.sets);
  if (values.empty()) values = cfg.train.d_target_values;
  for (double v : values)
    if (!(v > 0.0)) throw ConfigError("values", "d_target values must be positive");
  const auto game = game_for(cfg, game_path);
  const auto cells = run_ablation(game, cfg.train_config(Algo::dpo), values, cfg.train.seeds, jobs);
  const fs::path dir = cfg.output.directory;
  RunRecord rec;
  rec.config_hash = config_hash(cfg);
  rec.git_describe = DEPO_GIT_DESCRIBE;
  rec.jobs = jobs;
  for (const auto& cell : cells) rec.curve_rows.push_back(cell.curve.rows.size());
  for (const auto& p : write_ablation_outputs(dir, cells)) rec.outputs.push_back(p.string());
  std::ifstream is(dir / "ablation_summary.csv");
  std::cout << is.rdbuf();
  rec.wall_clock_seconds = elapsed(t0);
  write_record(dir, cfg, rec, {{"d_target_values", values}});
  return kOk;
}

int cmd_verify(const Common& c, std::uint64_t seed, std::size_t trials, bool flip, const std::string& out) {
  const auto cfg = load_config(c.config, c.sets);
  VerifyOptions opt;
  opt.seed = seed;
  opt.trials = trials;
  opt.flip_c_sign = flip;
  if (trials == 0) std::cerr << "warning: trials=0, nothing to verify\n";
  const auto rep = run_verification(opt);
  const fs::path dir = out.empty() ? fs::path(cfg.output.directory) : fs::path(out);
  std::ostringstream a, b;
  write_verify_csv(a, rep);
  write_checks_csv(b, rep);
  write_file(dir / "verify.csv", a.str());
  write_file(dir / "verify_checks.csv", b.str());
  std::size_t failed = 0;
  for (const auto& r : rep.checks) failed += r.passed ? 0 : 1;
  std::cout << rep.checks.size() - failed << "/" << rep.checks.size() << " checks passed, " << rep.bound_rows.size()
            << " bound rows -> " << (dir / "verify.csv").string() << "\n";
  if (const auto f = rep.first_failure()) {
    std::cout << ">>> FAIL " << f->check << " trial " << f->trial << " seed " << f->seed << " value "
              << format_double(f->value) << " threshold " << format_double(f->threshold) << "\n";
    return kFail;
  }
  return rep.all_passed() ? kOk : kFail;
}

int cmd_plot(const std::vector<std::string>& inputs, const std::string& out, double j_star, bool has_j_star) {
  std::vector<Series> series;
  for (const auto& path : inputs) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open '" + path + "'");
    series.push_back(series_from_csv(read_csv(is, path)));
  }
  const std::string svg = render_svg(series, has_j_star ? std::optional<double>(j_star) : std::nullopt);
  if (out.empty() || out == "-") std::cout << svg;
  else write_file(out, svg);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decentralized policy optimization on tabular cooperative games"};
  app.require_subcommand(1);
  Common common;

  auto* gen = app.add_subcommand("gen", "Generate and save a game");
  add_common(gen, common);
  std::string gen_out;
  bool with_dp = false, compact = false;
  gen->add_option("--out", gen_out, "Output path (default <output.directory>/game.json)");
  gen->add_flag("--with-dp", with_dp, "Also solve the game and print j_star");
  gen->add_flag("--compact", compact, "Store generator parameters only, not the tensors");

  auto* dp = app.add_subcommand("dp", "Centralized value iteration (j_star)");
  add_common(dp, common);
  std::string game_path, dp_csv;
  double dp_tol = 0.0;
  dp->add_option("--game", game_path, "Saved game (otherwise generated from the config)");
  dp->add_option("--tol", dp_tol, "Value tolerance (default train.dp_tol)");
  dp->add_option("--csv", dp_csv, "Write v_star and the greedy joint action per state");

  auto* tr = app.add_subcommand("train", "Train every algorithm in train.algo over train.seeds");
  add_common(tr, common);
  std::size_t jobs = 1;
  tr->add_option("--game", game_path, "Saved game (otherwise generated from the config)");
  tr->add_option("--jobs", jobs, "Parallel runs")->check(CLI::PositiveNumber);

  auto* ab = app.add_subcommand("ablate", "DPO across d_target values");
  add_common(ab, common);
  std::vector<double> values;
  ab->add_option("--game", game_path, "Saved game (otherwise generated from the config)");
  ab->add_option("--values", values, "d_target values (default train.d_target_values)")->delimiter(',');
  ab->add_option("--jobs", jobs, "Parallel runs")->check(CLI::PositiveNumber);

  auto* ver = app.add_subcommand("verify", "Run the invariant suite");
  add_common(ver, common);
  std::uint64_t vseed = 0;
  std::size_t trials = 200;
  bool flip = false;
  std::string vout;
  ver->add_option("--seed", vseed, "Master seed");
  ver->add_option("--trials", trials, "Random instances for the bound checks");
  ver->add_option("--out", vout, "Output directory (default output.directory)");
  ver->add_flag("--inject-c-sign-flip", flip)->group("");

  auto* pl = app.add_subcommand("plot", "Render curves with 95% bands to SVG");
  std::vector<std::string> inputs;
  std::string plot_out;
  double j_star = 0.0;
  pl->add_option("csv", inputs, "Summary or curve CSV files")->required();
  pl->add_option("--out", plot_out, "SVG path ('-' for stdout)");
  auto* js = pl->add_option("--j-star", j_star, "Draw a horizontal rule at this return");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*gen) return cmd_gen(common, gen_out, with_dp, compact);
    if (*dp) return cmd_dp(common, game_path, dp_tol, dp_csv);
    if (*tr) return cmd_train(common, game_path, jobs);
    if (*ab) return cmd_ablate(common, game_path, values, jobs);
    if (*ver) return cmd_verify(common, vseed, trials, flip, vout);
    if (*pl) return cmd_plot(inputs, plot_out, j_star, js->count() > 0);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kFail;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFail;
  }
  return kFail;
}
