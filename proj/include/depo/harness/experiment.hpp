#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "depo/env.hpp"
#include "depo/harness/config.hpp"
#include "depo/harness/csv.hpp"
#include "depo/train.hpp"

namespace depo::harness {

namespace fs = std::filesystem;

/// Runs fn(0..n-1) on up to `jobs` threads. Results must be written to
/// per-index slots; the first exception by index is rethrown.
template <class F>
void parallel_for(std::size_t n, std::size_t jobs, F&& fn) {
  std::vector<std::exception_ptr> errors(n);
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t k = 0; k < n; ++k) {
      try {
        fn(k);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < jobs; ++t)
      pool.emplace_back([&] {
        for (std::size_t k; (k = next.fetch_add(1)) < n;) {
          try {
            fn(k);
          } catch (...) {
            errors[k] = std::current_exception();
          }
        }
      });
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// One curve per seed, in the order of `seeds`.
inline std::vector<LearningCurve> run_seeds(const StochasticGame& game, const TrainConfig& cfg,
                                            const std::vector<std::uint64_t>& seeds, std::size_t jobs = 1) {
  std::vector<LearningCurve> out(seeds.size());
  parallel_for(seeds.size(), jobs, [&](std::size_t k) { out[k] = train(game, cfg, seeds[k]); });
  return out;
}

inline void sort_curves(std::vector<LearningCurve>& curves) {
  std::stable_sort(curves.begin(), curves.end(), [](const LearningCurve& a, const LearningCurve& b) {
    if (a.algo != b.algo) return a.algo < b.algo;
    return a.seed < b.seed;
  });
}

inline void write_file(const fs::path& p, const std::string& content) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write '" + p.string() + "'");
  os << content;
  if (!os) throw std::runtime_error("write failed for '" + p.string() + "'");
}

/// Writes <dir>/<algo>/seed_<s>.csv per run, <dir>/curves_<algo>.csv with all
/// runs merged in (seed, iteration) order, and <dir>/summary_<algo>.csv.
inline std::vector<fs::path> write_training_outputs(const fs::path& dir, std::vector<LearningCurve> curves) {
  sort_curves(curves);
  std::vector<fs::path> written;
  std::size_t start = 0;
  while (start < curves.size()) {
    std::size_t end = start;
    while (end < curves.size() && curves[end].algo == curves[start].algo) ++end;
    const std::string algo = to_string(curves[start].algo);
    std::ostringstream merged;
    merged << curve_header(curves[start].algo, curves[start].n_agents) << '\n';
    for (std::size_t k = start; k < end; ++k) {
      std::ostringstream one;
      write_curve_csv(one, curves[k]);
      const fs::path p = dir / algo / ("seed_" + std::to_string(curves[k].seed) + ".csv");
      write_file(p, one.str());
      written.push_back(p);
      write_curve_rows(merged, curves[k]);
    }
    write_file(dir / ("curves_" + algo + ".csv"), merged.str());
    written.push_back(dir / ("curves_" + algo + ".csv"));
    std::ostringstream summary;
    write_summary_csv(summary, std::vector<LearningCurve>(curves.begin() + start, curves.begin() + end));
    write_file(dir / ("summary_" + algo + ".csv"), summary.str());
    written.push_back(dir / ("summary_" + algo + ".csv"));
    start = end;
  }
  return written;
}

struct AblationCell {
  double d_target = 0.0;
  std::uint64_t seed = 0;
  LearningCurve curve;
};

/// One DPO run per (d_target, seed), cells ordered value-major.
inline std::vector<AblationCell> run_ablation(const StochasticGame& game, const TrainConfig& base,
                                              const std::vector<double>& values,
                                              const std::vector<std::uint64_t>& seeds, std::size_t jobs = 1) {
  std::vector<AblationCell> cells(values.size() * seeds.size());
  for (std::size_t v = 0; v < values.size(); ++v)
    for (std::size_t k = 0; k < seeds.size(); ++k) {
      cells[v * seeds.size() + k].d_target = values[v];
      cells[v * seeds.size() + k].seed = seeds[k];
    }
  parallel_for(cells.size(), jobs, [&](std::size_t k) {
    TrainConfig cfg = base;
    cfg.algo = Algo::dpo;
    cfg.adaptive.d_target = cells[k].d_target;
    cells[k].curve = train(game, cfg, cells[k].seed);
  });
  return cells;
}

inline constexpr const char* kAblationHeader = "d_target,seed,time_avg_kl,final_exact_J";
inline constexpr const char* kAblationSummaryHeader =
    "d_target,n_seeds,time_avg_kl_mean,time_avg_kl_ci95,final_exact_J_mean,final_exact_J_ci95";

/// Writes ablation.csv, ablation_summary.csv and the per-cell curves under
/// <dir>/ablation/d_target_<v>/.
inline std::vector<fs::path> write_ablation_outputs(const fs::path& dir, const std::vector<AblationCell>& cells) {
  std::vector<fs::path> written;
  std::ostringstream flat, summary;
  flat << kAblationHeader << '\n';
  summary << kAblationSummaryHeader << '\n';
  std::size_t start = 0;
  while (start < cells.size()) {
    std::size_t end = start;
    while (end < cells.size() && cells[end].d_target == cells[start].d_target) ++end;
    std::vector<double> kls, finals;
    for (std::size_t k = start; k < end; ++k) {
      const auto& c = cells[k];
      const double kl = time_averaged_kl(c.curve);
      const auto fj = final_exact_j(c.curve);
      kls.push_back(kl);
      if (fj) finals.push_back(*fj);
      flat << format_double(c.d_target) << ',' << c.seed << ',' << format_double(kl) << ','
           << (fj ? format_double(*fj) : std::string()) << '\n';
      std::ostringstream one;
      write_curve_csv(one, c.curve);
      const fs::path p = dir / "ablation" / ("d_target_" + format_double(c.d_target)) /
                         ("seed_" + std::to_string(c.seed) + ".csv");
      write_file(p, one.str());
      written.push_back(p);
    }
    const auto k = mean_ci(kls), f = mean_ci(finals);
    summary << format_double(cells[start].d_target) << ',' << (end - start) << ',' << format_double(k.mean) << ','
            << format_double(k.ci95) << ',';
    if (f.n) summary << format_double(f.mean) << ',' << format_double(f.ci95);
    else summary << ',';
    summary << '\n';
    start = end;
  }
  write_file(dir / "ablation.csv", flat.str());
  write_file(dir / "ablation_summary.csv", summary.str());
  written.push_back(dir / "ablation.csv");
  written.push_back(dir / "ablation_summary.csv");
  return written;
}

/// Provenance written next to the CSVs. Wall-clock time lives only here so
/// the CSVs stay byte-identical across reruns.
struct RunRecord {
  std::string config_hash;
  std::string git_describe;
  double wall_clock_seconds = 0.0;
  std::size_t jobs = 1;
  std::vector<std::string> outputs;
  std::vector<std::size_t> curve_rows;

  nlohmann::json to_json(const ExperimentConfig& cfg) const {
    nlohmann::json j;
    j["config_hash"] = config_hash;
    j["git_describe"] = git_describe;
    j["wall_clock_seconds"] = wall_clock_seconds;
    j["jobs"] = jobs;
    j["outputs"] = outputs;
    j["curve_rows"] = curve_rows;
    j["config"] = harness::to_json(cfg);
    return j;
  }
};

}  // namespace depo::harness
