#pragma once

#include <charconv>
#include <cmath>
#include <cstddef>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "depo/core.hpp"
#include "depo/train.hpp"

namespace depo::harness {

/// Malformed CSV input; the message carries "name:line:".
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : std::runtime_error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

inline std::string curve_header(Algo algo, std::size_t n_agents) {
  std::string h = "algo,seed,iteration,env_steps,mean_return_undiscounted,discounted_J_estimate,exact_J";
  for (std::size_t i = 0; i < n_agents; ++i) h += ",kl_" + std::to_string(i);
  if (uses_penalty(algo)) {
    for (std::size_t i = 0; i < n_agents; ++i) h += ",beta1_" + std::to_string(i);
    for (std::size_t i = 0; i < n_agents; ++i) h += ",beta2_" + std::to_string(i);
  }
  return h;
}

/// exact_J is left empty on iterations where it was not evaluated.
inline void write_curve_rows(std::ostream& os, const LearningCurve& c) {
  for (const auto& r : c.rows) {
    os << to_string(c.algo) << ',' << c.seed << ',' << r.iteration << ',' << r.env_steps << ','
       << format_double(r.mean_return_undiscounted) << ',' << format_double(r.discounted_j_estimate) << ',';
    if (r.exact_j) os << format_double(*r.exact_j);
    for (double v : r.kl) os << ',' << format_double(v);
    if (uses_penalty(c.algo)) {
      for (double v : r.beta1) os << ',' << format_double(v);
      for (double v : r.beta2) os << ',' << format_double(v);
    }
    os << '\n';
  }
}

inline void write_curve_csv(std::ostream& os, const LearningCurve& c) {
  os << curve_header(c.algo, c.n_agents) << '\n';
  write_curve_rows(os, c);
}

struct MeanCi {
  double mean = 0.0;
  double ci95 = 0.0;  // half-width, 1.96 sd / sqrt(n); 0 for n < 2
  std::size_t n = 0;
};

inline MeanCi mean_ci(const std::vector<double>& x) {
  MeanCi out;
  out.n = x.size();
  if (x.empty()) return out;
  for (double v : x) out.mean += v;
  out.mean /= static_cast<double>(x.size());
  if (x.size() < 2) return out;
  double ss = 0.0;
  for (double v : x) ss += (v - out.mean) * (v - out.mean);
  const double sd = std::sqrt(ss / static_cast<double>(x.size() - 1));
  out.ci95 = 1.96 * sd / std::sqrt(static_cast<double>(x.size()));
  return out;
}

inline constexpr const char* kSummaryHeader =
    "algo,iteration,env_steps,n_seeds,discounted_J_estimate_mean,discounted_J_estimate_ci95,"
    "mean_return_undiscounted_mean,mean_return_undiscounted_ci95,exact_J_mean,exact_J_ci95,kl_mean";

/// Per-iteration mean and 95% interval across seeds. All curves must share
/// the algorithm and iteration count.
inline void write_summary_csv(std::ostream& os, const std::vector<LearningCurve>& curves) {
  os << kSummaryHeader << '\n';
  if (curves.empty()) return;
  const std::size_t rows = curves.front().rows.size();
  for (const auto& c : curves)
    if (c.rows.size() != rows || c.algo != curves.front().algo)
      throw std::invalid_argument("summary: curves differ in algorithm or length");
  for (std::size_t k = 0; k < rows; ++k) {
    std::vector<double> disc, ret, exact, kl;
    for (const auto& c : curves) {
      const auto& r = c.rows[k];
      disc.push_back(r.discounted_j_estimate);
      ret.push_back(r.mean_return_undiscounted);
      if (r.exact_j) exact.push_back(*r.exact_j);
      double m = 0.0;
      for (double v : r.kl) m += v;
      kl.push_back(r.kl.empty() ? 0.0 : m / static_cast<double>(r.kl.size()));
    }
    const auto& r0 = curves.front().rows[k];
    const auto d = mean_ci(disc), u = mean_ci(ret), e = mean_ci(exact), q = mean_ci(kl);
    os << to_string(curves.front().algo) << ',' << r0.iteration << ',' << r0.env_steps << ',' << curves.size() << ','
       << format_double(d.mean) << ',' << format_double(d.ci95) << ',' << format_double(u.mean) << ','
       << format_double(u.ci95) << ',';
    if (e.n == curves.size()) os << format_double(e.mean) << ',' << format_double(e.ci95);
    else os << ',';
    os << ',' << format_double(q.mean) << '\n';
  }
}

/// Realized KL averaged over iterations and agents.
inline double time_averaged_kl(const LearningCurve& c) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : c.rows)
    for (double v : r.kl) {
      sum += v;
      ++n;
    }
  return n ? sum / static_cast<double>(n) : 0.0;
}

inline std::optional<double> final_exact_j(const LearningCurve& c) {
  for (auto it = c.rows.rbegin(); it != c.rows.rend(); ++it)
    if (it->exact_j) return it->exact_j;
  return std::nullopt;
}

struct CsvTable {
  std::string source;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> lines;  // 1-based source line of each row

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw ParseError(source, 1, "missing column '" + name + "'");
  }
  bool has_column(const std::string& name) const {
    for (const auto& h : header)
      if (h == name) return true;
    return false;
  }

  /// Numeric cell; empty cells give nullopt, anything unparsable throws.
  std::optional<double> number(std::size_t row, std::size_t col) const {
    const std::string& cell = rows[row][col];
    if (cell.empty()) return std::nullopt;
    double v = 0.0;
    const auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (ec != std::errc() || p != cell.data() + cell.size())
      throw ParseError(source, lines[row], "'" + cell + "' is not a number in column '" + header[col] + "'");
    return v;
  }
};

/// Plain comma-separated values without quoting. Blank lines are skipped;
/// every row must have as many cells as the header.
inline CsvTable read_csv(std::istream& is, const std::string& source) {
  CsvTable t;
  t.source = source;
  std::string line;
  std::size_t lineno = 0;
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
      const auto c = s.find(',', start);
      out.push_back(s.substr(start, c == std::string::npos ? std::string::npos : c - start));
      if (c == std::string::npos) break;
      start = c + 1;
    }
    return out;
  };
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (t.header.empty()) {
      t.header = split(line);
      continue;
    }
    auto cells = split(line);
    if (cells.size() != t.header.size())
      throw ParseError(source, lineno,
                       "expected " + std::to_string(t.header.size()) + " fields, found " + std::to_string(cells.size()));
    t.rows.push_back(std::move(cells));
    t.lines.push_back(lineno);
  }
  if (t.header.empty()) throw ParseError(source, std::max<std::size_t>(lineno, 1), "empty CSV");
  return t;
}

}  // namespace depo::harness
