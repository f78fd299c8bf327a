#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "depo/harness/csv.hpp"

namespace depo::harness {

struct Series {
  std::string label;
  std::vector<double> x, mean, half_width;
};

/// Pulls a plottable series out of a summary CSV (exact_J_mean with its
/// interval) or a single-run curve CSV (exact_J, no band). Rows without an
/// exact value are skipped; if none has one the sampled discounted estimate
/// is used instead.
inline Series series_from_csv(const CsvTable& t) {
  if (t.rows.empty()) throw ParseError(t.source, 1, "no data rows");
  Series s;
  s.label = t.has_column("algo") ? t.rows.front()[t.column("algo")] : t.source;
  const std::size_t cx = t.column("env_steps");
  const bool summary = t.has_column("exact_J_mean");
  auto pick = [&](const char* mean_col, const char* ci_col) {
    s.x.clear();
    s.mean.clear();
    s.half_width.clear();
    const std::size_t cm = t.column(mean_col);
    const std::optional<std::size_t> cc = ci_col ? std::optional<std::size_t>(t.column(ci_col)) : std::nullopt;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      const auto x = t.number(r, cx);
      const auto m = t.number(r, cm);
      if (!x) throw ParseError(t.source, t.lines[r], "empty env_steps");
      if (!m) continue;
      s.x.push_back(*x);
      s.mean.push_back(*m);
      s.half_width.push_back(cc ? t.number(r, *cc).value_or(0.0) : 0.0);
    }
  };
  if (summary) {
    pick("exact_J_mean", "exact_J_ci95");
    if (s.x.empty()) pick("discounted_J_estimate_mean", "discounted_J_estimate_ci95");
  } else {
    pick("exact_J", nullptr);
    if (s.x.empty()) pick("discounted_J_estimate", nullptr);
  }
  return s;
}

namespace detail {

inline std::string fmt2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

inline std::string fmt_tick(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

inline constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

}  // namespace detail

/// Mean curves with shaded 95% bands, env steps on x, return on y, and an
/// optional dashed rule at j_star. Output depends only on the inputs.
inline std::string render_svg(const std::vector<Series>& series, std::optional<double> j_star = std::nullopt) {
  const double W = 720, H = 440, L = 70, R = 150, T = 30, B = 50;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  bool first = true;
  for (const auto& s : series)
    for (std::size_t k = 0; k < s.x.size(); ++k) {
      const double lo = s.mean[k] - s.half_width[k], hi = s.mean[k] + s.half_width[k];
      if (first) {
        x0 = x1 = s.x[k];
        y0 = lo;
        y1 = hi;
        first = false;
      }
      x0 = std::min(x0, s.x[k]);
      x1 = std::max(x1, s.x[k]);
      y0 = std::min(y0, lo);
      y1 = std::max(y1, hi);
    }
  if (j_star) {
    y0 = std::min(y0, *j_star);
    y1 = std::max(y1, *j_star);
  }
  if (x1 <= x0) x1 = x0 + 1;
  if (y1 <= y0) y1 = y0 + 1;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };

  std::string o;
  o += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + detail::fmt2(W) + "\" height=\"" + detail::fmt2(H) +
       "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  o += "<rect x=\"0\" y=\"0\" width=\"" + detail::fmt2(W) + "\" height=\"" + detail::fmt2(H) + "\" fill=\"white\"/>\n";
  o += "<line x1=\"" + detail::fmt2(L) + "\" y1=\"" + detail::fmt2(H - B) + "\" x2=\"" + detail::fmt2(W - R) +
       "\" y2=\"" + detail::fmt2(H - B) + "\" stroke=\"black\"/>\n";
  o += "<line x1=\"" + detail::fmt2(L) + "\" y1=\"" + detail::fmt2(T) + "\" x2=\"" + detail::fmt2(L) + "\" y2=\"" +
       detail::fmt2(H - B) + "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0, yv = y0 + (y1 - y0) * i / 4.0;
    o += "<text x=\"" + detail::fmt2(px(xv)) + "\" y=\"" + detail::fmt2(H - B + 16) + "\" text-anchor=\"middle\">" +
         detail::fmt_tick(xv) + "</text>\n";
    o += "<text x=\"" + detail::fmt2(L - 6) + "\" y=\"" + detail::fmt2(py(yv) + 4) + "\" text-anchor=\"end\">" +
         detail::fmt_tick(yv) + "</text>\n";
  }
  o += "<text x=\"" + detail::fmt2((L + W - R) / 2) + "\" y=\"" + detail::fmt2(H - 12) +
       "\" text-anchor=\"middle\">environment steps</text>\n";
  o += "<text x=\"16\" y=\"" + detail::fmt2((T + H - B) / 2) + "\" transform=\"rotate(-90 16 " +
       detail::fmt2((T + H - B) / 2) + ")\" text-anchor=\"middle\">return</text>\n";

  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    const char* color = detail::kPalette[i % std::size(detail::kPalette)];
    if (s.x.empty()) continue;
    std::string band;
    for (std::size_t k = 0; k < s.x.size(); ++k)
      band += detail::fmt2(px(s.x[k])) + "," + detail::fmt2(py(s.mean[k] + s.half_width[k])) + " ";
    for (std::size_t k = s.x.size(); k-- > 0;)
      band += detail::fmt2(px(s.x[k])) + "," + detail::fmt2(py(s.mean[k] - s.half_width[k])) + " ";
    band.pop_back();
    o += std::string("<polygon class=\"band\" points=\"") + band + "\" fill=\"" + color +
         "\" fill-opacity=\"0.2\" stroke=\"none\"/>\n";
    std::string line;
    for (std::size_t k = 0; k < s.x.size(); ++k)
      line += detail::fmt2(px(s.x[k])) + "," + detail::fmt2(py(s.mean[k])) + " ";
    line.pop_back();
    o += std::string("<polyline class=\"mean\" points=\"") + line + "\" fill=\"none\" stroke=\"" + color +
         "\" stroke-width=\"1.5\"/>\n";
    const double ly = T + 16.0 * static_cast<double>(i);
    o += std::string("<rect x=\"") + detail::fmt2(W - R + 12) + "\" y=\"" + detail::fmt2(ly) +
         "\" width=\"10\" height=\"10\" fill=\"" + color + "\"/>\n";
    o += "<text x=\"" + detail::fmt2(W - R + 28) + "\" y=\"" + detail::fmt2(ly + 9) + "\">" + detail::escape(s.label) +
         "</text>\n";
  }
  if (j_star) {
    o += "<line class=\"j-star\" x1=\"" + detail::fmt2(L) + "\" y1=\"" + detail::fmt2(py(*j_star)) + "\" x2=\"" +
         detail::fmt2(W - R) + "\" y2=\"" + detail::fmt2(py(*j_star)) +
         "\" stroke=\"black\" stroke-dasharray=\"6,4\"/>\n";
    o += "<text x=\"" + detail::fmt2(W - R + 4) + "\" y=\"" + detail::fmt2(py(*j_star) + 4) + "\">j*</text>\n";
  }
  o += "</svg>\n";
  return o;
}

}  // namespace depo::harness
