#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "depo/core.hpp"

namespace depo {

enum class OptimizerKind { sgd, adam };

inline OptimizerKind parse_optimizer_kind(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw ConfigError("optimizer", "expected 'sgd' or 'adam', got '" + s + "'");
}

inline const char* to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

/// First-order optimizer over a flat parameter table. Adam keeps its moment
/// estimates across calls, so one instance should live as long as the table.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double lr, std::size_t n_params)
      : kind_(kind), lr_(lr), m_(kind == OptimizerKind::adam ? n_params : 0, 0.0),
        v_(kind == OptimizerKind::adam ? n_params : 0, 0.0) {
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr", "must be finite and non-negative");
  }

  double lr() const noexcept { return lr_; }
  OptimizerKind kind() const noexcept { return kind_; }

  /// params += step along grad (maximization).
  void ascend(std::span<double> params, std::span<const double> grad) { apply(params, grad, 1.0); }
  /// params -= step along grad (minimization).
  void descend(std::span<double> params, std::span<const double> grad) { apply(params, grad, -1.0); }

 private:
  void apply(std::span<double> params, std::span<const double> grad, double sign) {
    if (lr_ == 0.0) return;
    if (kind_ == OptimizerKind::sgd) {
      for (std::size_t k = 0; k < params.size(); ++k) params[k] += sign * lr_ * grad[k];
      return;
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      m_[k] = kBeta1 * m_[k] + (1.0 - kBeta1) * grad[k];
      v_[k] = kBeta2 * v_[k] + (1.0 - kBeta2) * grad[k] * grad[k];
      const double mhat = m_[k] / bc1;
      const double vhat = v_[k] / bc2;
      params[k] += sign * lr_ * mhat / (std::sqrt(vhat) + kEps);
    }
  }

  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  OptimizerKind kind_;
  double lr_;
  std::vector<double> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace depo
