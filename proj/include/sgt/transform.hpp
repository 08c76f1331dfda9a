#pragma once

// Power transform of a probability vector, p'_i = p_i^a / sum_j p_j^a, and
// the analytic quantities around it: the stationary threshold
// tau(a) = (sum_j p_j^a)^(1/(a-1)), the rising/falling partition it induces,
// and a grid check that tau is non-decreasing in a.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sgt/error.hpp"

namespace sgt {

/// A distribution over C >= 2 classes. Construction checks that entries are
/// finite, non-negative and sum to 1 within kSimplexTolerance, then divides
/// by the observed sum so downstream arithmetic starts from a normalized
/// vector.
class ProbVec {
public:
  static constexpr double kSimplexTolerance = 1e-9;

  explicit ProbVec(std::vector<double> values) : values_(std::move(values)) {
    if (values_.size() < 2) throw InputError("ProbVec needs at least 2 entries");
    double total = 0.0;
    for (std::size_t i = 0; i < values_.size(); ++i) {
      const double v = values_[i];
      if (std::isnan(v)) throw InputError("ProbVec entry " + std::to_string(i) + " is NaN");
      if (!std::isfinite(v) || v < 0.0)
        throw InputError("ProbVec entry " + std::to_string(i) + " is negative or infinite");
      total += v;
    }
    if (std::abs(total - 1.0) > kSimplexTolerance)
      throw InputError("ProbVec entries sum to " + std::to_string(total) + ", not 1");
    if (total != 1.0)
      for (auto& v : values_) v /= total;
  }

  ProbVec(std::initializer_list<double> values) : ProbVec(std::vector<double>(values)) {}

  static ProbVec uniform(std::size_t classes) {
    if (classes < 2) throw InputError("ProbVec needs at least 2 entries");
    return ProbVec(Unchecked{}, std::vector<double>(classes, 1.0 / static_cast<double>(classes)));
  }

  std::size_t size() const noexcept { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  std::span<const double> values() const noexcept { return values_; }
  const std::vector<double>& vector() const noexcept { return values_; }

  auto begin() const noexcept { return values_.begin(); }
  auto end() const noexcept { return values_.end(); }

private:
  struct Unchecked {};
  ProbVec(Unchecked, std::vector<double> values) : values_(std::move(values)) {}

  std::vector<double> values_;

  friend class ProbVecBuilder;
};

/// Escape hatch for operations whose output is a distribution by
/// construction (softmax, label smoothing). Not part of the public surface.
class ProbVecBuilder {
public:
  static ProbVec adopt(std::vector<double> values) {
    return ProbVec(ProbVec::Unchecked{}, std::move(values));
  }
};

/// Tampering configuration: the transform exponent and the first epoch at
/// which the transform is applied to the backward pass.
struct TamperSpec {
  double alpha = 1.0;
  std::size_t start_epoch = 0;

  void validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0))
      throw DomainError("tamper alpha must lie in [0, 1], got " + std::to_string(alpha));
  }

  /// True when the transform changes anything at the given epoch.
  bool active_at(std::size_t epoch) const noexcept { return alpha < 1.0 && epoch >= start_epoch; }

  friend bool operator==(const TamperSpec&, const TamperSpec&) = default;
};

namespace detail {

inline void check_alpha_closed(double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw DomainError("alpha must lie in [0, 1], got " + std::to_string(alpha));
}

inline void check_alpha_threshold(double alpha) {
  if (alpha == 1.0)
    throw DomainError("stationary threshold is undefined at alpha = 1 (every point is stationary)");
  if (!(alpha >= 0.0 && alpha < 1.0))
    throw DomainError("alpha must lie in [0, 1), got " + std::to_string(alpha));
}

}  // namespace detail

/// In-place kernel behind transform_probabilities. `p` must already be a
/// distribution; only NaN is checked here.
///
/// alpha = 0 yields exactly 1/C everywhere, zero entries included (the
/// alpha -> 0 limit, not 0^0). For alpha > 0 zero entries stay zero.
inline void transform_in_place(std::span<double> p, double alpha) {
  detail::check_alpha_closed(alpha);
  for (double v : p)
    if (std::isnan(v)) throw InputError("probability vector contains NaN");
  if (alpha == 1.0) return;
  if (alpha == 0.0) {
    std::fill(p.begin(), p.end(), 1.0 / static_cast<double>(p.size()));
    return;
  }
  double total = 0.0;
  for (auto& v : p) {
    v = v > 0.0 ? std::exp(alpha * std::log(v)) : 0.0;
    total += v;
  }
  for (auto& v : p) v /= total;
}

inline ProbVec transform_probabilities(const ProbVec& p, double alpha) {
  std::vector<double> out = p.vector();
  transform_in_place(out, alpha);
  return ProbVecBuilder::adopt(std::move(out));
}

/// Natural log of the stationary threshold. Near alpha = 1 the sum
/// S = sum p^a is 1 + O(1 - a), so S - 1 = sum p (p^(a-1) - 1) is
/// accumulated directly with expm1 and S is never formed. That identity
/// takes sum p = 1 exactly, which makes the result the threshold of p as a
/// distribution; the last-ulp normalization error of the stored entries
/// would otherwise be amplified by 1 / (1 - a).
inline double log_stationary_threshold(const ProbVec& p, double alpha) {
  detail::check_alpha_threshold(alpha);
  if (alpha == 0.0) return -std::log(static_cast<double>(p.size()));
  double excess = 0.0;
  for (double v : p)
    if (v > 0.0) excess += v * std::expm1((alpha - 1.0) * std::log(v));
  return std::log1p(excess) / (alpha - 1.0);
}

inline double stationary_threshold(const ProbVec& p, double alpha) {
  if (alpha == 0.0) {
    detail::check_alpha_threshold(alpha);
    return 1.0 / static_cast<double>(p.size());
  }
  return std::exp(log_stationary_threshold(p, alpha));
}

/// Entries within this relative distance of the threshold count as
/// stationary and are placed in the rising set.
inline constexpr double kStationaryTolerance = 1e-12;

struct ThresholdPartition {
  std::vector<std::size_t> rising;   ///< p_i <= tau; p'_i >= p_i
  std::vector<std::size_t> falling;  ///< p_i > tau; p'_i < p_i
};

inline ThresholdPartition threshold_partition(const ProbVec& p, double alpha) {
  const double log_tau = log_stationary_threshold(p, alpha);
  ThresholdPartition part;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool falls = p[i] > 0.0 && std::log(p[i]) - log_tau > kStationaryTolerance;
    (falls ? part.falling : part.rising).push_back(i);
  }
  return part;
}

struct MonotonicityReport {
  std::vector<double> alphas;
  std::vector<double> thresholds;
  /// Smallest tau(a_{k+1}) - tau(a_k); +inf for a single-point grid.
  double min_difference = std::numeric_limits<double>::infinity();
  /// Index k of the pair achieving min_difference.
  std::size_t worst_index = 0;
  bool passed = true;
};

inline constexpr double kMonotonicityTolerance = 1e-10;

inline MonotonicityReport threshold_monotonicity_check(const ProbVec& p,
                                                       std::span<const double> alpha_grid) {
  if (alpha_grid.empty()) throw InputError("alpha grid is empty");
  for (std::size_t k = 0; k < alpha_grid.size(); ++k) {
    const double a = alpha_grid[k];
    if (!(a >= 0.0 && a < 1.0))
      throw InputError("alpha grid values must lie in [0, 1), got " + std::to_string(a));
    if (k > 0 && !(a > alpha_grid[k - 1]))
      throw InputError("alpha grid must be strictly increasing");
  }
  MonotonicityReport report;
  report.alphas.assign(alpha_grid.begin(), alpha_grid.end());
  report.thresholds.reserve(alpha_grid.size());
  for (double a : alpha_grid) report.thresholds.push_back(stationary_threshold(p, a));
  for (std::size_t k = 0; k + 1 < report.thresholds.size(); ++k) {
    const double d = report.thresholds[k + 1] - report.thresholds[k];
    if (d < report.min_difference) {
      report.min_difference = d;
      report.worst_index = k;
    }
  }
  report.passed = report.min_difference >= -kMonotonicityTolerance;
  return report;
}

/// Evenly spaced grid start, start + step, ..., up to and including `stop`
/// when step divides the span. Values are rounded to 12 decimals so that
/// 0.2 + 2 * 0.05 is stored as the double nearest 0.3.
inline std::vector<double> make_grid(double start, double stop, double step) {
  if (!(step > 0.0)) throw InputError("grid step must be positive");
  if (!(stop >= start)) throw InputError("grid stop must not precede start");
  std::vector<double> grid;
  const auto count = static_cast<std::size_t>(std::floor((stop - start) / step + 1e-9));
  for (std::size_t k = 0; k <= count; ++k) {
    const double v = start + static_cast<double>(k) * step;
    grid.push_back(std::round(v * 1e12) / 1e12);
  }
  return grid;
}

}  // namespace sgt
