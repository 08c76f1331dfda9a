#pragma once

// Numerical checks of the transform's properties on random inputs, plus the
// tabular views used for plotting.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <regex>
#include <string>
#include <vector>

#include "sgt/config.hpp"
#include "sgt/harness.hpp"
#include "sgt/loss.hpp"
#include "sgt/random.hpp"
#include "sgt/text.hpp"
#include "sgt/transform.hpp"

namespace sgt {

// ---------------------------------------------------------------------------
// analyze: transformed distribution and threshold per alpha

struct TransformRow {
  double alpha = 1.0;
  ProbVec transformed = ProbVec::uniform(2);
  /// Stationary threshold; nullopt at alpha = 1 where it is undefined.
  std::optional<double> threshold;
};

inline std::vector<TransformRow> analyze_transform(const ProbVec& p, std::span<const double> alphas) {
  std::vector<TransformRow> rows;
  rows.reserve(alphas.size());
  for (double a : alphas) {
    TransformRow row{a, transform_probabilities(p, a), std::nullopt};
    if (a < 1.0) row.threshold = stationary_threshold(p, a);
    rows.push_back(std::move(row));
  }
  return rows;
}

/// Header `alpha,threshold,p0,...,p{C-1}`; the threshold cell is empty at alpha = 1.
inline void write_transform_csv(std::ostream& os, const std::vector<TransformRow>& rows) {
  os << "alpha,threshold";
  const std::size_t classes = rows.empty() ? 0 : rows.front().transformed.size();
  for (std::size_t i = 0; i < classes; ++i) os << ",p" << i;
  os << '\n';
  for (const auto& r : rows) {
    os << format_double(r.alpha) << ',' << (r.threshold ? format_double(*r.threshold) : "");
    for (double v : r.transformed) os << ',' << format_double(v);
    os << '\n';
  }
}

/// A rank-ordered 10-class distribution, p_i proportional to 0.6^i.
inline ProbVec ranked_example(std::size_t classes = 10) {
  std::vector<double> v(classes);
  double total = 0.0;
  for (std::size_t i = 0; i < classes; ++i) total += v[i] = std::pow(0.6, static_cast<double>(i));
  for (auto& x : v) x /= total;
  return ProbVec(std::move(v));
}

struct LossLogitPair {
  double alpha = 1.0;
  std::uint64_t seed = 0;
  double final_train_loss = 0.0;
  double mean_logit_norm = 0.0;
};

/// Reads the per-cell metrics files written by grid_search and returns the
/// final (loss, logit norm) of each, sorted by (alpha, seed).
inline std::vector<LossLogitPair> collect_loss_logit_pairs(const std::string& cell_dir) {
  static const std::regex name_re(R"(cell_a(.+)_s(\d+)\.csv)");
  std::vector<LossLogitPair> out;
  if (!std::filesystem::is_directory(cell_dir)) throw IoError("'" + cell_dir + "' is not a directory");
  for (const auto& entry : std::filesystem::directory_iterator(cell_dir)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (!std::regex_match(name, m, name_re)) continue;
    std::ifstream in(entry.path());
    const auto records = read_metrics_csv(in);
    if (records.empty()) continue;
    out.push_back({parse_double(m[1].str(), "alpha"), parse_uint(m[2].str(), "seed"), records.back().train_loss,
                   records.back().mean_logit_norm});
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.alpha != b.alpha ? a.alpha < b.alpha : a.seed < b.seed;
  });
  return out;
}

inline void write_loss_logit_csv(std::ostream& os, const std::vector<LossLogitPair>& pairs) {
  os << "alpha,seed,final_train_loss,mean_logit_norm\n";
  for (const auto& p : pairs)
    os << format_double(p.alpha) << ',' << p.seed << ',' << format_double(p.final_train_loss) << ','
       << format_double(p.mean_logit_norm) << '\n';
}

// ---------------------------------------------------------------------------
// verify: property checks on random distributions and logits

namespace detail {

/// Permutation sorting `v` ascending; equal values keep index order.
inline std::vector<std::size_t> argsort(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  return idx;
}

/// True when `t` is a non-decreasing function of `p`: p_i < p_j implies
/// t_i <= t_j and p_i == p_j implies t_i == t_j. Distinct inputs may round
/// to the same output, but no pair is ever reversed.
inline bool order_preserved(std::span<const double> p, std::span<const double> t) {
  const auto idx = argsort(p);
  for (std::size_t k = 0; k + 1 < idx.size(); ++k) {
    const double pa = p[idx[k]], pb = p[idx[k + 1]];
    const double ta = t[idx[k]], tb = t[idx[k + 1]];
    if (pa == pb ? ta != tb : ta > tb) return false;
  }
  return true;
}

}  // namespace detail

/// True when every entry moves the way the threshold predicts: up when it
/// is below tau, down when above, unchanged when equal. Zero entries (which
/// stay at zero for alpha > 0) are skipped. A disagreement is tolerated only
/// for entries within kStationaryTolerance (relative) of tau, where the sign
/// of either difference is rounding noise.
inline bool bisection_agrees(const ProbVec& p, double alpha) {
  const ProbVec t = transform_probabilities(p, alpha);
  const double tau = stationary_threshold(p, alpha);
  auto sign = [](double x) { return (x > 0.0) - (x < 0.0); };
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    if (sign(t[i] - p[i]) == sign(tau - p[i])) continue;
    if (std::abs(tau - p[i]) <= kStationaryTolerance * p[i]) continue;
    return false;
  }
  return true;
}

/// Builds a distribution whose entry 0 equals its own stationary threshold
/// at `alpha`: p = (t, (1 - t) r) for a random simplex point r, with t found
/// by bisection on t - tau(p(t)).
inline ProbVec fixed_point_distribution(Rng& rng, std::size_t classes, double alpha) {
  const auto rest = random_simplex(rng, classes - 1);
  auto make = [&](double t) {
    std::vector<double> v(classes);
    v[0] = t;
    for (std::size_t i = 1; i < classes; ++i) v[i] = (1.0 - t) * rest[i - 1];
    return ProbVec(std::move(v));
  };
  double lo = 0.0, hi = 1.0;  // t - tau < 0 at lo, > 0 at hi
  for (int it = 0; it < 200 && hi - lo > 0.0; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid == lo || mid == hi) break;
    if (mid - stationary_threshold(make(mid), alpha) < 0.0)
      lo = mid;
    else
      hi = mid;
  }
  return make(0.5 * (lo + hi));
}

/// Central-difference gradient of f at x with step h.
template <typename F>
std::vector<double> central_difference(F&& f, std::vector<double> x, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// max_i |a_i - b_i| / max(||a||_inf, ||b||_inf): per-entry error measured
/// against the scale of the gradient.
inline double scaled_max_error(std::span<const double> a, std::span<const double> b) {
  double scale = 0.0, err = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
    err = std::max(err, std::abs(a[i] - b[i]));
  }
  return scale == 0.0 ? err : err / scale;
}

/// Scale floor for fd_error.
inline constexpr double kFdScaleFloor = 1e-3;

/// scaled_max_error with the scale floored at kFdScaleFloor. A central
/// difference of a loss L carries an absolute error near eps |L| / h + h^2
/// whatever the size of the gradient, so gradients far below the floor
/// (a saturated softmax) are compared in absolute terms.
inline double fd_error(std::span<const double> analytic, std::span<const double> numeric) {
  double scale = kFdScaleFloor, err = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
    err = std::max(err, std::abs(analytic[i] - numeric[i]));
  }
  return err / scale;
}

struct PropertyResult {
  std::string name;
  std::size_t checks = 0;
  std::size_t failures = 0;
  /// Property-specific extreme value (largest error, or smallest threshold
  /// increment for the monotonicity check).
  double worst = 0.0;
  double tolerance = 0.0;
  /// Non-blocking properties are reported but do not affect passed().
  bool blocking = true;
  std::string note;

  bool ok() const noexcept { return failures == 0; }
};

struct VerifyReport {
  std::uint64_t seed = 0;
  std::size_t trials = 0;
  std::vector<PropertyResult> properties;

  bool passed() const {
    return std::all_of(properties.begin(), properties.end(),
                       [](const PropertyResult& p) { return !p.blocking || p.ok(); });
  }

  const PropertyResult* find(std::string_view name) const {
    for (const auto& p : properties)
      if (p.name == name) return &p;
    return nullptr;
  }
};

struct VerifyOptions {
  std::vector<std::size_t> class_counts{2, 10, 100};
  /// Train the desk-scale logit-norm comparison (alpha 0.25 vs 1.0).
  bool logit_norm_trend = true;
  std::vector<std::uint64_t> trend_seeds{1, 2, 3, 4, 5};
  TrainConfig trend_config{};
};

struct LogitNormTrend {
  double tampered_mean = 0.0;    ///< alpha = 0.25
  double untampered_mean = 0.0;  ///< alpha = 1
  bool observed = false;         ///< tampered_mean > untampered_mean
};

/// Mean final test-set logit norm at alpha = 0.25 and alpha = 1.0 over `seeds`.
inline LogitNormTrend logit_norm_trend(const TrainConfig& base, std::span<const std::uint64_t> seeds) {
  const auto data = load_datasets(base.data);
  LogitNormTrend trend;
  for (auto seed : seeds) {
    TrainConfig cfg = base;
    cfg.seed = seed;
    cfg.tamper.alpha = 0.25;
    trend.tampered_mean += train(cfg, data.train, data.test).records.back().mean_logit_norm;
    cfg.tamper.alpha = 1.0;
    trend.untampered_mean += train(cfg, data.train, data.test).records.back().mean_logit_norm;
  }
  trend.tampered_mean /= static_cast<double>(seeds.size());
  trend.untampered_mean /= static_cast<double>(seeds.size());
  trend.observed = trend.tampered_mean > trend.untampered_mean;
  return trend;
}

/// Samples `trials` random distributions (and logit vectors) for each class
/// count and checks every transform and gradient property on them.
inline VerifyReport verify_claims(std::uint64_t seed, std::size_t trials, const VerifyOptions& options = {}) {
  if (trials == 0) throw InputError("verify needs at least one trial");
  VerifyReport report{seed, trials, {}};
  const auto property = [](std::string name, double tolerance) {
    PropertyResult r;
    r.name = std::move(name);
    r.tolerance = tolerance;
    return r;
  };

  PropertyResult normalization = property("normalization", 1e-12);
  PropertyResult identity = property("identity_at_alpha_1", 1e-15);
  PropertyResult uniform = property("uniform_at_alpha_0", 0.0);
  PropertyResult order = property("order_preservation", 0.0);
  PropertyResult bisection = property("threshold_bisection", kStationaryTolerance);
  PropertyResult monotone = property("threshold_monotonicity", kMonotonicityTolerance);
  monotone.worst = std::numeric_limits<double>::infinity();
  PropertyResult bounds = property("threshold_bounds", 1e-12);
  PropertyResult fixed = property("fixed_point", 1e-12);
  PropertyResult temperature = property("temperature_equivalence", 1e-10);
  PropertyResult fd_plain = property("gradient_identity_fd", 1e-6);
  PropertyResult fd_surrogate = property("tampered_gradient_surrogate_fd", 1e-6);
  PropertyResult zero_sum = property("gradient_zero_sum", 1e-12);

  const std::vector<double> alphas = make_grid(0.0, 1.0, 0.1);
  const std::vector<double> fine = make_grid(0.01, 0.99, 0.01);
  Rng rng(seed);

  auto record = [](PropertyResult& prop, bool ok, double value, bool larger_is_worse = true) {
    ++prop.checks;
    if (!ok) ++prop.failures;
    prop.worst = larger_is_worse ? std::max(prop.worst, value) : std::min(prop.worst, value);
  };

  for (std::size_t classes : options.class_counts) {
    const double inv_c = 1.0 / static_cast<double>(classes);
    for (std::size_t trial = 0; trial < trials; ++trial) {
      const ProbVec p(random_simplex(rng, classes));

      for (double a : alphas) {
        const ProbVec t = transform_probabilities(p, a);
        const double mass = std::accumulate(t.begin(), t.end(), 0.0);
        record(normalization, std::abs(mass - 1.0) < normalization.tolerance, std::abs(mass - 1.0));
        if (a == 1.0) {
          double d = 0.0;
          for (std::size_t i = 0; i < classes; ++i) d = std::max(d, std::abs(t[i] - p[i]));
          record(identity, d < identity.tolerance, d);
        }
        if (a == 0.0) {
          double d = 0.0;
          for (double v : t) d = std::max(d, std::abs(v - inv_c));
          record(uniform, d == 0.0, d);
        }
        if (a > 0.0) record(order, detail::order_preserved(p.values(), t.values()), 0.0);
        if (a < 1.0) {
          record(bisection, bisection_agrees(p, a), 0.0);
          const double tau = stationary_threshold(p, a);
          const double excess = std::max(inv_c - tau, tau - 1.0);
          record(bounds, tau >= inv_c * (1.0 - bounds.tolerance) && tau <= 1.0 + bounds.tolerance,
                 std::max(0.0, excess));
        }
      }

      const auto mono = threshold_monotonicity_check(p, fine);
      record(monotone, mono.passed, mono.min_difference, false);

      {
        const double a = uniform01(rng) * 0.98 + 0.01;
        const ProbVec q = fixed_point_distribution(rng, classes, a);
        const double d = std::abs(transform_probabilities(q, a)[0] - q[0]);
        record(fixed, d < fixed.tolerance, d);
      }

      // Logit-level checks.
      std::vector<double> z(classes);
      for (auto& v : z) v = 3.0 * standard_normal(rng);
      const LabelSpec label{static_cast<std::size_t>(uniform_index(rng, classes)), trial % 2 ? 0.1 : 0.0};
      const ProbVec q = smooth_labels(label, classes);
      const ProbVec pz = softmax(z);

      for (double a : alphas) {
        if (a == 0.0) continue;
        const ProbVec lhs = transform_probabilities(pz, a);
        std::vector<double> scaled(z);
        for (auto& v : scaled) v *= a;
        const ProbVec rhs = softmax(scaled);
        double d = 0.0;
        for (std::size_t i = 0; i < classes; ++i) d = std::max(d, std::abs(lhs[i] - rhs[i]));
        record(temperature, d < temperature.tolerance, d);
      }

      const auto plain = softmax_ce_grad(z, label, TamperSpec{1.0, 0}, false);
      const auto loss_at = [&](const std::vector<double>& x) { return cross_entropy(softmax(x).values(), q.values()); };
      const double e_plain = fd_error(plain, central_difference(loss_at, z));
      record(fd_plain, e_plain < fd_plain.tolerance, e_plain);

      const double a = alphas[1 + uniform_index(rng, alphas.size() - 2)];  // 0.1 .. 0.9
      const auto tampered = softmax_ce_grad(z, label, TamperSpec{a, 0}, true);
      const auto surrogate = [&](const std::vector<double>& x) {
        std::vector<double> s(x);
        for (auto& v : s) v *= a;
        return cross_entropy(softmax(s).values(), q.values()) / a;
      };
      const double e_sur = fd_error(tampered, central_difference(surrogate, z));
      record(fd_surrogate, e_sur < fd_surrogate.tolerance, e_sur);

      for (const auto* g : {&plain, &tampered}) {
        const double s = std::abs(std::accumulate(g->begin(), g->end(), 0.0));
        record(zero_sum, s < zero_sum.tolerance, s);
      }
    }
  }

  monotone.note = "worst = smallest successive threshold difference";
  report.properties = {normalization, identity, uniform,     order,    bisection,    monotone,
                       bounds,        fixed,    temperature, fd_plain, fd_surrogate, zero_sum};

  if (options.logit_norm_trend) {
    const auto trend = logit_norm_trend(options.trend_config, options.trend_seeds);
    PropertyResult r = property("logit_norm_trend", 0.0);
    r.checks = 1;
    r.failures = trend.observed ? 0 : 1;
    r.worst = trend.tampered_mean - trend.untampered_mean;
    r.blocking = false;
    r.note = "mean final logit norm alpha=0.25: " + format_double(trend.tampered_mean) +
             ", alpha=1: " + format_double(trend.untampered_mean);
    report.properties.push_back(r);
  }
  return report;
}

inline void write_verify_report(std::ostream& os, const VerifyReport& report) {
  os << "property,checks,failures,worst,tolerance,blocking,status,note\n";
  for (const auto& p : report.properties) {
    const char* status = p.ok() ? "pass" : (p.blocking ? "FAIL" : "flagged");
    os << p.name << ',' << p.checks << ',' << p.failures << ',' << format_double(p.worst) << ','
       << format_double(p.tolerance) << ',' << (p.blocking ? "yes" : "no") << ',' << status << ",\"" << p.note
       << "\"\n";
  }
}

}  // namespace sgt
