#pragma once

// Softmax, cross-entropy and the logit gradient dL/dz = p' - q, where p' is
// the power-transformed softmax output when tampering is active and plain p
// otherwise. The forward quantities (p, loss) never see the transform.
// Label smoothing and norm clipping live here as the baselines the
// tampered gradient is compared against.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "sgt/error.hpp"
#include "sgt/transform.hpp"

namespace sgt {

/// Class index plus label-smoothing strength; epsilon = 0 is one-hot.
struct LabelSpec {
  std::size_t target = 0;
  double epsilon = 0.0;
};

/// Probabilities are clamped to this before the log in cross_entropy.
inline constexpr double kLogClamp = 1e-30;

namespace detail {

inline void check_finite(std::span<const double> z, const char* what) {
  for (std::size_t i = 0; i < z.size(); ++i)
    if (!std::isfinite(z[i]))
      throw InputError(std::string(what) + " entry " + std::to_string(i) + " is not finite");
}

inline void check_label(const LabelSpec& label, std::size_t classes) {
  if (label.target >= classes)
    throw InputError("label " + std::to_string(label.target) + " out of range for " +
                     std::to_string(classes) + " classes");
  if (!(label.epsilon >= 0.0 && label.epsilon < 1.0))
    throw DomainError("label smoothing epsilon must lie in [0, 1), got " +
                      std::to_string(label.epsilon));
}

}  // namespace detail

/// Writes softmax(z) into `out` using exp(z - max z). No validation.
inline void softmax_into(std::span<const double> z, std::span<double> out) {
  const double top = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = std::exp(z[i] - top);
    total += out[i];
  }
  for (auto& v : out) v /= total;
}

inline ProbVec softmax(std::span<const double> z) {
  if (z.size() < 2) throw InputError("softmax needs at least 2 logits");
  detail::check_finite(z, "logit");
  std::vector<double> p(z.size());
  softmax_into(z, p);
  return ProbVecBuilder::adopt(std::move(p));
}

/// q'_y = 1 - eps, q'_i = eps / (C - 1) elsewhere.
inline ProbVec smooth_labels(const LabelSpec& label, std::size_t classes) {
  if (classes < 2) throw InputError("label smoothing needs at least 2 classes");
  detail::check_label(label, classes);
  std::vector<double> q(classes, label.epsilon / static_cast<double>(classes - 1));
  q[label.target] = 1.0 - label.epsilon;
  return ProbVecBuilder::adopt(std::move(q));
}

/// -sum_i q_i log max(p_i, kLogClamp). Terms with q_i = 0 are skipped.
inline double cross_entropy(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw InputError("cross_entropy: size mismatch");
  double loss = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (q[i] > 0.0) loss -= q[i] * std::log(std::max(p[i], kLogClamp));
  return loss;
}

inline double cross_entropy(const ProbVec& p, const LabelSpec& label) {
  detail::check_label(label, p.size());
  if (label.epsilon == 0.0) return -std::log(std::max(p[label.target], kLogClamp));
  return cross_entropy(p.values(), smooth_labels(label, p.size()).values());
}

/// Row kernel: out = softmax(z) transformed by `alpha` (if alpha < 1) minus
/// the smoothed label. `probs` receives the untransformed softmax output.
/// Returns the untampered cross-entropy of that row.
inline double softmax_ce_grad_into(std::span<const double> z, const LabelSpec& label, double alpha,
                                   std::span<double> probs, std::span<double> out) {
  const std::size_t classes = z.size();
  softmax_into(z, probs);
  double loss;
  if (label.epsilon == 0.0) {
    loss = -std::log(std::max(probs[label.target], kLogClamp));
  } else {
    const double off = label.epsilon / static_cast<double>(classes - 1);
    loss = 0.0;
    for (std::size_t i = 0; i < classes; ++i) {
      const double q = i == label.target ? 1.0 - label.epsilon : off;
      if (q > 0.0) loss -= q * std::log(std::max(probs[i], kLogClamp));
    }
  }
  std::copy(probs.begin(), probs.end(), out.begin());
  if (alpha < 1.0) transform_in_place(out, alpha);
  const double off = label.epsilon / static_cast<double>(classes - 1);
  for (std::size_t i = 0; i < classes; ++i) out[i] -= i == label.target ? 1.0 - label.epsilon : off;
  return loss;
}

/// dL/dz for one example. With tampering inactive (or alpha = 1) this is the
/// exact cross-entropy gradient softmax(z) - q; otherwise
/// transform(softmax(z), alpha) - q.
inline std::vector<double> softmax_ce_grad(std::span<const double> z, const LabelSpec& label,
                                           const TamperSpec& tamper, bool tamper_active) {
  if (z.size() < 2) throw InputError("softmax needs at least 2 logits");
  detail::check_finite(z, "logit");
  detail::check_label(label, z.size());
  tamper.validate();
  std::vector<double> probs(z.size());
  std::vector<double> grad(z.size());
  softmax_ce_grad_into(z, label, tamper_active ? tamper.alpha : 1.0, probs, grad);
  return grad;
}

inline double l2_norm(std::span<const double> g) {
  double s = 0.0;
  for (double v : g) s += v * v;
  return std::sqrt(s);
}

/// Scale factor that clip_gradient applies for a gradient of norm `norm`.
inline double clip_scale(double norm, double lambda) {
  if (!(lambda > 0.0)) throw DomainError("clip threshold must be positive, got " + std::to_string(lambda));
  return norm > lambda ? lambda / norm : 1.0;
}

/// g -> lambda g / ||g|| when ||g|| > lambda, unchanged otherwise.
inline std::vector<double> clip_gradient(std::span<const double> g, double lambda) {
  const double scale = clip_scale(l2_norm(g), lambda);
  std::vector<double> out(g.begin(), g.end());
  if (scale != 1.0)
    for (auto& v : out) v *= scale;
  return out;
}

}  // namespace sgt
