#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "sgt/error.hpp"

namespace sgt {

enum class ScheduleKind { warmup_cosine_cooldown, step };

inline const char* to_string(ScheduleKind k) {
  return k == ScheduleKind::step ? "step" : "warmup_cosine_cooldown";
}

inline ScheduleKind parse_schedule_kind(const std::string& s) {
  if (s == "warmup_cosine_cooldown" || s == "cosine") return ScheduleKind::warmup_cosine_cooldown;
  if (s == "step") return ScheduleKind::step;
  throw InputError("unknown schedule kind '" + s + "'");
}

/// Learning-rate recipe over fractional epochs t in [0, total_epochs):
///
///   [0, warmup)                       linear base_lr -> peak_lr
///   [warmup, total - cooldown)        cosine: peak_lr -> base_lr (cosine kind)
///                                     peak_lr / (1/step_factor)^k (step kind, k
///                                     milestones passed)
///   [total - cooldown, total)         constant base_lr
struct ScheduleSpec {
  ScheduleKind kind = ScheduleKind::warmup_cosine_cooldown;
  double base_lr = 4e-4;
  double peak_lr = 0.4;
  std::size_t warmup_epochs = 2;
  std::size_t total_epochs = 50;
  std::size_t cooldown_epochs = 4;
  std::vector<std::size_t> step_milestones{30, 60, 90};
  double step_factor = 0.1;

  void validate() const {
    if (total_epochs == 0) throw InputError("schedule needs at least one epoch");
    if (warmup_epochs + cooldown_epochs > total_epochs)
      throw InputError("warmup (" + std::to_string(warmup_epochs) + ") + cooldown (" +
                       std::to_string(cooldown_epochs) + ") exceed total epochs (" +
                       std::to_string(total_epochs) + ")");
    if (!(base_lr > 0.0) || !(peak_lr >= base_lr))
      throw InputError("schedule requires 0 < base_lr <= peak_lr");
    if (!(step_factor > 0.0 && step_factor < 1.0)) throw InputError("step_factor must lie in (0, 1)");
    for (std::size_t k = 1; k < step_milestones.size(); ++k)
      if (step_milestones[k] <= step_milestones[k - 1])
        throw InputError("step milestones must be strictly increasing");
  }

  friend bool operator==(const ScheduleSpec&, const ScheduleSpec&) = default;
};

/// Learning rate at fractional epoch `progress`.
inline double lr_at(const ScheduleSpec& spec, double progress) {
  spec.validate();
  const auto total = static_cast<double>(spec.total_epochs);
  if (!(progress >= 0.0 && progress < total))
    throw InputError("schedule progress " + std::to_string(progress) + " outside [0, " +
                     std::to_string(spec.total_epochs) + ")");
  const auto warmup = static_cast<double>(spec.warmup_epochs);
  const double decay_end = total - static_cast<double>(spec.cooldown_epochs);
  const double span = spec.peak_lr - spec.base_lr;

  if (progress < warmup) return spec.base_lr + span * (progress / warmup);
  if (progress >= decay_end) return spec.base_lr;

  if (spec.kind == ScheduleKind::step) {
    const double divisor = 1.0 / spec.step_factor;
    double lr = spec.peak_lr;
    for (std::size_t m : spec.step_milestones)
      if (progress >= static_cast<double>(m)) lr /= divisor;
    return lr;
  }
  // peak - span * (1 - cos)/2 is exactly peak_lr at the warmup boundary.
  const double theta = std::numbers::pi * (progress - warmup) / (decay_end - warmup);
  return spec.peak_lr - span * 0.5 * (1.0 - std::cos(theta));
}

}  // namespace sgt
