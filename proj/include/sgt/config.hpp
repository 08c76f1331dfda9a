#pragma once

// Run configuration and its flat `key = value` text form. The same text form
// is used for config files, `--set key=value` overrides and run manifests,
// so a manifest can be fed back in as a config.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "sgt/data.hpp"
#include "sgt/error.hpp"
#include "sgt/net.hpp"
#include "sgt/schedule.hpp"
#include "sgt/text.hpp"
#include "sgt/transform.hpp"

namespace sgt {

/// Where the training and test sets come from.
struct DataSpec {
  std::string source = "blobs";  ///< "blobs" or "idx"
  std::size_t classes = 10;
  std::size_t per_class = 100;
  std::size_t dim = 20;
  double spread = 1.0;
  std::uint64_t seed = 7;
  std::string train_images, train_labels, test_images, test_labels;

  friend bool operator==(const DataSpec&, const DataSpec&) = default;
};

struct TrainConfig {
  std::vector<std::size_t> hidden{64};
  Activation activation = Activation::relu;
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  ScheduleSpec schedule{ScheduleKind::warmup_cosine_cooldown, 1e-4, 0.1, 2, 30, 3, {10, 20, 25}, 0.1};
  double momentum = 0.9;
  double weight_decay = 5e-4;
  bool nesterov = true;
  bool decay_biases = true;
  TamperSpec tamper{};
  double label_smoothing = 0.0;
  std::optional<double> clip_lambda;
  std::uint64_t seed = 1;
  DataSpec data{};

  /// The schedule always spans the full run.
  ScheduleSpec effective_schedule() const {
    ScheduleSpec s = schedule;
    s.total_epochs = epochs;
    return s;
  }

  void validate() const {
    if (epochs == 0) throw ConfigError("epochs must be positive");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    for (auto h : hidden)
      if (h == 0) throw ConfigError("hidden layer widths must be positive");
    try {
      effective_schedule().validate();
      tamper.validate();
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
    if (!(label_smoothing >= 0.0 && label_smoothing < 1.0))
      throw ConfigError("label_smoothing must lie in [0, 1)");
    if (clip_lambda && !(*clip_lambda > 0.0)) throw ConfigError("clip_lambda must be positive");
    if (data.source != "blobs" && data.source != "idx")
      throw ConfigError("data source must be 'blobs' or 'idx', got '" + data.source + "'");
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

namespace detail {

template <typename T>
std::string join(const std::vector<T>& values) {
  std::string out;
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (k) out += ',';
    if constexpr (std::is_floating_point_v<T>)
      out += format_double(values[k]);
    else
      out += std::to_string(values[k]);
  }
  return out;
}

inline std::vector<std::size_t> parse_size_list(std::string_view text, std::string_view what) {
  std::vector<std::size_t> out;
  if (trim(text).empty() || trim(text) == "none") return out;
  for (const auto& part : split(trim(text), ',')) out.push_back(parse_uint(part, what));
  return out;
}

}  // namespace detail

/// Keys that are accepted in config text but carry no configuration
/// (written into manifests for provenance).
inline bool is_metadata_key(std::string_view key) {
  return key == "artifact_version" || key == "command" || key == "grid.alphas" || key == "grid.seeds";
}

/// Every key with its current value, in a fixed order.
inline std::vector<std::pair<std::string, std::string>> to_key_values(const TrainConfig& c) {
  const auto& s = c.schedule;
  return {
      {"hidden", c.hidden.empty() ? "none" : detail::join(c.hidden)},
      {"activation", to_string(c.activation)},
      {"epochs", std::to_string(c.epochs)},
      {"batch_size", std::to_string(c.batch_size)},
      {"schedule", to_string(s.kind)},
      {"base_lr", format_double(s.base_lr)},
      {"peak_lr", format_double(s.peak_lr)},
      {"warmup_epochs", std::to_string(s.warmup_epochs)},
      {"cooldown_epochs", std::to_string(s.cooldown_epochs)},
      {"step_milestones", s.step_milestones.empty() ? "none" : detail::join(s.step_milestones)},
      {"step_factor", format_double(s.step_factor)},
      {"momentum", format_double(c.momentum)},
      {"weight_decay", format_double(c.weight_decay)},
      {"nesterov", c.nesterov ? "true" : "false"},
      {"decay_biases", c.decay_biases ? "true" : "false"},
      {"alpha", format_double(c.tamper.alpha)},
      {"tamper_start_epoch", std::to_string(c.tamper.start_epoch)},
      {"label_smoothing", format_double(c.label_smoothing)},
      {"clip_lambda", c.clip_lambda ? format_double(*c.clip_lambda) : "none"},
      {"seed", std::to_string(c.seed)},
      {"data", c.data.source},
      {"data.classes", std::to_string(c.data.classes)},
      {"data.per_class", std::to_string(c.data.per_class)},
      {"data.dim", std::to_string(c.data.dim)},
      {"data.spread", format_double(c.data.spread)},
      {"data.seed", std::to_string(c.data.seed)},
      {"data.train_images", c.data.train_images},
      {"data.train_labels", c.data.train_labels},
      {"data.test_images", c.data.test_images},
      {"data.test_labels", c.data.test_labels},
  };
}

/// Applies one `key = value` setting. Unknown keys are a ConfigError.
inline void apply_setting(TrainConfig& c, std::string_view key_in, std::string_view value_in) {
  const std::string key(trim(key_in));
  const std::string value(trim(value_in));
  auto& s = c.schedule;
  try {
    if (key == "hidden") c.hidden = detail::parse_size_list(value, key);
    else if (key == "activation") c.activation = parse_activation(value);
    else if (key == "epochs") c.epochs = parse_uint(value, key);
    else if (key == "batch_size") c.batch_size = parse_uint(value, key);
    else if (key == "schedule") s.kind = parse_schedule_kind(value);
    else if (key == "base_lr") s.base_lr = parse_double(value, key);
    else if (key == "peak_lr") s.peak_lr = parse_double(value, key);
    else if (key == "warmup_epochs") s.warmup_epochs = parse_uint(value, key);
    else if (key == "cooldown_epochs") s.cooldown_epochs = parse_uint(value, key);
    else if (key == "step_milestones") s.step_milestones = detail::parse_size_list(value, key);
    else if (key == "step_factor") s.step_factor = parse_double(value, key);
    else if (key == "momentum") c.momentum = parse_double(value, key);
    else if (key == "weight_decay") c.weight_decay = parse_double(value, key);
    else if (key == "nesterov") c.nesterov = parse_bool(value, key);
    else if (key == "decay_biases") c.decay_biases = parse_bool(value, key);
    else if (key == "alpha") c.tamper.alpha = parse_double(value, key);
    else if (key == "tamper_start_epoch") c.tamper.start_epoch = parse_uint(value, key);
    else if (key == "label_smoothing") c.label_smoothing = parse_double(value, key);
    else if (key == "clip_lambda") c.clip_lambda = value == "none" || value.empty() ? std::nullopt : std::optional(parse_double(value, key));
    else if (key == "seed") c.seed = parse_uint(value, key);
    else if (key == "data") c.data.source = value;
    else if (key == "data.classes") c.data.classes = parse_uint(value, key);
    else if (key == "data.per_class") c.data.per_class = parse_uint(value, key);
    else if (key == "data.dim") c.data.dim = parse_uint(value, key);
    else if (key == "data.spread") c.data.spread = parse_double(value, key);
    else if (key == "data.seed") c.data.seed = parse_uint(value, key);
    else if (key == "data.train_images") c.data.train_images = value;
    else if (key == "data.train_labels") c.data.train_labels = value;
    else if (key == "data.test_images") c.data.test_images = value;
    else if (key == "data.test_labels") c.data.test_labels = value;
    else if (is_metadata_key(key)) return;
    else throw ConfigError("unknown configuration key '" + key + "'");
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError("key '" + key + "': " + e.what());
  }
}

/// Parses `key = value` lines onto `base`. Blank lines and lines starting
/// with '#' are ignored.
inline TrainConfig parse_config(std::string_view text, TrainConfig base = {}) {
  std::size_t line_no = 0;
  for (const auto& raw : split(text, '\n')) {
    ++line_no;
    const auto line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
    try {
      apply_setting(base, line.substr(0, eq), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return base;
}

/// Config text with every key; parse_config(format_config(c)) == c.
inline std::string format_config(const TrainConfig& c,
                                 const std::vector<std::pair<std::string, std::string>>& metadata = {}) {
  std::ostringstream os;
  for (const auto& [k, v] : metadata) os << k << " = " << v << '\n';
  for (const auto& [k, v] : to_key_values(c)) os << k << " = " << v << '\n';
  return os.str();
}

}  // namespace sgt
