#pragma once

// Training loop, per-epoch metrics, alpha grid search and their CSV forms.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "sgt/config.hpp"
#include "sgt/data.hpp"
#include "sgt/error.hpp"
#include "sgt/loss.hpp"
#include "sgt/net.hpp"
#include "sgt/random.hpp"
#include "sgt/schedule.hpp"
#include "sgt/text.hpp"

namespace sgt {

struct MetricsRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double test_acc = 0.0;
  double gap = 0.0;  ///< train_acc - test_acc
  double mean_logit_norm = 0.0;
  double lr = 0.0;  ///< learning rate at the start of the epoch

  friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

struct Evaluation {
  double loss = 0.0;      ///< mean untampered cross-entropy against (smoothed) labels
  double accuracy = 0.0;  ///< top-1, ties resolved to the lowest index
  double mean_logit_norm = 0.0;
};

/// Index of the largest entry; the first one wins ties.
inline std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

inline Evaluation evaluate(const DenseNet& net, const Dataset& ds, double label_smoothing = 0.0,
                           std::size_t chunk = 256) {
  Evaluation ev;
  std::vector<double> probs(net.output_dim());
  std::size_t correct = 0;
  for (std::size_t start = 0; start < ds.size(); start += chunk) {
    const std::size_t count = std::min(chunk, ds.size() - start);
    Matrix batch(count, ds.dim());
    std::copy_n(ds.inputs.data.begin() + static_cast<std::ptrdiff_t>(start * ds.dim()), count * ds.dim(),
                batch.data.begin());
    const Matrix logits = predict(net, batch);
    for (std::size_t n = 0; n < count; ++n) {
      const auto z = logits.row(n);
      const std::size_t y = ds.labels[start + n];
      softmax_into(z, probs);
      if (label_smoothing == 0.0) {
        ev.loss -= std::log(std::max(probs[y], kLogClamp));
      } else {
        const double off = label_smoothing / static_cast<double>(probs.size() - 1);
        for (std::size_t i = 0; i < probs.size(); ++i)
          ev.loss -= (i == y ? 1.0 - label_smoothing : off) * std::log(std::max(probs[i], kLogClamp));
      }
      if (argmax(z) == y) ++correct;
      ev.mean_logit_norm += l2_norm(z);
    }
  }
  const auto n = static_cast<double>(ds.size());
  ev.loss /= n;
  ev.accuracy = static_cast<double>(correct) / n;
  ev.mean_logit_norm /= n;
  return ev;
}

struct TrainResult {
  DenseNet net;
  std::vector<MetricsRecord> records;
};

using EpochCallback = std::function<void(const MetricsRecord&)>;

/// Layer widths for a config on a given dataset: {D, hidden..., C}.
inline std::vector<std::size_t> layer_widths(const TrainConfig& config, const Dataset& train) {
  std::vector<std::size_t> widths{train.dim()};
  widths.insert(widths.end(), config.hidden.begin(), config.hidden.end());
  widths.push_back(train.classes);
  return widths;
}

/// Runs config.epochs epochs of minibatch SGD. Each epoch reshuffles the
/// training set, takes ceil(N / batch_size) steps with the learning rate
/// evaluated at the fractional epoch of each step, then evaluates both
/// splits. The logit gradient is tampered iff epoch >= tamper.start_epoch
/// and alpha < 1.
///
/// Throws DivergenceError naming the epoch and step if a batch loss is not
/// finite.
inline TrainResult train(const TrainConfig& config, const Dataset& train_set, const Dataset& test_set,
                         const EpochCallback& on_epoch = {}) {
  config.validate();
  train_set.validate();
  test_set.validate();
  if (train_set.classes != test_set.classes || train_set.dim() != test_set.dim())
    throw InputError("train and test sets disagree on classes or dimension");
  if (config.batch_size > train_set.size())
    throw ConfigError("batch_size " + std::to_string(config.batch_size) + " exceeds training set size " +
                      std::to_string(train_set.size()));

  Rng rng(config.seed);
  const auto widths = layer_widths(config, train_set);
  TrainResult result{DenseNet::kaiming(widths, config.activation, rng), {}};
  DenseNet& net = result.net;
  OptState opt = OptState::for_net(net, config.momentum, config.weight_decay, config.nesterov);
  opt.decay_biases = config.decay_biases;
  const ScheduleSpec schedule = config.effective_schedule();

  const std::size_t n = train_set.size(), dim = train_set.dim(), classes = train_set.classes;
  const std::size_t steps = (n + config.batch_size - 1) / config.batch_size;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> probs(classes);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle(std::span(order), rng);
    const double alpha = config.tamper.active_at(epoch) ? config.tamper.alpha : 1.0;
    const double epoch_lr = lr_at(schedule, static_cast<double>(epoch));

    for (std::size_t step = 0; step < steps; ++step) {
      const std::size_t begin = step * config.batch_size;
      const std::size_t count = std::min(config.batch_size, n - begin);
      Matrix batch(count, dim);
      for (std::size_t r = 0; r < count; ++r) {
        const auto src = train_set.inputs.row(order[begin + r]);
        std::copy(src.begin(), src.end(), batch.row(r).begin());
      }
      auto fwd = forward(net, batch);

      auto diverged = [&](const std::string& what) {
        return DivergenceError(what + " at epoch " + std::to_string(epoch) + ", step " + std::to_string(step) +
                                   " (global step " + std::to_string(epoch * steps + step) + ")",
                               epoch, step);
      };
      for (double z : fwd.logits.data)
        if (!std::isfinite(z)) throw diverged("non-finite logits");

      Matrix dlogits(count, classes);
      double loss = 0.0;
      const double inv = 1.0 / static_cast<double>(count);
      for (std::size_t r = 0; r < count; ++r) {
        const LabelSpec label{train_set.labels[order[begin + r]], config.label_smoothing};
        loss += softmax_ce_grad_into(fwd.logits.row(r), label, alpha, probs, dlogits.row(r));
        for (auto& g : dlogits.row(r)) g *= inv;
      }
      loss *= inv;
      if (!std::isfinite(loss)) throw diverged("non-finite training loss");

      Gradients grads = backward(net, fwd.cache, dlogits);
      if (config.clip_lambda) {
        const double scale = clip_scale(grads.norm(), *config.clip_lambda);
        if (scale != 1.0) grads.scale(scale);
      }
      const double progress = static_cast<double>(epoch) + static_cast<double>(step) / static_cast<double>(steps);
      sgd_step(net, grads, opt, lr_at(schedule, progress));
    }

    const Evaluation tr = evaluate(net, train_set, config.label_smoothing);
    const Evaluation te = evaluate(net, test_set, config.label_smoothing);
    if (!std::isfinite(tr.loss))
      throw DivergenceError("non-finite training loss after epoch " + std::to_string(epoch), epoch, steps);
    MetricsRecord rec{epoch, tr.loss, tr.accuracy, te.accuracy, tr.accuracy - te.accuracy, te.mean_logit_norm,
                      epoch_lr};
    result.records.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

/// Builds the train/test split described by `spec`.
inline DatasetPair load_datasets(const DataSpec& spec) {
  if (spec.source == "blobs") return synth_blobs(spec.classes, spec.per_class, spec.dim, spec.spread, spec.seed);
  if (spec.source == "idx") {
    if (spec.train_images.empty() || spec.train_labels.empty() || spec.test_images.empty() ||
        spec.test_labels.empty())
      throw ConfigError("idx data needs data.train_images, data.train_labels, data.test_images, data.test_labels");
    DatasetPair pair;
    pair.train = load_idx(spec.train_images, spec.train_labels, 0, Split::train);
    pair.test = load_idx(spec.test_images, spec.test_labels, pair.train.classes, Split::test);
    const std::size_t classes = std::max(pair.train.classes, pair.test.classes);
    pair.train.classes = pair.test.classes = classes;
    return pair;
  }
  throw ConfigError("unknown data source '" + spec.source + "'");
}

// ---------------------------------------------------------------------------
// Metrics CSV

inline constexpr const char* kMetricsHeader = "epoch,train_loss,train_acc,test_acc,gap,mean_logit_norm,lr";

inline std::string metrics_row(const MetricsRecord& r) {
  return std::to_string(r.epoch) + ',' + format_double(r.train_loss) + ',' + format_double(r.train_acc) + ',' +
         format_double(r.test_acc) + ',' + format_double(r.gap) + ',' + format_double(r.mean_logit_norm) + ',' +
         format_double(r.lr);
}

inline void write_metrics_csv(std::ostream& os, const std::vector<MetricsRecord>& records) {
  os << kMetricsHeader << '\n';
  for (const auto& r : records) os << metrics_row(r) << '\n';
}

inline std::vector<MetricsRecord> read_metrics_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kMetricsHeader) throw FormatError("metrics CSV: bad header", 0);
  std::vector<MetricsRecord> out;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 7) throw FormatError("metrics CSV: line " + std::to_string(line_no) + " has wrong field count", 0);
    out.push_back({parse_uint(f[0], "epoch"), parse_double(f[1], "train_loss"), parse_double(f[2], "train_acc"),
                   parse_double(f[3], "test_acc"), parse_double(f[4], "gap"), parse_double(f[5], "mean_logit_norm"),
                   parse_double(f[6], "lr")});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Grid search

inline constexpr const char* kGridHeader = "alpha,seed,final_train_acc,final_test_acc,gap,mean_logit_norm,status";

struct GridRow {
  double alpha = 1.0;
  std::uint64_t seed = 0;
  bool ok = false;
  MetricsRecord final_record{};
  std::string error;  ///< diagnostic for failed cells; not persisted
};

inline std::string grid_row_csv(const GridRow& r) {
  std::string s = format_double(r.alpha) + ',' + std::to_string(r.seed) + ',';
  if (r.ok) {
    const auto& m = r.final_record;
    s += format_double(m.train_acc) + ',' + format_double(m.test_acc) + ',' + format_double(m.gap) + ',' +
         format_double(m.mean_logit_norm) + ",ok";
  } else {
    s += "nan,nan,nan,nan,failed";
  }
  return s;
}

/// Parses one grid CSV data line; nullopt if it is malformed (e.g. a line
/// cut short by an interrupted write).
inline std::optional<GridRow> parse_grid_row(const std::string& line) {
  const auto f = split(line, ',');
  if (f.size() != 7) return std::nullopt;
  try {
    GridRow r;
    r.alpha = parse_double(f[0], "alpha");
    r.seed = parse_uint(f[1], "seed");
    if (f[6] == "ok") {
      r.ok = true;
      r.final_record.train_acc = parse_double(f[2], "final_train_acc");
      r.final_record.test_acc = parse_double(f[3], "final_test_acc");
      r.final_record.gap = parse_double(f[4], "gap");
      r.final_record.mean_logit_norm = parse_double(f[5], "mean_logit_norm");
    } else if (f[6] != "failed") {
      return std::nullopt;
    }
    return r;
  } catch (const ConfigError&) {
    return std::nullopt;
  }
}

struct GridOptions {
  /// Grid CSV; rows already present are skipped and kept. Empty = no file.
  std::string csv_path;
  /// Directory for per-cell metrics CSVs (cell_a<alpha>_s<seed>.csv). Empty = none.
  std::string cell_dir;
  std::size_t jobs = 1;
  /// Stop after this many newly computed cells (the CSV is left
  /// unfinalized, as after an interruption).
  std::size_t max_new_cells = std::numeric_limits<std::size_t>::max();
};

inline std::string cell_file_name(double alpha, std::uint64_t seed) {
  return "cell_a" + format_double(alpha) + "_s" + std::to_string(seed) + ".csv";
}

namespace detail {

inline std::string grid_key(double alpha, std::uint64_t seed) {
  return format_double(alpha) + '|' + std::to_string(seed);
}

inline void write_text_atomic(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + tmp + "'");
    out << text;
    if (!out.flush()) throw IoError("failed writing '" + tmp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot replace '" + path + "': " + ec.message());
}

}  // namespace detail

/// Trains one cell per (alpha, seed) on the given datasets. With a CSV path
/// the search is resumable: finished rows are appended as cells complete,
/// a restart skips every (alpha, seed) already present, and once all cells
/// are done the file is rewritten in grid order (alphas outer, seeds inner).
/// Cells are independent; with jobs > 1 they run on a thread pool and the
/// result is the same as a serial run. A cell that throws is recorded as
/// failed.
inline std::vector<GridRow> grid_search(const TrainConfig& base, std::span<const double> alphas,
                                        std::span<const std::uint64_t> seeds, const Dataset& train_set,
                                        const Dataset& test_set, const GridOptions& options = {}) {
  if (alphas.empty() || seeds.empty()) throw InputError("grid search needs at least one alpha and one seed");
  for (double a : alphas) TamperSpec{a, 0}.validate();
  base.validate();

  struct Cell {
    double alpha;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (double a : alphas)
    for (auto s : seeds) cells.push_back({a, s});

  std::map<std::string, GridRow> done;
  if (!options.csv_path.empty() && std::filesystem::exists(options.csv_path)) {
    std::ifstream in(options.csv_path, std::ios::binary);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::istringstream lines(text);
    std::string line;
    if (std::getline(lines, line) && line != kGridHeader)
      throw FormatError("grid CSV '" + options.csv_path + "' has an unexpected header", 0);
    std::size_t consumed = line.size() + 1;
    while (std::getline(lines, line)) {
      consumed += line.size() + 1;
      if (consumed > text.size()) break;  // no trailing newline: partial write
      if (auto row = parse_grid_row(line)) done.emplace(detail::grid_key(row->alpha, row->seed), *row);
    }
  }

  std::ofstream csv;
  if (!options.csv_path.empty()) {
    // Drop any partial trailing line before appending.
    std::string text = std::string(kGridHeader) + '\n';
    for (const auto& c : cells)
      if (auto it = done.find(detail::grid_key(c.alpha, c.seed)); it != done.end())
        text += grid_row_csv(it->second) + '\n';
    detail::write_text_atomic(options.csv_path, text);
    csv.open(options.csv_path, std::ios::binary | std::ios::app);
    if (!csv) throw IoError("cannot append to '" + options.csv_path + "'");
  }
  if (!options.cell_dir.empty()) std::filesystem::create_directories(options.cell_dir);

  std::vector<std::size_t> pending;
  for (std::size_t k = 0; k < cells.size(); ++k)
    if (!done.count(detail::grid_key(cells[k].alpha, cells[k].seed))) pending.push_back(k);
  if (pending.size() > options.max_new_cells) pending.resize(options.max_new_cells);

  std::vector<std::optional<GridRow>> computed(cells.size());
  std::mutex io_mutex;
  std::exception_ptr io_failure;
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t i = next++; i < pending.size(); i = next++) {
      const Cell cell = cells[pending[i]];
      TrainConfig cfg = base;
      cfg.tamper.alpha = cell.alpha;
      cfg.seed = cell.seed;
      GridRow row{cell.alpha, cell.seed, false, {}, {}};
      std::vector<MetricsRecord> records;
      try {
        auto res = train(cfg, train_set, test_set);
        row.ok = true;
        row.final_record = res.records.back();
        records = std::move(res.records);
      } catch (const std::exception& e) {
        row.error = e.what();
      }
      std::lock_guard lock(io_mutex);
      try {
        if (!options.cell_dir.empty() && row.ok) {
          std::ostringstream os;
          write_metrics_csv(os, records);
          detail::write_text_atomic(
              (std::filesystem::path(options.cell_dir) / cell_file_name(cell.alpha, cell.seed)).string(), os.str());
        }
        if (csv.is_open()) {
          csv << grid_row_csv(row) << '\n';
          if (!csv.flush()) throw IoError("failed appending to '" + options.csv_path + "'");
        }
      } catch (...) {
        if (!io_failure) io_failure = std::current_exception();
        next = pending.size();
        return;
      }
      computed[pending[i]] = std::move(row);
    }
  };
  const std::size_t jobs = std::max<std::size_t>(1, std::min(options.jobs, pending.size()));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
  }
  if (csv.is_open()) csv.close();
  if (io_failure) std::rethrow_exception(io_failure);

  std::vector<GridRow> rows;
  bool complete = true;
  for (std::size_t k = 0; k < cells.size(); ++k) {
    if (computed[k]) {
      rows.push_back(*computed[k]);
    } else if (auto it = done.find(detail::grid_key(cells[k].alpha, cells[k].seed)); it != done.end()) {
      rows.push_back(it->second);
    } else {
      complete = false;
    }
  }
  if (complete && !options.csv_path.empty()) {
    std::string text = std::string(kGridHeader) + '\n';
    for (const auto& r : rows) text += grid_row_csv(r) + '\n';
    detail::write_text_atomic(options.csv_path, text);
  }
  return rows;
}

}  // namespace sgt
