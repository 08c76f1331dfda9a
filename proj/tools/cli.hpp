#pragma once

// `sgt` command-line front end: train, grid, analyze, verify.
//
// Exit codes:
//   0  success
//   1  verify: at least one blocking property failed
//   2  usage error (unknown flag, bad flag value)
//   3  invalid configuration
//   4  I/O error (unreadable input, unwritable output)
//   5  training diverged
//   6  output already exists and would be overwritten
//   7  malformed data file

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sgt/sgt.hpp"

namespace sgt::cli {

enum ExitCode : int {
  kOk = 0,
  kVerifyFailed = 1,
  kUsage = 2,
  kConfig = 3,
  kIo = 4,
  kDiverged = 5,
  kOutputExists = 6,
  kDataFormat = 7,
};

inline constexpr const char* kOutDirEnv = "SGT_OUT_DIR";

class OutputExists : public Error {
public:
  using Error::Error;
};

struct Overrides {
  std::string config_path;
  std::string out_dir;
  std::vector<std::string> settings;
  std::optional<double> alpha, epsilon, lambda;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> schedule;
};

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Metadata values (`grid.alphas`, ...) found in config text.
inline std::map<std::string, std::string> read_metadata(std::string_view text) {
  std::map<std::string, std::string> out;
  for (const auto& raw : split(text, '\n')) {
    const auto line = trim(raw);
    const auto eq = line.find('=');
    if (line.empty() || line.front() == '#' || eq == std::string_view::npos) continue;
    const std::string key(trim(line.substr(0, eq)));
    if (is_metadata_key(key)) out[key] = std::string(trim(line.substr(eq + 1)));
  }
  return out;
}

/// Built-in defaults, then the config file, then --set, then named flags.
inline TrainConfig resolve_config(const Overrides& o, std::map<std::string, std::string>* metadata = nullptr) {
  TrainConfig cfg;
  if (!o.config_path.empty()) {
    const std::string text = read_text(o.config_path);
    cfg = parse_config(text, cfg);
    if (metadata) *metadata = read_metadata(text);
  }
  for (const auto& s : o.settings) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    apply_setting(cfg, s.substr(0, eq), s.substr(eq + 1));
  }
  if (o.alpha) cfg.tamper.alpha = *o.alpha;
  if (o.epsilon) cfg.label_smoothing = *o.epsilon;
  if (o.lambda) cfg.clip_lambda = *o.lambda;
  if (o.epochs) cfg.epochs = *o.epochs;
  if (o.seed) cfg.seed = *o.seed;
  if (o.schedule) cfg.schedule.kind = parse_schedule_kind(*o.schedule);
  cfg.validate();
  return cfg;
}

inline std::filesystem::path output_dir(const Overrides& o) {
  std::string dir = o.out_dir;
  if (dir.empty()) {
    const char* env = std::getenv(kOutDirEnv);
    dir = env && *env ? env : "sgt-out";
  }
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw IoError("cannot create output directory '" + dir + "'");
  return dir;
}

inline void refuse_existing(const std::vector<std::filesystem::path>& paths) {
  for (const auto& p : paths)
    if (std::filesystem::exists(p))
      throw OutputExists("'" + p.string() + "' already exists; choose another --out directory or remove it");
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out.flush()) throw IoError("failed writing '" + path.string() + "'");
}

inline std::string manifest_text(const TrainConfig& cfg, const std::string& command,
                                 std::vector<std::pair<std::string, std::string>> extra = {}) {
  std::vector<std::pair<std::string, std::string>> meta{{"artifact_version", kVersion}, {"command", command}};
  meta.insert(meta.end(), extra.begin(), extra.end());
  return "# sgt run manifest; replay with: sgt " + command + " --config <this file>\n" + format_config(cfg, meta);
}

// ---------------------------------------------------------------------------

inline int cmd_train(const Overrides& o, std::ostream& out) {
  const TrainConfig cfg = resolve_config(o);
  const auto dir = output_dir(o);
  const auto metrics = dir / "metrics.csv", manifest = dir / "manifest.txt", model = dir / "model.ckpt";
  refuse_existing({metrics, manifest, model});
  write_text(manifest, manifest_text(cfg, "train"));

  const auto data = load_datasets(cfg.data);
  std::ofstream csv(metrics, std::ios::binary);
  if (!csv) throw IoError("cannot write '" + metrics.string() + "'");
  csv << kMetricsHeader << '\n';
  auto result = train(cfg, data.train, data.test, [&](const MetricsRecord& r) {
    csv << metrics_row(r) << '\n';
    csv.flush();
    out << "epoch " << r.epoch << "  loss " << format_double(r.train_loss) << "  train_acc "
        << format_double(r.train_acc) << "  test_acc " << format_double(r.test_acc) << "  logit_norm "
        << format_double(r.mean_logit_norm) << '\n';
  });
  std::ofstream ckpt(model, std::ios::binary);
  save_checkpoint(result.net, ckpt);
  out << "wrote " << metrics.string() << ", " << manifest.string() << ", " << model.string() << '\n';
  return kOk;
}

inline int cmd_grid(const Overrides& o, const std::optional<std::string>& alphas_flag,
                    const std::optional<std::string>& seeds_flag, std::size_t jobs, std::optional<std::size_t> stop_after,
                    std::ostream& out) {
  std::map<std::string, std::string> meta;
  const TrainConfig cfg = resolve_config(o, &meta);
  const std::string alphas_text = alphas_flag ? *alphas_flag : meta.count("grid.alphas") ? meta["grid.alphas"] : "0.1:0.9:0.1";
  const std::string seeds_text =
      seeds_flag ? *seeds_flag : meta.count("grid.seeds") ? meta["grid.seeds"] : std::to_string(cfg.seed);
  const auto alphas = parse_real_list(alphas_text, "--alphas");
  const auto seeds = parse_uint_list(seeds_text, "--seeds");

  const auto dir = output_dir(o);
  const auto manifest = dir / "manifest.txt";
  const std::string text = manifest_text(
      cfg, "grid", {{"grid.alphas", detail::join(alphas)}, {"grid.seeds", detail::join(seeds)}});
  if (std::filesystem::exists(manifest)) {
    if (read_text(manifest.string()) != text)
      throw OutputExists("'" + manifest.string() + "' describes a different grid; refusing to mix results");
    out << "resuming grid in " << dir.string() << '\n';
  } else {
    write_text(manifest, text);
  }

  const auto data = load_datasets(cfg.data);
  GridOptions opts;
  opts.csv_path = (dir / "grid.csv").string();
  opts.cell_dir = (dir / "cells").string();
  opts.jobs = jobs;
  if (stop_after) opts.max_new_cells = *stop_after;
  const auto rows = grid_search(cfg, alphas, seeds, data.train, data.test, opts);
  for (const auto& r : rows) {
    out << grid_row_csv(r);
    if (!r.ok && !r.error.empty()) out << "  (" << r.error << ')';
    out << '\n';
  }
  out << "wrote " << opts.csv_path << " (" << rows.size() << " of " << alphas.size() * seeds.size() << " cells)\n";
  return kOk;
}

inline int cmd_analyze(const Overrides& o, const std::optional<std::string>& probs_flag,
                       const std::string& alphas_text, const std::optional<std::string>& grid_dir, std::ostream& out) {
  const ProbVec p = probs_flag ? ProbVec(parse_real_list(*probs_flag, "--probs")) : ranked_example();
  const auto alphas = parse_real_list(alphas_text, "--alphas");
  const auto dir = output_dir(o);
  const auto table = dir / "transform.csv", pairs = dir / "loss_logit.csv";
  refuse_existing(grid_dir ? std::vector{table, pairs} : std::vector{table});

  std::ostringstream os;
  write_transform_csv(os, analyze_transform(p, alphas));
  write_text(table, os.str());
  out << os.str();
  if (grid_dir) {
    std::ostringstream ps;
    write_loss_logit_csv(ps, collect_loss_logit_pairs((std::filesystem::path(*grid_dir) / "cells").string()));
    write_text(pairs, ps.str());
    out << ps.str();
  }
  return kOk;
}

inline int cmd_verify(const Overrides& o, std::size_t trials, std::uint64_t seed, bool trend, std::ostream& out) {
  VerifyOptions opts;
  opts.logit_norm_trend = trend;
  if (trend) opts.trend_config = resolve_config(o);
  const auto dir = output_dir(o);
  const auto report_path = dir / "verify.csv";
  refuse_existing({report_path});

  const auto report = verify_claims(seed, trials, opts);
  std::ostringstream os;
  write_verify_report(os, report);
  write_text(report_path, os.str());
  for (const auto& p : report.properties) {
    const char* status = p.ok() ? "PASS" : (p.blocking ? "FAIL" : "FLAG");
    out << '[' << status << "] " << p.name << "  checks=" << p.checks << " failures=" << p.failures
        << " worst=" << format_double(p.worst);
    if (!p.note.empty()) out << "  (" << p.note << ')';
    out << '\n';
  }
  out << (report.passed() ? "all blocking properties hold" : "PROPERTY FAILURES") << "; report: "
      << report_path.string() << '\n';
  return report.passed() ? kOk : kVerifyFailed;
}

// ---------------------------------------------------------------------------

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Softmax gradient tampering: training, grid search and property checks"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("sgt ") + kVersion);

  Overrides o;
  auto add_common = [&](CLI::App* sub, bool train_flags) {
    sub->add_option("--config", o.config_path, "key = value configuration file (or a run manifest)");
    sub->add_option("--out", o.out_dir, std::string("output directory (default: $") + kOutDirEnv + " or ./sgt-out)");
    sub->add_option("--set", o.settings, "override any configuration key: --set key=value")->take_all();
    if (!train_flags) return;
    sub->add_option("--alpha", o.alpha, "tampering exponent in [0, 1]");
    sub->add_option("--epochs", o.epochs, "number of epochs");
    sub->add_option("--seed", o.seed, "training seed");
    sub->add_option("--epsilon", o.epsilon, "label smoothing in [0, 1)");
    sub->add_option("--lambda", o.lambda, "gradient clipping threshold");
    sub->add_option("--schedule", o.schedule, "warmup_cosine_cooldown | step");
  };

  auto* train_cmd = app.add_subcommand("train", "train one network and write per-epoch metrics");
  add_common(train_cmd, true);

  auto* grid_cmd = app.add_subcommand("grid", "grid search over alpha and seeds (resumable)");
  add_common(grid_cmd, true);
  std::optional<std::string> alphas_flag, seeds_flag;
  std::size_t jobs = 1;
  std::optional<std::size_t> stop_after;
  grid_cmd->add_option("--alphas", alphas_flag, "list a,b,c or range start:stop:step (default 0.1:0.9:0.1)");
  grid_cmd->add_option("--seeds", seeds_flag, "list 1,2,3 or range start:stop (default: the config seed)");
  grid_cmd->add_option("--jobs", jobs, "cells trained in parallel")->check(CLI::PositiveNumber);
  grid_cmd->add_option("--stop-after", stop_after, "compute at most this many new cells, then exit");

  auto* analyze_cmd = app.add_subcommand("analyze", "tabulate the transform and threshold per alpha");
  add_common(analyze_cmd, false);
  std::optional<std::string> probs_flag, grid_dir;
  std::string analyze_alphas = "1,0.75,0.5,0.25,0";
  analyze_cmd->add_option("--probs", probs_flag, "distribution a,b,c (default: a rank-ordered 10-class example)");
  analyze_cmd->add_option("--alphas", analyze_alphas, "alphas to tabulate");
  analyze_cmd->add_option("--grid-dir", grid_dir, "also emit (loss, logit norm) pairs from a grid output directory");

  auto* verify_cmd = app.add_subcommand("verify", "check the transform and gradient properties numerically");
  add_common(verify_cmd, false);
  std::size_t trials = 1000;
  std::uint64_t verify_seed = 1;
  bool no_trend = false;
  verify_cmd->add_option("--trials", trials, "random samples per class count")->check(CLI::PositiveNumber);
  verify_cmd->add_option("--seed", verify_seed, "sampling seed");
  verify_cmd->add_flag("--no-trend", no_trend, "skip the logit-norm training comparison");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e, out, err);
    return kOk;
  } catch (const CLI::CallForVersion& e) {
    app.exit(e, out, err);
    return kOk;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kUsage;
  }

  try {
    if (*train_cmd) return cmd_train(o, out);
    if (*grid_cmd) return cmd_grid(o, alphas_flag, seeds_flag, jobs, stop_after, out);
    if (*analyze_cmd) return cmd_analyze(o, probs_flag, analyze_alphas, grid_dir, out);
    if (*verify_cmd) return cmd_verify(o, trials, verify_seed, !no_trend, out);
  } catch (const OutputExists& e) {
    err << "error: " << e.what() << '\n';
    return kOutputExists;
  } catch (const DivergenceError& e) {
    err << "error: training diverged: " << e.what() << '\n';
    return kDiverged;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << '\n';
    return kDataFormat;
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kIo;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kConfig;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kIo;
  }
  return kUsage;
}

}  // namespace sgt::cli
