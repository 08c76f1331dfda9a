#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "sgt/analysis.hpp"
#include "sgt/harness.hpp"
#include "support.hpp"

using namespace sgt;
namespace ts = testing_support;

namespace {

TrainConfig small_config() {
  TrainConfig c;
  c.hidden = {16};
  c.epochs = 6;
  c.batch_size = 16;
  c.schedule.warmup_epochs = 1;
  c.schedule.cooldown_epochs = 1;
  c.data.classes = 4;
  c.data.per_class = 30;
  c.data.dim = 6;
  return c;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string csv_of(const std::vector<MetricsRecord>& records) {
  std::ostringstream os;
  write_metrics_csv(os, records);
  return os.str();
}

}  // namespace

TEST(Evaluate, ArgmaxBreaksTiesByLowestIndex) {
  EXPECT_EQ(argmax(std::vector<double>{1.0, 3.0, 3.0}), 1u);
  EXPECT_EQ(argmax(std::vector<double>{2.0, 2.0}), 0u);
}

TEST(Train, DeterministicInSeed) {
  const auto c = small_config();
  const auto data = load_datasets(c.data);
  const auto a = train(c, data.train, data.test);
  const auto b = train(c, data.train, data.test);
  EXPECT_EQ(a.records, b.records);
  EXPECT_EQ(a.net, b.net);
  EXPECT_EQ(csv_of(a.records), csv_of(b.records));
  auto other = c;
  other.seed = 2;
  EXPECT_NE(train(other, data.train, data.test).records, a.records);
}

TEST(Train, RecordsAreWellFormed) {
  auto c = small_config();
  c.tamper.alpha = 0.3;
  c.label_smoothing = 0.1;
  const auto data = load_datasets(c.data);
  std::vector<MetricsRecord> seen;
  const auto result = train(c, data.train, data.test, [&](const MetricsRecord& r) { seen.push_back(r); });
  ASSERT_EQ(result.records.size(), c.epochs);
  EXPECT_EQ(seen, result.records);
  for (std::size_t e = 0; e < c.epochs; ++e) {
    const auto& r = result.records[e];
    EXPECT_EQ(r.epoch, e);
    EXPECT_GE(r.train_acc, 0.0);
    EXPECT_LE(r.train_acc, 1.0);
    EXPECT_GE(r.test_acc, 0.0);
    EXPECT_LE(r.test_acc, 1.0);
    EXPECT_EQ(r.gap, r.train_acc - r.test_acc);
    EXPECT_EQ(r.lr, lr_at(c.effective_schedule(), static_cast<double>(e)));
    EXPECT_GT(r.mean_logit_norm, 0.0);
  }
}

TEST(Train, TamperingLeavesForwardPassAlone) {
  auto c = small_config();
  c.tamper = {0.3, 1};
  const auto data = load_datasets(c.data);
  const auto tampered = train(c, data.train, data.test);
  c.tamper.alpha = 1.0;
  const auto plain = train(c, data.train, data.test);
  EXPECT_EQ(tampered.records[0], plain.records[0]);
  EXPECT_NE(tampered.records[1], plain.records[1]);
}

TEST(Train, SeparableBlobsReachFullTrainAccuracy) {
  auto c = small_config();
  c.data.spread = 0.05;
  c.epochs = 10;
  const auto data = load_datasets(c.data);
  EXPECT_EQ(train(c, data.train, data.test).records.back().train_acc, 1.0);
}

TEST(Train, AlphaZeroRunsWithUniformBackwardSignal) {
  auto c = small_config();
  c.tamper.alpha = 0.0;
  const auto data = load_datasets(c.data);
  const auto r = train(c, data.train, data.test);
  ASSERT_EQ(r.records.size(), c.epochs);
  for (const auto& rec : r.records) EXPECT_TRUE(std::isfinite(rec.train_loss));
}

TEST(Train, ClippingChangesTheTrajectory) {
  auto c = small_config();
  const auto data = load_datasets(c.data);
  const auto plain = train(c, data.train, data.test);
  c.clip_lambda = 1e-3;
  const auto clipped = train(c, data.train, data.test);
  EXPECT_NE(plain.records.back(), clipped.records.back());
}

TEST(Train, DivergenceIsReportedWithLocation) {
  auto c = small_config();
  c.schedule.base_lr = 1e250;
  c.schedule.peak_lr = 1e300;
  const auto data = load_datasets(c.data);
  try {
    train(c, data.train, data.test);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("step"), std::string::npos);
  }
}

TEST(Train, RejectsInconsistentInputs) {
  auto c = small_config();
  const auto data = load_datasets(c.data);
  c.batch_size = data.train.size() + 1;
  EXPECT_THROW(train(c, data.train, data.test), ConfigError);
  const auto other = synth_blobs(3, 10, 6, 1.0, 1);
  EXPECT_THROW(train(small_config(), data.train, other.test), InputError);
}

TEST(MetricsCsv, RoundTrip) {
  const auto c = small_config();
  const auto data = load_datasets(c.data);
  const auto records = train(c, data.train, data.test).records;
  std::istringstream in(csv_of(records));
  EXPECT_EQ(read_metrics_csv(in), records);
  std::istringstream bad("epoch,loss\n");
  EXPECT_THROW(read_metrics_csv(bad), FormatError);
}

TEST(Grid, SingleCellMatchesPlainRun) {
  auto c = small_config();
  const auto data = load_datasets(c.data);
  const std::vector<double> alphas{1.0};
  const std::vector<std::uint64_t> seeds{c.seed};
  const auto rows = grid_search(c, alphas, seeds, data.train, data.test);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_TRUE(rows[0].ok);
  EXPECT_EQ(rows[0].final_record, train(c, data.train, data.test).records.back());
}

TEST(Grid, SchemaAndParallelAgreement) {
  const auto c = small_config();
  const auto data = load_datasets(c.data);
  const std::vector<double> alphas{0.25, 0.3, 1.0};
  const std::vector<std::uint64_t> seeds{1, 2, 3};
  const auto serial = grid_search(c, alphas, seeds, data.train, data.test);
  ASSERT_EQ(serial.size(), 9u);
  for (const auto& r : serial) {
    EXPECT_TRUE(r.ok);
    EXPECT_GE(r.final_record.train_acc, 0.0);
    EXPECT_LE(r.final_record.train_acc, 1.0);
  }
  GridOptions opts;
  opts.jobs = 4;
  const auto parallel = grid_search(c, alphas, seeds, data.train, data.test, opts);
  ASSERT_EQ(parallel.size(), 9u);
  for (std::size_t k = 0; k < 9; ++k) {
    EXPECT_EQ(parallel[k].alpha, serial[k].alpha);
    EXPECT_EQ(parallel[k].seed, serial[k].seed);
    EXPECT_EQ(parallel[k].final_record, serial[k].final_record);
  }
}

TEST(Grid, InterruptedSearchResumesToIdenticalCsv) {
  const auto c = small_config();
  const auto data = load_datasets(c.data);
  const std::vector<double> alphas{0.2, 0.5, 1.0};
  const std::vector<std::uint64_t> seeds{1, 2};

  const auto full_dir = ts::fresh_dir("grid_full");
  GridOptions full{(full_dir / "grid.csv").string(), (full_dir / "cells").string(), 1, SIZE_MAX};
  grid_search(c, alphas, seeds, data.train, data.test, full);
  const std::string reference = slurp(full.csv_path);

  const auto dir = ts::fresh_dir("grid_resume");
  GridOptions part{(dir / "grid.csv").string(), (dir / "cells").string(), 3, 2};
  EXPECT_EQ(grid_search(c, alphas, seeds, data.train, data.test, part).size(), 2u);
  part.max_new_cells = 1;
  grid_search(c, alphas, seeds, data.train, data.test, part);
  // Simulate a crash mid-append.
  {
    std::ofstream out(part.csv_path, std::ios::binary | std::ios::app);
    out << "0.5,2,0.9";
  }
  part.max_new_cells = SIZE_MAX;
  const auto rows = grid_search(c, alphas, seeds, data.train, data.test, part);
  EXPECT_EQ(rows.size(), 6u);
  EXPECT_EQ(slurp(part.csv_path), reference);
  for (const auto& r : rows)
    EXPECT_EQ(slurp(dir / "cells" / cell_file_name(r.alpha, r.seed)),
              slurp(full_dir / "cells" / cell_file_name(r.alpha, r.seed)));
}

TEST(Grid, FailedCellsAreRecordedNotFatal) {
  auto c = small_config();
  c.schedule.base_lr = 1e250;
  c.schedule.peak_lr = 1e300;
  const auto data = load_datasets(c.data);
  const std::vector<double> alphas{0.5};
  const std::vector<std::uint64_t> seeds{1};
  const auto rows = grid_search(c, alphas, seeds, data.train, data.test);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_FALSE(rows[0].ok);
  EXPECT_FALSE(rows[0].error.empty());
  EXPECT_EQ(grid_row_csv(rows[0]), "0.5,1,nan,nan,nan,nan,failed");
  EXPECT_TRUE(parse_grid_row(grid_row_csv(rows[0])));
}

TEST(Grid, InvalidGrids) {
  const auto c = small_config();
  const auto data = load_datasets(c.data);
  const std::vector<double> none;
  const std::vector<std::uint64_t> seeds{1};
  EXPECT_THROW(grid_search(c, none, seeds, data.train, data.test), InputError);
  const std::vector<double> bad{1.5};
  EXPECT_THROW(grid_search(c, bad, seeds, data.train, data.test), DomainError);
}

TEST(Analysis, TransformTableAndPairs) {
  const ProbVec p = ranked_example();
  const std::vector<double> alphas{1.0, 0.75, 0.5, 0.25, 0.0};
  const auto rows = analyze_transform(p, alphas);
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_FALSE(rows[0].threshold);
  EXPECT_TRUE(std::equal(rows[0].transformed.begin(), rows[0].transformed.end(), p.begin()));
  for (std::size_t k = 1; k < rows.size(); ++k) {
    EXPECT_EQ(*rows[k].threshold, stationary_threshold(p, alphas[k]));
    // Flatter as alpha falls: the top entry shrinks, the bottom one grows.
    EXPECT_LT(rows[k].transformed[0], rows[k - 1].transformed[0]);
    EXPECT_GT(rows[k].transformed[9], rows[k - 1].transformed[9]);
  }
  for (double v : rows.back().transformed) EXPECT_EQ(v, 0.1);
  std::ostringstream os;
  write_transform_csv(os, rows);
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "alpha,threshold,p0,p1,p2,p3,p4,p5,p6,p7,p8,p9");
}

TEST(Analysis, LossLogitPairsFromCells) {
  const auto c = small_config();
  const auto data = load_datasets(c.data);
  const auto dir = ts::fresh_dir("pairs");
  GridOptions opts{"", (dir / "cells").string(), 1, SIZE_MAX};
  const std::vector<double> alphas{0.3, 1.0};
  const std::vector<std::uint64_t> seeds{4};
  const auto rows = grid_search(c, alphas, seeds, data.train, data.test, opts);
  const auto pairs = collect_loss_logit_pairs(opts.cell_dir);
  ASSERT_EQ(pairs.size(), 2u);
  EXPECT_EQ(pairs[0].alpha, 0.3);
  EXPECT_EQ(pairs[1].seed, 4u);
  EXPECT_EQ(pairs[1].mean_logit_norm, rows[1].final_record.mean_logit_norm);
  EXPECT_EQ(pairs[1].final_train_loss, rows[1].final_record.train_loss);
  EXPECT_THROW(collect_loss_logit_pairs((dir / "missing").string()), IoError);
}

TEST(Verify, SmallRunPassesAndReportsEveryProperty) {
  VerifyOptions opts;
  opts.logit_norm_trend = false;
  const auto report = verify_claims(3, 5, opts);
  EXPECT_TRUE(report.passed());
  for (const char* name : {"normalization", "identity_at_alpha_1", "uniform_at_alpha_0", "order_preservation",
                           "threshold_bisection", "threshold_monotonicity", "threshold_bounds", "fixed_point",
                           "temperature_equivalence", "gradient_identity_fd", "tampered_gradient_surrogate_fd",
                           "gradient_zero_sum"}) {
    const auto* p = report.find(name);
    ASSERT_NE(p, nullptr) << name;
    EXPECT_GT(p->checks, 0u) << name;
  }
  EXPECT_GE(report.find("threshold_monotonicity")->worst, -1e-10);
  EXPECT_THROW(verify_claims(1, 0, opts), InputError);
  const auto one = verify_claims(1, 1, opts);
  EXPECT_EQ(one.find("threshold_monotonicity")->checks, 3u);
}
