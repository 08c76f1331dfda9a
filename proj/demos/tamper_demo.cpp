// Shows what the transform does to one distribution, then trains a small
// network on synthetic blobs with and without tampering.

#include <iostream>
#include <vector>

#include "sgt/sgt.hpp"

int main() {
  const sgt::ProbVec p = sgt::ranked_example(10);
  const std::vector<double> alphas{1.0, 0.5, 0.25, 0.0};
  std::cout << "alpha  threshold  top  bottom\n";
  for (const auto& row : sgt::analyze_transform(p, alphas)) {
    std::cout << sgt::format_double(row.alpha) << "  "
              << (row.threshold ? sgt::format_double(*row.threshold) : "-") << "  "
              << sgt::format_double(row.transformed[0]) << "  " << sgt::format_double(row.transformed[9]) << '\n';
  }

  sgt::TrainConfig cfg;
  cfg.epochs = 8;
  cfg.data.per_class = 60;
  const auto data = sgt::load_datasets(cfg.data);
  for (double alpha : {1.0, 0.25}) {
    cfg.tamper.alpha = alpha;
    const auto result = sgt::train(cfg, data.train, data.test);
    const auto& last = result.records.back();
    std::cout << "alpha " << alpha << ": test_acc " << sgt::format_double(last.test_acc) << ", mean logit norm "
              << sgt::format_double(last.mean_logit_norm) << '\n';
  }
}
