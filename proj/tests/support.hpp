#pragma once

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "sgt/sgt.hpp"

namespace testing_support {

/// Fresh empty directory under $SGT_TEST_TMP (or the system temp dir).
inline std::filesystem::path fresh_dir(const std::string& name) {
  const char* root = std::getenv("SGT_TEST_TMP");
  std::filesystem::path dir = root && *root ? std::filesystem::path(root) : std::filesystem::temp_directory_path() / "sgt-tests";
  dir /= name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline sgt::Matrix random_matrix(sgt::Rng& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
  sgt::Matrix m(rows, cols);
  for (auto& v : m.data) v = scale * sgt::standard_normal(rng);
  return m;
}

/// Every parameter of `net`, flattened layer by layer (weights then bias).
inline std::vector<double*> parameters(sgt::DenseNet& net) {
  std::vector<double*> out;
  for (auto& layer : net.layers()) {
    for (auto& w : layer.weight.data) out.push_back(&w);
    for (auto& b : layer.bias) out.push_back(&b);
  }
  return out;
}

inline std::vector<double> flatten(const sgt::Gradients& g) {
  std::vector<double> out;
  for (std::size_t l = 0; l < g.weight.size(); ++l) {
    out.insert(out.end(), g.weight[l].data.begin(), g.weight[l].data.end());
    out.insert(out.end(), g.bias[l].begin(), g.bias[l].end());
  }
  return out;
}

/// Mean over the batch of (1/scale) CE(softmax(scale * logits), q). With
/// scale = 1 this is the ordinary training loss.
inline double batch_loss(const sgt::DenseNet& net, const sgt::Matrix& x, const std::vector<std::size_t>& labels,
                         double epsilon, double scale = 1.0) {
  const sgt::Matrix logits = sgt::predict(net, x);
  double total = 0.0;
  for (std::size_t r = 0; r < x.rows; ++r) {
    std::vector<double> z(logits.row(r).begin(), logits.row(r).end());
    for (auto& v : z) v *= scale;
    total += sgt::cross_entropy(sgt::softmax(z), sgt::LabelSpec{labels[r], epsilon});
  }
  return total / static_cast<double>(x.rows) / scale;
}

/// Backprop gradient of the batch loss with the logit gradient tampered by `alpha`.
inline sgt::Gradients batch_gradient(const sgt::DenseNet& net, const sgt::Matrix& x,
                                     const std::vector<std::size_t>& labels, double epsilon, double alpha) {
  auto fwd = sgt::forward(net, x);
  const std::size_t classes = net.output_dim();
  sgt::Matrix dlogits(x.rows, classes);
  std::vector<double> probs(classes);
  for (std::size_t r = 0; r < x.rows; ++r) {
    sgt::softmax_ce_grad_into(fwd.logits.row(r), sgt::LabelSpec{labels[r], epsilon}, alpha, probs, dlogits.row(r));
    for (auto& g : dlogits.row(r)) g /= static_cast<double>(x.rows);
  }
  return sgt::backward(net, fwd.cache, dlogits);
}

/// Smallest |pre-activation| of any relu unit; FD is unreliable near 0.
inline double relu_margin(const sgt::DenseNet& net, const sgt::Matrix& x) {
  const auto fwd = sgt::forward(net, x);
  double margin = INFINITY;
  for (std::size_t l = 0; l < net.depth(); ++l)
    if (net.layers()[l].activation == sgt::Activation::relu)
      for (double v : fwd.cache.pre[l].data) margin = std::min(margin, std::abs(v));
  return margin;
}

/// Central differences of `loss(net)` over every parameter.
template <typename F>
std::vector<double> fd_gradient(sgt::DenseNet net, F&& loss, double h = 1e-5) {
  std::vector<double> out;
  for (double* p : parameters(net)) {
    const double saved = *p;
    *p = saved + h;
    const double up = loss(net);
    *p = saved - h;
    const double down = loss(net);
    *p = saved;
    out.push_back((up - down) / (2.0 * h));
  }
  return out;
}

}  // namespace testing_support
