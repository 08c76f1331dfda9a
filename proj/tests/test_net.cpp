#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <sstream>

#include "sgt/analysis.hpp"
#include "sgt/net.hpp"
#include "support.hpp"

using namespace sgt;
namespace ts = testing_support;

namespace {

Eigen::MatrixXd to_eigen(const Matrix& m) {
  Eigen::MatrixXd e(m.rows, m.cols);
  for (std::size_t r = 0; r < m.rows; ++r)
    for (std::size_t c = 0; c < m.cols; ++c) e(r, c) = m(r, c);
  return e;
}

Eigen::MatrixXd eigen_forward(const DenseNet& net, const Matrix& x) {
  Eigen::MatrixXd h = to_eigen(x);
  for (const auto& layer : net.layers()) {
    const Eigen::Map<const Eigen::VectorXd> b(layer.bias.data(), layer.bias.size());
    h = (h * to_eigen(layer.weight).transpose()).rowwise() + b.transpose();
    if (layer.activation == Activation::relu) h = h.cwiseMax(0.0);
  }
  return h;
}

std::vector<std::size_t> widths_for_depth(std::size_t depth) {
  std::vector<std::size_t> w{5};
  for (std::size_t l = 1; l < depth; ++l) w.push_back(7);
  w.push_back(4);
  return w;
}

/// Random net and batch with every relu pre-activation at least `margin` from 0.
struct Problem {
  DenseNet net;
  Matrix x;
  std::vector<std::size_t> labels;
};

Problem make_problem(std::uint64_t seed, std::size_t depth, double margin = 1e-3,
                     Activation hidden = Activation::relu) {
  Rng rng(seed);
  for (;;) {
    Problem p{DenseNet::kaiming(widths_for_depth(depth), hidden, rng), ts::random_matrix(rng, 6, 5), {}};
    for (auto& layer : p.net.layers())
      for (auto& b : layer.bias) b = 0.1 * standard_normal(rng);
    for (std::size_t r = 0; r < 6; ++r) p.labels.push_back(uniform_index(rng, 4));
    if (ts::relu_margin(p.net, p.x) > margin) return p;
  }
}

}  // namespace

TEST(Net, KaimingShapesAndBounds) {
  Rng rng(3);
  const std::vector<std::size_t> widths{10, 20, 3};
  const DenseNet net = DenseNet::kaiming(widths, Activation::relu, rng);
  ASSERT_EQ(net.depth(), 2u);
  EXPECT_EQ(net.input_dim(), 10u);
  EXPECT_EQ(net.output_dim(), 3u);
  EXPECT_EQ(net.parameter_count(), 10u * 20 + 20 + 20 * 3 + 3);
  EXPECT_EQ(net.layers()[0].activation, Activation::relu);
  EXPECT_EQ(net.layers()[1].activation, Activation::identity);
  for (double w : net.layers()[0].weight.data) EXPECT_LE(std::abs(w), std::sqrt(6.0 / 10.0));
  for (double b : net.layers()[1].bias) EXPECT_EQ(b, 0.0);
  Rng again(3);
  EXPECT_EQ(DenseNet::kaiming(widths, Activation::relu, again), net);
}

TEST(Net, ValidationErrors) {
  Rng rng(1);
  EXPECT_THROW(DenseNet::kaiming(std::vector<std::size_t>{4}, Activation::relu, rng), InputError);
  EXPECT_THROW(DenseNet::kaiming(std::vector<std::size_t>{4, 0, 2}, Activation::relu, rng), InputError);
  DenseLayer a{Matrix(3, 2), std::vector<double>(3), Activation::relu};
  DenseLayer b{Matrix(2, 4), std::vector<double>(2), Activation::identity};
  EXPECT_THROW(DenseNet({a, b}), InputError);
  DenseLayer bad_bias{Matrix(3, 2), std::vector<double>(2), Activation::identity};
  EXPECT_THROW(DenseNet({bad_bias}), InputError);
  EXPECT_THROW(parse_activation("tanh"), InputError);
  const DenseNet net = DenseNet::kaiming(std::vector<std::size_t>{4, 2}, Activation::relu, rng);
  EXPECT_THROW(forward(net, Matrix(2, 3)), InputError);
}

TEST(Net, ForwardMatchesEigen) {
  for (std::size_t depth = 1; depth <= 3; ++depth) {
    const Problem p = make_problem(10 + depth, depth, 0.0);
    const Matrix got = forward(p.net, p.x).logits;
    const Eigen::MatrixXd want = eigen_forward(p.net, p.x);
    for (std::size_t r = 0; r < got.rows; ++r)
      for (std::size_t c = 0; c < got.cols; ++c) EXPECT_NEAR(got(r, c), want(r, c), 1e-13);
    EXPECT_EQ(predict(p.net, p.x), got);
  }
}

TEST(Net, BackwardMatchesFiniteDifferences) {
  for (auto act : {Activation::relu, Activation::identity}) {
    for (std::size_t depth = 1; depth <= 3; ++depth) {
      for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const Problem p = make_problem(100 * depth + seed, depth, 1e-3, act);
        const auto analytic = ts::flatten(ts::batch_gradient(p.net, p.x, p.labels, 0.1, 1.0));
        const auto numeric =
            ts::fd_gradient(p.net, [&](const DenseNet& n) { return ts::batch_loss(n, p.x, p.labels, 0.1); });
        EXPECT_LT(scaled_max_error(analytic, numeric), 1e-6)
            << to_string(act) << " depth " << depth << " seed " << seed;
      }
    }
  }
}

TEST(Net, ZeroUpstreamGradientGivesZeroGradients) {
  const Problem p = make_problem(4, 3, 0.0);
  const auto fwd = forward(p.net, p.x);
  const Gradients g = backward(p.net, fwd.cache, Matrix(p.x.rows, 4));
  EXPECT_EQ(g, Gradients::zeros_like(p.net));
}

TEST(Net, ZeroParametersGiveUniformSoftmax) {
  DenseNet net({DenseLayer{Matrix(3, 2), std::vector<double>(3), Activation::identity}});
  const Matrix z = predict(net, Matrix(1, 2, 5.0));
  const ProbVec p = softmax(z.row(0));
  for (double v : p) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
}

TEST(Net, BackwardDependsOnlyOnUpstreamGradient) {
  const Problem p = make_problem(8, 2);
  const auto fwd = forward(p.net, p.x);
  Matrix dlogits(p.x.rows, 4);
  std::vector<double> probs(4);
  for (std::size_t r = 0; r < p.x.rows; ++r)
    softmax_ce_grad_into(fwd.logits.row(r), LabelSpec{p.labels[r], 0.0}, 0.3, probs, dlogits.row(r));
  // The same dlogits produce the same parameter gradients whatever produced them.
  EXPECT_EQ(backward(p.net, fwd.cache, dlogits), backward(p.net, forward(p.net, p.x).cache, Matrix(dlogits)));
}

TEST(Net, TamperedBackwardMatchesSurrogate) {
  for (double a : {0.3, 0.5}) {
    for (std::size_t depth = 1; depth <= 3; ++depth) {
      const Problem p = make_problem(500 + depth, depth);
      const auto analytic = ts::flatten(ts::batch_gradient(p.net, p.x, p.labels, 0.0, a));
      const auto numeric =
          ts::fd_gradient(p.net, [&](const DenseNet& n) { return ts::batch_loss(n, p.x, p.labels, 0.0, a); });
      EXPECT_LT(scaled_max_error(analytic, numeric), 1e-6) << "alpha " << a << " depth " << depth;
    }
  }
}

TEST(Net, InputGradientMatchesFiniteDifferences) {
  Problem p = make_problem(77, 2);
  auto fwd = forward(p.net, p.x);
  Matrix dlogits(p.x.rows, 4, 0.0);
  for (std::size_t r = 0; r < p.x.rows; ++r) dlogits(r, p.labels[r]) = 1.0;
  Matrix dx;
  backward(p.net, fwd.cache, dlogits, &dx);
  ASSERT_TRUE(dx.same_shape(p.x));
  const auto objective = [&](const std::vector<double>& flat) {
    Matrix x = p.x;
    x.data = flat;
    const Matrix z = predict(p.net, x);
    double s = 0.0;
    for (std::size_t r = 0; r < x.rows; ++r) s += z(r, p.labels[r]);
    return s;
  };
  EXPECT_LT(scaled_max_error(dx.data, central_difference(objective, p.x.data)), 1e-8);
}

TEST(Net, BackwardRejectsMismatchedShapes) {
  const Problem p = make_problem(5, 2, 0.0);
  const auto fwd = forward(p.net, p.x);
  EXPECT_THROW(backward(p.net, fwd.cache, Matrix(6, 3)), InputError);
  EXPECT_THROW(backward(p.net, ForwardCache{}, Matrix(6, 4)), InputError);
}

TEST(Optimizer, TwoStepNesterovUnroll) {
  DenseLayer layer{Matrix(1, 2), {0.5}, Activation::identity};
  layer.weight.data = {1.0, -2.0};
  DenseNet net({layer});
  OptState st = OptState::for_net(net, 0.9, 0.1, true);
  Gradients g = Gradients::zeros_like(net);
  g.weight[0].data = {0.2, 0.4};
  g.bias[0] = {1.0};

  // By hand, weight entry 0 (w = 1, g = 0.2, lr = 0.1):
  //   step 1: g' = 0.2 + 0.1*1 = 0.3, v = 0.3, w = 1 - 0.1*(0.3 + 0.27) = 0.943
  //   step 2: g' = 0.2 + 0.0943 = 0.2943, v = 0.27 + 0.2943 = 0.5643,
  //           w = 0.943 - 0.1*(0.2943 + 0.50787) = 0.862783
  sgd_step(net, g, st, 0.1);
  EXPECT_NEAR(net.layers()[0].weight.data[0], 0.943, 1e-15);
  sgd_step(net, g, st, 0.1);
  EXPECT_NEAR(net.layers()[0].weight.data[0], 0.862783, 1e-15);
  EXPECT_NEAR(st.velocity.weight[0].data[0], 0.5643, 1e-15);
  // bias (b = 0.5, g = 1): g' = 1.05, v = 1.05, b = 0.5 - 0.1*(1.05 + 0.945) = 0.3005
  //   then g' = 1.03005, v = 1.975050, b = 0.3005 - 0.1*(1.03005 + 1.777545) = 0.0197405
  EXPECT_NEAR(net.layers()[0].bias[0], 0.0197405, 1e-15);
}

TEST(Optimizer, PlainMomentumAndBiasDecayFlag) {
  DenseLayer layer{Matrix(1, 1), {1.0}, Activation::identity};
  layer.weight.data = {1.0};
  DenseNet net({layer});
  OptState st = OptState::for_net(net, 0.5, 0.1, false);
  st.decay_biases = false;
  Gradients g = Gradients::zeros_like(net);
  g.weight[0].data = {1.0};
  g.bias[0] = {1.0};
  sgd_step(net, g, st, 0.1);  // v = 1.1, w = 1 - 0.11
  sgd_step(net, g, st, 0.1);  // g' = 1.089, v = 0.55 + 1.089 = 1.639, w = 0.89 - 0.1639
  EXPECT_NEAR(net.layers()[0].weight.data[0], 0.7261, 1e-15);
  // bias without decay: v = 1, then 1.5; b = 1 - 0.1 - 0.15
  EXPECT_NEAR(net.layers()[0].bias[0], 0.75, 1e-15);
}

TEST(Optimizer, PlainSgdAndZeroGradient) {
  Rng rng(6);
  DenseNet net = DenseNet::kaiming(std::vector<std::size_t>{3, 2}, Activation::relu, rng);
  const DenseNet before = net;
  OptState st = OptState::for_net(net, 0.0, 0.0);
  sgd_step(net, Gradients::zeros_like(net), st, 0.5);
  EXPECT_EQ(net, before);
  Gradients g = Gradients::zeros_like(net);
  for (auto& v : g.weight[0].data) v = 1.0;
  sgd_step(net, g, st, 0.5);
  for (std::size_t k = 0; k < 6; ++k)
    EXPECT_EQ(net.layers()[0].weight.data[k], before.layers()[0].weight.data[k] - 0.5);
}

TEST(Optimizer, RejectsBadInputs) {
  Rng rng(2);
  DenseNet net = DenseNet::kaiming(std::vector<std::size_t>{3, 2}, Activation::relu, rng);
  OptState st = OptState::for_net(net, 0.9, 0.0);
  EXPECT_THROW(sgd_step(net, Gradients::zeros_like(net), st, 0.0), DomainError);
  DenseNet other = DenseNet::kaiming(std::vector<std::size_t>{3, 4, 2}, Activation::relu, rng);
  EXPECT_THROW(sgd_step(net, Gradients::zeros_like(other), st, 0.1), InputError);
}

TEST(Optimizer, PlainSgdLossDecreasesOnSeparableData) {
  Rng rng(42);
  const std::size_t n = 40;
  Matrix x(n, 2);
  std::vector<std::size_t> labels(n);
  for (std::size_t r = 0; r < n; ++r) {
    labels[r] = r % 2;
    x(r, 0) = (labels[r] ? 2.0 : -2.0) + 0.5 * standard_normal(rng);
    x(r, 1) = standard_normal(rng);
  }
  DenseNet net = DenseNet::kaiming(std::vector<std::size_t>{2, 2}, Activation::relu, rng);
  OptState st = OptState::for_net(net, 0.0, 0.0);
  std::vector<double> losses{ts::batch_loss(net, x, labels, 0.0)};
  for (int it = 0; it < 100; ++it) {
    sgd_step(net, ts::batch_gradient(net, x, labels, 0.0, 1.0), st, 0.1);
    losses.push_back(ts::batch_loss(net, x, labels, 0.0));
  }
  for (std::size_t k = 11; k < losses.size(); ++k) EXPECT_LT(losses[k], losses[k - 1]) << "step " << k;
  EXPECT_LT(losses.back(), 0.5 * losses.front());
}

TEST(Checkpoint, RoundTripIsExact) {
  const Problem p = make_problem(9, 3, 0.0);
  std::stringstream ss;
  save_checkpoint(p.net, ss);
  const DenseNet back = load_checkpoint(ss);
  EXPECT_EQ(back, p.net);
}

TEST(Checkpoint, MalformedInputIsFormatError) {
  std::stringstream bad_header("not-a-checkpoint 1\n");
  EXPECT_THROW(load_checkpoint(bad_header), FormatError);
  const Problem p = make_problem(9, 2, 0.0);
  std::stringstream ss;
  save_checkpoint(p.net, ss);
  std::string text = ss.str();
  std::stringstream truncated(text.substr(0, text.size() / 2));
  EXPECT_THROW(load_checkpoint(truncated), FormatError);
}
