#pragma once

// Fully-connected network with explicit forward/backward passes and SGD
// with (Nesterov) momentum. The backward pass starts from dL/dlogits, which
// is where a tampered softmax gradient enters; nothing below the logits
// knows whether tampering happened.

#include <cmath>
#include <cstddef>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "sgt/error.hpp"
#include "sgt/matrix.hpp"
#include "sgt/random.hpp"

namespace sgt {

enum class Activation { identity, relu };

inline const char* to_string(Activation a) { return a == Activation::relu ? "relu" : "identity"; }

inline Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "identity") return Activation::identity;
  throw InputError("unknown activation '" + s + "'");
}

/// y = act(x W^T + b), W is out x in.
struct DenseLayer {
  Matrix weight;
  std::vector<double> bias;
  Activation activation = Activation::identity;

  std::size_t in_dim() const noexcept { return weight.cols; }
  std::size_t out_dim() const noexcept { return weight.rows; }

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

class DenseNet {
public:
  DenseNet() = default;

  explicit DenseNet(std::vector<DenseLayer> layers) : layers_(std::move(layers)) { validate(); }

  /// Layer widths {in, h1, ..., C}. Hidden layers use `hidden`, the output
  /// layer is identity. Weights ~ U(-sqrt(6/fan_in), sqrt(6/fan_in)), biases 0.
  static DenseNet kaiming(std::span<const std::size_t> widths, Activation hidden, Rng& rng) {
    if (widths.size() < 2) throw InputError("network needs at least an input and an output width");
    std::vector<DenseLayer> layers;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      const std::size_t in = widths[l], out = widths[l + 1];
      if (in == 0 || out == 0) throw InputError("layer widths must be positive");
      DenseLayer layer;
      layer.weight = Matrix(out, in);
      const double bound = std::sqrt(6.0 / static_cast<double>(in));
      for (auto& w : layer.weight.data) w = uniform(rng, -bound, bound);
      layer.bias.assign(out, 0.0);
      layer.activation = l + 2 == widths.size() ? Activation::identity : hidden;
      layers.push_back(std::move(layer));
    }
    return DenseNet(std::move(layers));
  }

  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }
  std::vector<DenseLayer>& layers() noexcept { return layers_; }
  std::size_t depth() const noexcept { return layers_.size(); }
  std::size_t input_dim() const { return layers_.front().in_dim(); }
  std::size_t output_dim() const { return layers_.back().out_dim(); }

  std::size_t parameter_count() const noexcept {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.weight.data.size() + l.bias.size();
    return n;
  }

  void validate() const {
    if (layers_.empty()) throw InputError("network has no layers");
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const auto& layer = layers_[l];
      if (layer.weight.data.size() != layer.weight.rows * layer.weight.cols || layer.weight.rows == 0 ||
          layer.weight.cols == 0)
        throw InputError("layer " + std::to_string(l) + " has a malformed weight matrix");
      if (layer.bias.size() != layer.out_dim())
        throw InputError("layer " + std::to_string(l) + " bias length does not match its output width");
      if (l > 0 && layer.in_dim() != layers_[l - 1].out_dim())
        throw InputError("layer " + std::to_string(l) + " input width " + std::to_string(layer.in_dim()) +
                         " does not match previous output width " +
                         std::to_string(layers_[l - 1].out_dim()));
      for (double w : layer.weight.data)
        if (!std::isfinite(w)) throw InputError("layer " + std::to_string(l) + " has a non-finite weight");
      for (double b : layer.bias)
        if (!std::isfinite(b)) throw InputError("layer " + std::to_string(l) + " has a non-finite bias");
    }
  }

  friend bool operator==(const DenseNet&, const DenseNet&) = default;

private:
  std::vector<DenseLayer> layers_;
};

/// Per-layer activations recorded by forward() for backward().
struct ForwardCache {
  std::vector<Matrix> inputs;  ///< input to layer l
  std::vector<Matrix> pre;     ///< pre-activation of layer l
};

struct ForwardResult {
  Matrix logits;
  ForwardCache cache;
};

namespace detail {

/// out = x W^T + b
inline void affine(const Matrix& x, const DenseLayer& layer, Matrix& out) {
  const std::size_t in = layer.in_dim(), width = layer.out_dim();
  out = Matrix(x.rows, width);
  for (std::size_t n = 0; n < x.rows; ++n) {
    const double* xr = x.data.data() + n * in;
    double* yr = out.data.data() + n * width;
    for (std::size_t o = 0; o < width; ++o) {
      const double* wr = layer.weight.data.data() + o * in;
      double acc = layer.bias[o];
      for (std::size_t i = 0; i < in; ++i) acc += xr[i] * wr[i];
      yr[o] = acc;
    }
  }
}

inline void apply_activation(Activation a, Matrix& m) {
  if (a == Activation::relu)
    for (auto& v : m.data) v = v > 0.0 ? v : 0.0;
}

inline void check_batch(const DenseNet& net, const Matrix& batch) {
  if (batch.cols != net.input_dim())
    throw InputError("batch has " + std::to_string(batch.cols) + " features, network expects " +
                     std::to_string(net.input_dim()));
  if (batch.data.size() != batch.rows * batch.cols) throw InputError("batch matrix storage is malformed");
}

}  // namespace detail

/// Logits (batch x C) plus the cache needed by backward().
inline ForwardResult forward(const DenseNet& net, const Matrix& batch) {
  detail::check_batch(net, batch);
  ForwardResult result;
  auto& cache = result.cache;
  cache.inputs.reserve(net.depth());
  cache.pre.reserve(net.depth());
  Matrix current = batch;
  for (const auto& layer : net.layers()) {
    Matrix z;
    detail::affine(current, layer, z);
    cache.inputs.push_back(std::move(current));
    current = z;
    detail::apply_activation(layer.activation, current);
    cache.pre.push_back(std::move(z));
  }
  result.logits = std::move(current);
  return result;
}

/// Forward pass without keeping activations.
inline Matrix predict(const DenseNet& net, const Matrix& batch) {
  detail::check_batch(net, batch);
  Matrix current = batch;
  for (const auto& layer : net.layers()) {
    Matrix z;
    detail::affine(current, layer, z);
    detail::apply_activation(layer.activation, z);
    current = std::move(z);
  }
  return current;
}

/// Parameter gradients, shaped like the network.
struct Gradients {
  std::vector<Matrix> weight;
  std::vector<std::vector<double>> bias;

  static Gradients zeros_like(const DenseNet& net) {
    Gradients g;
    for (const auto& l : net.layers()) {
      g.weight.emplace_back(l.weight.rows, l.weight.cols);
      g.bias.emplace_back(l.bias.size(), 0.0);
    }
    return g;
  }

  /// Global L2 norm over every parameter gradient.
  double norm() const {
    double s = 0.0;
    for (const auto& w : weight)
      for (double v : w.data) s += v * v;
    for (const auto& b : bias)
      for (double v : b) s += v * v;
    return std::sqrt(s);
  }

  void scale(double factor) {
    for (auto& w : weight)
      for (auto& v : w.data) v *= factor;
    for (auto& b : bias)
      for (auto& v : b) v *= factor;
  }

  friend bool operator==(const Gradients&, const Gradients&) = default;
};

/// Chain rule from dL/dlogits back to every parameter. When `dinput` is
/// non-null it receives dL/dbatch.
inline Gradients backward(const DenseNet& net, const ForwardCache& cache, const Matrix& dlogits,
                          Matrix* dinput = nullptr) {
  if (cache.inputs.size() != net.depth() || cache.pre.size() != net.depth())
    throw InputError("forward cache does not belong to this network");
  const Matrix& last = cache.pre.back();
  if (!dlogits.same_shape(last))
    throw InputError("dlogits shape " + shape_string(dlogits) + " does not match logits shape " +
                     shape_string(last));

  Gradients grads = Gradients::zeros_like(net);
  Matrix delta = dlogits;
  for (std::size_t l = net.depth(); l-- > 0;) {
    const auto& layer = net.layers()[l];
    const Matrix& pre = cache.pre[l];
    if (layer.activation == Activation::relu)
      for (std::size_t k = 0; k < delta.data.size(); ++k)
        if (!(pre.data[k] > 0.0)) delta.data[k] = 0.0;

    const Matrix& x = cache.inputs[l];
    const std::size_t in = layer.in_dim(), width = layer.out_dim();
    auto& gw = grads.weight[l];
    auto& gb = grads.bias[l];
    for (std::size_t n = 0; n < delta.rows; ++n) {
      const double* dr = delta.data.data() + n * width;
      const double* xr = x.data.data() + n * in;
      for (std::size_t o = 0; o < width; ++o) {
        const double d = dr[o];
        if (d == 0.0) continue;
        gb[o] += d;
        double* gwr = gw.data.data() + o * in;
        for (std::size_t i = 0; i < in; ++i) gwr[i] += d * xr[i];
      }
    }

    if (l == 0 && dinput == nullptr) break;
    Matrix below(delta.rows, in);
    for (std::size_t n = 0; n < delta.rows; ++n) {
      const double* dr = delta.data.data() + n * width;
      double* br = below.data.data() + n * in;
      for (std::size_t o = 0; o < width; ++o) {
        const double d = dr[o];
        if (d == 0.0) continue;
        const double* wr = layer.weight.data.data() + o * in;
        for (std::size_t i = 0; i < in; ++i) br[i] += d * wr[i];
      }
    }
    if (l == 0) {
      *dinput = std::move(below);
      break;
    }
    delta = std::move(below);
  }
  return grads;
}

/// SGD state: one velocity buffer per parameter tensor.
struct OptState {
  Gradients velocity;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  bool nesterov = true;
  bool decay_biases = true;

  static OptState for_net(const DenseNet& net, double momentum, double weight_decay, bool nesterov = true) {
    OptState s;
    s.velocity = Gradients::zeros_like(net);
    s.momentum = momentum;
    s.weight_decay = weight_decay;
    s.nesterov = nesterov;
    return s;
  }
};

namespace detail {

inline void sgd_update(std::span<double> w, std::span<const double> g, std::span<double> v, double lr,
                       double momentum, double wd, bool nesterov) {
  for (std::size_t k = 0; k < w.size(); ++k) {
    const double grad = g[k] + wd * w[k];
    v[k] = momentum * v[k] + grad;
    const double step = nesterov ? grad + momentum * v[k] : v[k];
    w[k] -= lr * step;
  }
}

}  // namespace detail

/// One optimizer step. Weight decay is folded into the gradient
/// (g <- g + wd w), then v <- mu v + g and
/// w <- w - lr (g + mu v) with Nesterov, w <- w - lr v without.
inline void sgd_step(DenseNet& net, const Gradients& grads, OptState& state, double lr) {
  if (!(lr > 0.0)) throw DomainError("learning rate must be positive, got " + std::to_string(lr));
  if (grads.weight.size() != net.depth() || grads.bias.size() != net.depth() ||
      state.velocity.weight.size() != net.depth() || state.velocity.bias.size() != net.depth())
    throw InputError("gradient/optimizer state depth does not match the network");
  for (std::size_t l = 0; l < net.depth(); ++l) {
    auto& layer = net.layers()[l];
    if (!grads.weight[l].same_shape(layer.weight) || !state.velocity.weight[l].same_shape(layer.weight) ||
        grads.bias[l].size() != layer.bias.size() || state.velocity.bias[l].size() != layer.bias.size())
      throw InputError("gradient/optimizer state shape mismatch at layer " + std::to_string(l));
    detail::sgd_update(layer.weight.data, grads.weight[l].data, state.velocity.weight[l].data, lr,
                       state.momentum, state.weight_decay, state.nesterov);
    detail::sgd_update(layer.bias, grads.bias[l], state.velocity.bias[l], lr, state.momentum,
                       state.decay_biases ? state.weight_decay : 0.0, state.nesterov);
  }
}

// Checkpoint layout (text, one token group per line):
//
//   sgt-checkpoint 1
//   layers <L>
//   layer <in> <out> <relu|identity>     repeated L times, each followed by
//   <out lines of <in> hex floats>       the weight rows
//   <one line of <out> hex floats>       and the bias
//
// Floats are written with %a so a load reproduces the parameters exactly.

inline constexpr int kCheckpointVersion = 1;

inline void save_checkpoint(const DenseNet& net, std::ostream& os) {
  char buf[64];
  auto put = [&](double v, bool last) {
    std::snprintf(buf, sizeof buf, "%a", v);
    os << buf << (last ? '\n' : ' ');
  };
  os << "sgt-checkpoint " << kCheckpointVersion << '\n';
  os << "layers " << net.depth() << '\n';
  for (const auto& layer : net.layers()) {
    os << "layer " << layer.in_dim() << ' ' << layer.out_dim() << ' ' << to_string(layer.activation) << '\n';
    for (std::size_t o = 0; o < layer.out_dim(); ++o)
      for (std::size_t i = 0; i < layer.in_dim(); ++i) put(layer.weight(o, i), i + 1 == layer.in_dim());
    for (std::size_t o = 0; o < layer.out_dim(); ++o) put(layer.bias[o], o + 1 == layer.out_dim());
  }
  if (!os) throw IoError("failed to write checkpoint");
}

inline DenseNet load_checkpoint(std::istream& is) {
  auto fail = [&](const std::string& what) -> FormatError {
    const auto pos = is.tellg();
    return FormatError("checkpoint: " + what, pos < 0 ? 0 : static_cast<std::uint64_t>(pos));
  };
  std::string tag;
  int version = 0;
  if (!(is >> tag >> version) || tag != "sgt-checkpoint") throw fail("missing header");
  if (version != kCheckpointVersion) throw fail("unsupported version " + std::to_string(version));
  std::size_t count = 0;
  if (!(is >> tag >> count) || tag != "layers" || count == 0) throw fail("bad layer count");
  auto read_double = [&]() {
    std::string tok;
    if (!(is >> tok)) throw fail("truncated parameter data");
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end != tok.c_str() + tok.size()) throw fail("bad number '" + tok + "'");
    return v;
  };
  std::vector<DenseLayer> layers;
  for (std::size_t l = 0; l < count; ++l) {
    std::size_t in = 0, out = 0;
    std::string act;
    if (!(is >> tag >> in >> out >> act) || tag != "layer") throw fail("bad layer header");
    DenseLayer layer;
    try {
      layer.activation = parse_activation(act);
    } catch (const InputError&) {
      throw fail("unknown activation '" + act + "'");
    }
    layer.weight = Matrix(out, in);
    for (auto& w : layer.weight.data) w = read_double();
    layer.bias.resize(out);
    for (auto& b : layer.bias) b = read_double();
    layers.push_back(std::move(layer));
  }
  return DenseNet(std::move(layers));
}

}  // namespace sgt
