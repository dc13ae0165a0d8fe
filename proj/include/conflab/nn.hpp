#pragma once

// Dense feed-forward classifier: ReLU hidden layers, softmax output,
// soft-label weighted cross-entropy and exact backpropagation.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace conflab {

/// Row-major dense matrix of doubles.
class Matrix {
public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  double &operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  std::vector<double> &data() noexcept { return data_; }
  const std::vector<double> &data() const noexcept { return data_; }

  bool operator==(const Matrix &) const = default;

private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

struct Layer {
  Matrix weight; // fan_out x fan_in
  std::vector<double> bias;

  std::size_t fan_in() const noexcept { return weight.cols(); }
  std::size_t fan_out() const noexcept { return weight.rows(); }

  bool operator==(const Layer &) const = default;
};

/// MLP parameters. Hidden layers use ReLU, the last layer is linear and
/// feeds a softmax.
struct Network {
  std::vector<Layer> layers;
  std::size_t class_count = 0;

  std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().fan_in(); }
  bool operator==(const Network &) const = default;
};

/// Gradient with the same layout as Network.
struct Gradients {
  std::vector<Layer> layers;
};

/// Inputs to the loss for one mini-batch.
struct Batch {
  Matrix inputs;      // batch x dim
  Matrix soft_labels; // batch x classes
  std::vector<double> weights;
  std::vector<std::size_t> example_ids;
};

inline constexpr double kProbabilityFloor = 1e-12;

namespace detail {

inline void require(bool ok, const std::string &what) {
  if (!ok) {
    throw std::invalid_argument(what);
  }
}

inline void require_finite(std::span<const double> values, const char *what) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw std::domain_error(std::string(what) + ": non-finite value");
    }
  }
}

// out = in * W^T + b
inline Matrix affine(const Matrix &in, const Layer &layer) {
  const std::size_t n = in.rows();
  const std::size_t fan_in = layer.fan_in();
  const std::size_t fan_out = layer.fan_out();
  Matrix out(n, fan_out);
  for (std::size_t b = 0; b < n; ++b) {
    const double *x = in.row(b).data();
    double *y = out.row(b).data();
    for (std::size_t o = 0; o < fan_out; ++o) {
      const double *w = layer.weight.row(o).data();
      double acc = layer.bias[o];
      for (std::size_t k = 0; k < fan_in; ++k) {
        acc += w[k] * x[k];
      }
      y[o] = acc;
    }
  }
  return out;
}

inline void softmax_rows(Matrix &logits) {
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double &v : row) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (double &v : row) {
      v /= sum;
    }
  }
}

} // namespace detail

/// Builds an MLP with the given layer widths (input, hidden..., classes) and
/// He-normal weights; biases start at zero.
inline Network make_network(std::span<const std::size_t> widths, std::uint64_t seed) {
  detail::require(widths.size() >= 2, "network needs at least an input and an output width");
  for (std::size_t w : widths) {
    detail::require(w > 0, "layer widths must be positive");
  }
  std::mt19937_64 rng(seed);
  Network net;
  net.class_count = widths.back();
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    Layer layer{Matrix(widths[l + 1], widths[l]), std::vector<double>(widths[l + 1], 0.0)};
    std::normal_distribution<double> init(0.0, std::sqrt(2.0 / static_cast<double>(widths[l])));
    for (double &w : layer.weight.data()) {
      w = init(rng);
    }
    net.layers.push_back(std::move(layer));
  }
  return net;
}

inline Network make_network(std::initializer_list<std::size_t> widths, std::uint64_t seed) {
  return make_network(std::span<const std::size_t>(widths.begin(), widths.size()), seed);
}

inline void validate(const Network &net) {
  detail::require(!net.layers.empty(), "network has no layers");
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const Layer &layer = net.layers[l];
    detail::require(layer.bias.size() == layer.fan_out(), "bias length must equal fan_out");
    if (l > 0) {
      detail::require(layer.fan_in() == net.layers[l - 1].fan_out(), "adjacent layer dimensions do not compose");
    }
    detail::require_finite(layer.weight.data(), "network weight");
    detail::require_finite(layer.bias, "network bias");
  }
  detail::require(net.layers.back().fan_out() == net.class_count, "output width must equal class_count");
}

/// Activations kept for the backward pass.
struct ForwardPass {
  std::vector<Matrix> layer_inputs; // input to each layer (post-activation of previous)
  Matrix probs;
};

inline ForwardPass forward_pass(const Network &net, const Matrix &inputs) {
  detail::require(!net.layers.empty(), "network has no layers");
  if (inputs.cols() != net.input_dim()) {
    throw std::invalid_argument("input dim " + std::to_string(inputs.cols()) + " does not match fan_in " +
                                std::to_string(net.input_dim()));
  }
  detail::require_finite(inputs.data(), "forward input");

  ForwardPass pass;
  pass.layer_inputs.reserve(net.layers.size());
  Matrix current = inputs;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    Matrix z = detail::affine(current, net.layers[l]);
    pass.layer_inputs.push_back(std::move(current));
    if (l + 1 < net.layers.size()) {
      for (double &v : z.data()) {
        v = v > 0.0 ? v : 0.0;
      }
    }
    current = std::move(z);
  }
  detail::softmax_rows(current);
  pass.probs = std::move(current);
  return pass;
}

/// Class probabilities, one simplex row per input row.
inline Matrix forward(const Network &net, const Matrix &inputs) { return forward_pass(net, inputs).probs; }

/// -(1/sum w) * sum_i w_i * sum_j t_ij * log max(p_ij, 1e-12)
inline double weighted_soft_ce(const Matrix &probs, const Matrix &soft_labels, std::span<const double> weights) {
  detail::require(probs.rows() == soft_labels.rows() && probs.cols() == soft_labels.cols(),
                  "probs and soft_labels shapes differ");
  detail::require(weights.size() == probs.rows(), "weights length must equal batch size");
  double total_weight = 0.0;
  for (double w : weights) {
    total_weight += w;
  }
  if (!(total_weight > 0.0)) {
    throw std::invalid_argument("degenerate batch: sum of weights is zero");
  }
  double loss = 0.0;
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    if (weights[i] == 0.0) {
      continue;
    }
    double row_loss = 0.0;
    for (std::size_t j = 0; j < probs.cols(); ++j) {
      const double t = soft_labels(i, j);
      if (t != 0.0) {
        row_loss -= t * std::log(std::max(probs(i, j), kProbabilityFloor));
      }
    }
    loss += weights[i] * row_loss;
  }
  return loss / total_weight;
}

/// Gradient of weighted_soft_ce with respect to every parameter, reusing the
/// activations of a forward pass on the same inputs.
inline Gradients backward(const Network &net, const ForwardPass &pass, const Matrix &soft_labels,
                          std::span<const double> weights) {
  const Matrix &probs = pass.probs;
  detail::require(pass.layer_inputs.size() == net.layers.size(), "forward pass does not match network");
  detail::require(soft_labels.rows() == probs.rows() && soft_labels.cols() == probs.cols(),
                  "soft labels do not match forward pass");
  detail::require(weights.size() == probs.rows(), "weights length must equal batch size");
  double total_weight = 0.0;
  for (double w : weights) {
    total_weight += w;
  }
  if (!(total_weight > 0.0)) {
    throw std::invalid_argument("degenerate batch: sum of weights is zero");
  }

  const std::size_t n = probs.rows();
  // dL/dz for the output logits
  Matrix delta(n, probs.cols());
  for (std::size_t i = 0; i < n; ++i) {
    const double scale = weights[i] / total_weight;
    for (std::size_t j = 0; j < probs.cols(); ++j) {
      delta(i, j) = scale * (probs(i, j) - soft_labels(i, j));
    }
  }

  Gradients grads;
  grads.layers.resize(net.layers.size());
  for (std::size_t l = net.layers.size(); l-- > 0;) {
    const Layer &layer = net.layers[l];
    const Matrix &in = pass.layer_inputs[l];
    Layer &g = grads.layers[l];
    g.weight = Matrix(layer.fan_out(), layer.fan_in());
    g.bias.assign(layer.fan_out(), 0.0);
    for (std::size_t b = 0; b < n; ++b) {
      const double *x = in.row(b).data();
      for (std::size_t o = 0; o < layer.fan_out(); ++o) {
        const double d = delta(b, o);
        if (d == 0.0) {
          continue;
        }
        g.bias[o] += d;
        double *gw = g.weight.row(o).data();
        for (std::size_t k = 0; k < layer.fan_in(); ++k) {
          gw[k] += d * x[k];
        }
      }
    }
    if (l == 0) {
      break;
    }
    // Propagate through W and the ReLU of the previous layer; `in` holds that
    // layer's post-activation, which is zero exactly where the ReLU was inactive.
    Matrix prev(n, layer.fan_in());
    for (std::size_t b = 0; b < n; ++b) {
      const double *x = in.row(b).data();
      double *p = prev.row(b).data();
      for (std::size_t o = 0; o < layer.fan_out(); ++o) {
        const double d = delta(b, o);
        if (d == 0.0) {
          continue;
        }
        const double *w = layer.weight.row(o).data();
        for (std::size_t k = 0; k < layer.fan_in(); ++k) {
          p[k] += d * w[k];
        }
      }
      for (std::size_t k = 0; k < layer.fan_in(); ++k) {
        if (x[k] <= 0.0) {
          p[k] = 0.0;
        }
      }
    }
    delta = std::move(prev);
  }

  for (const Layer &g : grads.layers) {
    detail::require_finite(g.weight.data(), "gradient");
    detail::require_finite(g.bias, "gradient");
  }
  return grads;
}

inline Gradients backward(const Network &net, const Batch &batch) {
  return backward(net, forward_pass(net, batch.inputs), batch.soft_labels, batch.weights);
}

inline void sgd_step(Network &net, const Gradients &grads, double learning_rate) {
  detail::require(grads.layers.size() == net.layers.size(), "gradient does not match network");
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    Layer &layer = net.layers[l];
    const Layer &g = grads.layers[l];
    detail::require(g.weight.rows() == layer.weight.rows() && g.weight.cols() == layer.weight.cols() &&
                        g.bias.size() == layer.bias.size(),
                    "gradient shape mismatch");
    auto &w = layer.weight.data();
    const auto &gw = g.weight.data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      w[k] -= learning_rate * gw[k];
    }
    for (std::size_t k = 0; k < layer.bias.size(); ++k) {
      layer.bias[k] -= learning_rate * g.bias[k];
    }
  }
}

/// SGD with optional heavy-ball momentum and L2 weight decay. With both at
/// zero each step is exactly sgd_step.
class SgdOptimizer {
public:
  SgdOptimizer(double learning_rate, double momentum = 0.0, double weight_decay = 0.0)
      : learning_rate_(learning_rate), momentum_(momentum), weight_decay_(weight_decay) {
    detail::require(learning_rate >= 0.0, "learning_rate must be non-negative");
    detail::require(momentum >= 0.0 && momentum < 1.0, "sgd momentum must be in [0, 1)");
    detail::require(weight_decay >= 0.0, "weight_decay must be non-negative");
  }

  void step(Network &net, Gradients grads) {
    if (momentum_ == 0.0 && weight_decay_ == 0.0) {
      sgd_step(net, grads, learning_rate_);
      return;
    }
    if (velocity_.layers.empty()) {
      velocity_.layers.resize(net.layers.size());
      for (std::size_t l = 0; l < net.layers.size(); ++l) {
        velocity_.layers[l].weight = Matrix(net.layers[l].fan_out(), net.layers[l].fan_in());
        velocity_.layers[l].bias.assign(net.layers[l].fan_out(), 0.0);
      }
    }
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      auto update = [&](std::vector<double> &g, std::vector<double> &v, const std::vector<double> &w) {
        for (std::size_t k = 0; k < g.size(); ++k) {
          v[k] = momentum_ * v[k] + g[k] + weight_decay_ * w[k];
          g[k] = v[k];
        }
      };
      update(grads.layers[l].weight.data(), velocity_.layers[l].weight.data(), net.layers[l].weight.data());
      update(grads.layers[l].bias, velocity_.layers[l].bias, net.layers[l].bias);
    }
    sgd_step(net, grads, learning_rate_);
  }

private:
  double learning_rate_;
  double momentum_;
  double weight_decay_;
  Gradients velocity_;
};

/// argmax with ties resolved to the lowest class index.
inline std::size_t argmax(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j) {
    if (row[j] > row[best]) {
      best = j;
    }
  }
  return best;
}

} // namespace conflab
