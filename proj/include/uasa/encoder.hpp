#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "uasa/error.hpp"
#include "uasa/tensor.hpp"

namespace uasa {

enum class Activation { relu, tanh };

inline Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  throw InvalidConfig("unknown activation '" + s + "' (expected relu|tanh)");
}

inline const char* to_string(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }

// Multilayer perceptron: hidden layers use `activation`, the output layer is
// linear. layer_sizes = {d} is the identity encoder (no layers at all).
struct EncoderParams {
  std::vector<std::size_t> layer_sizes;
  Activation activation = Activation::relu;
  std::vector<Matrix> weights;  // weights[l] is out x in
  std::vector<Matrix> biases;   // biases[l] is 1 x out

  std::size_t input_dim() const { return layer_sizes.front(); }
  std::size_t output_dim() const { return layer_sizes.back(); }
  std::size_t num_layers() const { return weights.size(); }
  bool identity() const { return weights.empty(); }

  std::vector<std::span<double>> tensors() {
    std::vector<std::span<double>> out;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      out.push_back(weights[l].flat());
      out.push_back(biases[l].flat());
    }
    return out;
  }
  std::vector<std::span<const double>> tensors() const {
    std::vector<std::span<const double>> out;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      out.push_back(weights[l].flat());
      out.push_back(biases[l].flat());
    }
    return out;
  }

  friend bool operator==(const EncoderParams&, const EncoderParams&) = default;
};

inline EncoderParams make_encoder(std::vector<std::size_t> layer_sizes, Activation act) {
  if (layer_sizes.empty()) throw InvalidConfig("encoder needs at least one layer size");
  for (auto s : layer_sizes)
    if (s == 0) throw InvalidConfig("encoder layer sizes must be positive");
  EncoderParams p;
  p.layer_sizes = std::move(layer_sizes);
  p.activation = act;
  for (std::size_t l = 0; l + 1 < p.layer_sizes.size(); ++l) {
    p.weights.emplace_back(p.layer_sizes[l + 1], p.layer_sizes[l]);
    p.biases.emplace_back(1, p.layer_sizes[l + 1]);
  }
  return p;
}

// Uniform in [-s, s], s = sqrt(6 / (fan_in + fan_out)); biases start at zero.
inline void init_encoder(EncoderParams& p, std::mt19937_64& rng) {
  for (auto& w : p.weights) {
    const double s = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
    std::uniform_real_distribution<double> u(-s, s);
    for (auto& x : w.flat()) x = u(rng);
  }
  for (auto& b : p.biases) b.fill(0.0);
}

// Intermediate values of a batched forward pass. inputs[l] is the input to
// layer l; pre[l] its pre-activation. The final output is `output`.
struct ForwardCache {
  std::vector<Matrix> inputs;
  std::vector<Matrix> pre;
  Matrix output;
};

inline ForwardCache forward_batch(const EncoderParams& p, const Matrix& x) {
  if (x.cols() != p.input_dim())
    throw InvalidInput("encoder input dimension " + std::to_string(x.cols()) + " != " +
                       std::to_string(p.input_dim()));
  ForwardCache cache;
  Matrix cur = x;
  const std::size_t n = x.rows();
  for (std::size_t l = 0; l < p.num_layers(); ++l) {
    const Matrix& w = p.weights[l];
    const auto b = p.biases[l].row(0);
    Matrix z(n, w.rows());
    for (std::size_t i = 0; i < n; ++i) {
      auto in = cur.row(i);
      auto out = z.row(i);
      for (std::size_t o = 0; o < w.rows(); ++o) out[o] = b[o] + dot(w.row(o), in);
    }
    cache.inputs.push_back(std::move(cur));
    const bool hidden = l + 1 < p.num_layers();
    Matrix a = z;
    if (hidden) {
      for (auto& v : a.flat())
        v = p.activation == Activation::relu ? (v > 0.0 ? v : 0.0) : std::tanh(v);
    }
    cache.pre.push_back(std::move(z));
    cur = std::move(a);
  }
  cache.output = std::move(cur);
  return cache;
}

inline std::vector<double> forward(const EncoderParams& p, std::span<const double> input) {
  Matrix x(1, input.size());
  for (std::size_t i = 0; i < input.size(); ++i) x(0, i) = input[i];
  auto cache = forward_batch(p, x);
  return std::vector<double>(cache.output.flat().begin(), cache.output.flat().end());
}

struct EncoderGrads {
  std::vector<Matrix> weights;
  std::vector<Matrix> biases;
  Matrix input;

  std::vector<std::span<const double>> tensors() const {
    std::vector<std::span<const double>> out;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      out.push_back(weights[l].flat());
      out.push_back(biases[l].flat());
    }
    return out;
  }
};

// Gradients of sum_i <output_i, output_grad_i> w.r.t. every parameter and input.
inline EncoderGrads backward_batch(const EncoderParams& p, const ForwardCache& cache,
                                   const Matrix& output_grad) {
  if (!output_grad.same_shape(cache.output)) throw InvalidInput("backward: output_grad shape mismatch");
  EncoderGrads g;
  for (std::size_t l = 0; l < p.num_layers(); ++l) {
    g.weights.emplace_back(p.weights[l].rows(), p.weights[l].cols());
    g.biases.emplace_back(1, p.weights[l].rows());
  }
  Matrix delta = output_grad;
  const std::size_t n = output_grad.rows();
  for (std::size_t l = p.num_layers(); l-- > 0;) {
    const bool hidden = l + 1 < p.num_layers();
    if (hidden) {
      const Matrix& z = cache.pre[l];
      auto dz = delta.flat();
      auto zf = z.flat();
      for (std::size_t k = 0; k < dz.size(); ++k) {
        if (p.activation == Activation::relu) {
          if (!(zf[k] > 0.0)) dz[k] = 0.0;
        } else {
          const double t = std::tanh(zf[k]);
          dz[k] *= 1.0 - t * t;
        }
      }
    }
    const Matrix& w = p.weights[l];
    const Matrix& in = cache.inputs[l];
    Matrix& gw = g.weights[l];
    auto gb = g.biases[l].row(0);
    Matrix next(n, w.cols());
    for (std::size_t i = 0; i < n; ++i) {
      auto d = delta.row(i);
      auto x = in.row(i);
      auto nx = next.row(i);
      for (std::size_t o = 0; o < w.rows(); ++o) {
        if (d[o] == 0.0) continue;
        gb[o] += d[o];
        axpy(d[o], x, gw.row(o));
        axpy(d[o], w.row(o), nx);
      }
    }
    delta = std::move(next);
  }
  g.input = std::move(delta);
  return g;
}

inline EncoderGrads backward(const EncoderParams& p, std::span<const double> input,
                             std::span<const double> output_grad) {
  Matrix x(1, input.size());
  for (std::size_t i = 0; i < input.size(); ++i) x(0, i) = input[i];
  auto cache = forward_batch(p, x);
  if (output_grad.size() != cache.output.cols()) throw InvalidInput("backward: output_grad shape mismatch");
  Matrix og(1, output_grad.size());
  for (std::size_t i = 0; i < output_grad.size(); ++i) og(0, i) = output_grad[i];
  return backward_batch(p, cache, og);
}

// SGD with heavy-ball momentum: v <- mu v + g; theta <- theta - lr v.
class SgdMomentum {
 public:
  SgdMomentum() = default;
  SgdMomentum(double learning_rate, double momentum) : lr_(learning_rate), momentum_(momentum) {
    if (!(learning_rate > 0.0)) throw InvalidConfig("learning_rate must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidConfig("momentum must lie in [0, 1)");
  }

  void step(const std::vector<std::span<double>>& params,
            const std::vector<std::span<const double>>& grads) {
    if (params.size() != grads.size()) throw InvalidInput("sgd: parameter/gradient count mismatch");
    if (velocity_.empty()) {
      for (auto& p : params) velocity_.emplace_back(p.size(), 0.0);
    }
    if (velocity_.size() != params.size()) throw InvalidInput("sgd: optimizer state shape mismatch");
    for (std::size_t t = 0; t < params.size(); ++t) {
      auto& v = velocity_[t];
      if (params[t].size() != v.size() || grads[t].size() != v.size())
        throw InvalidInput("sgd: tensor shape mismatch");
      for (std::size_t k = 0; k < v.size(); ++k) {
        v[k] = momentum_ * v[k] + grads[t][k];
        params[t][k] -= lr_ * v[k];
      }
    }
  }

  double learning_rate() const noexcept { return lr_; }
  double momentum() const noexcept { return momentum_; }
  std::vector<std::vector<double>>& velocity() noexcept { return velocity_; }
  const std::vector<std::vector<double>>& velocity() const noexcept { return velocity_; }

 private:
  double lr_ = 1e-2;
  double momentum_ = 0.9;
  std::vector<std::vector<double>> velocity_;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_coordinate = 0;
  std::size_t coordinates_checked = 0;
  bool passed = true;
};

// Loss evaluated at theta; when grad is non-null it receives the analytic gradient.
using ScalarLossFn = std::function<double(std::span<const double> theta, std::vector<double>* grad)>;

// Compares the analytic gradient against central differences on `coordinates`
// randomly chosen entries (all entries when there are fewer).
inline GradCheckReport grad_check(const ScalarLossFn& loss, std::span<const double> theta,
                                  double tolerance, std::size_t coordinates = 20,
                                  std::uint64_t seed = 7, double step = 1e-5) {
  std::vector<double> work(theta.begin(), theta.end());
  std::vector<double> analytic;
  loss(work, &analytic);
  std::vector<std::size_t> coords;
  if (theta.size() <= coordinates) {
    for (std::size_t i = 0; i < theta.size(); ++i) coords.push_back(i);
  } else {
    // distinct coordinates: partial Fisher-Yates over all indices
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> all(theta.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    for (std::size_t k = 0; k < coordinates; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, all.size() - 1);
      std::swap(all[k], all[pick(rng)]);
      coords.push_back(all[k]);
    }
  }
  GradCheckReport rep;
  for (auto c : coords) {
    const double orig = work[c];
    work[c] = orig + step;
    const double lp = loss(work, nullptr);
    work[c] = orig - step;
    const double lm = loss(work, nullptr);
    work[c] = orig;
    const double numeric = (lp - lm) / (2.0 * step);
    const double a = analytic.at(c);
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
    const double rel = std::abs(a - numeric) / denom;
    if (rel > rep.max_rel_error) {
      rep.max_rel_error = rel;
      rep.worst_coordinate = c;
    }
    ++rep.coordinates_checked;
  }
  rep.passed = rep.max_rel_error < tolerance;
  return rep;
}

}  // namespace uasa
