#pragma once

#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "uasa/error.hpp"
#include "uasa/numeric.hpp"
#include "uasa/tensor.hpp"

namespace uasa {

// Cosine classifier. Row c of `weights` is the unit-norm prototype m_c of
// source class c (column m_c of M), so logits are m_c . x.
struct PrototypeBank {
  Matrix weights;  // K_s x d
  double sigma = 0.05;

  std::size_t num_classes() const { return weights.rows(); }
  std::size_t dim() const { return weights.cols(); }
  std::span<const double> prototype(std::size_t c) const { return weights.row(c); }

  friend bool operator==(const PrototypeBank&, const PrototypeBank&) = default;
};

inline PrototypeBank random_prototypes(std::size_t num_classes, std::size_t dim, double sigma,
                                       std::mt19937_64& rng) {
  check_temperature(sigma);
  PrototypeBank b{Matrix(num_classes, dim), sigma};
  std::normal_distribution<double> g(0.0, 1.0);
  for (std::size_t c = 0; c < num_classes; ++c) {
    do {
      for (auto& v : b.weights.row(c)) v = g(rng);
    } while (l2_normalize_inplace(b.weights.row(c)) == 0.0);
  }
  return b;
}

inline void renormalize_prototypes(PrototypeBank& bank) {
  for (std::size_t c = 0; c < bank.num_classes(); ++c)
    if (l2_normalize_inplace(bank.weights.row(c)) == 0.0)
      throw InvalidState("prototype " + std::to_string(c + 1) + " collapsed to the zero vector");
}

// Value of a loss together with its gradients w.r.t. the (L2-normalized) batch
// features and the prototype matrix.
struct LossGrad {
  double value = 0.0;
  Matrix d_features;
  Matrix d_prototypes;
};

inline LossGrad zero_loss(std::size_t batch, const PrototypeBank& bank) {
  return {0.0, Matrix(batch, bank.dim()), Matrix(bank.num_classes(), bank.dim())};
}

// Unscaled cosine logits m_c . x for every row of x (rows assumed unit-norm).
inline Matrix class_logits(const PrototypeBank& bank, const Matrix& x) {
  if (x.cols() != bank.dim()) throw InvalidInput("feature dimension does not match prototypes");
  Matrix out(x.rows(), bank.num_classes());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t c = 0; c < bank.num_classes(); ++c) out(i, c) = dot(bank.weights.row(c), x.row(i));
  return out;
}

inline Matrix class_posteriors(const PrototypeBank& bank, const Matrix& x) {
  Matrix logits = class_logits(bank, x);
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto p = softmax_temperature(logits.row(i), bank.sigma);
    std::copy(p.begin(), p.end(), logits.row(i).begin());
  }
  return logits;
}

inline std::vector<double> source_posterior(const PrototypeBank& bank, std::span<const double> feature) {
  if (feature.size() != bank.dim()) throw InvalidInput("feature dimension does not match prototypes");
  std::vector<double> logits(bank.num_classes());
  for (std::size_t c = 0; c < logits.size(); ++c) logits[c] = dot(bank.weights.row(c), feature);
  return softmax_temperature(logits, bank.sigma);
}

// Adds the chain rule through logits l = M x: dX += G M, dM += G^T X.
inline void accumulate_logit_grads(const Matrix& x, const PrototypeBank& bank, const Matrix& dlogits,
                                   LossGrad& out) {
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t c = 0; c < bank.num_classes(); ++c) {
      const double g = dlogits(i, c);
      if (g == 0.0) continue;
      axpy(g, bank.weights.row(c), out.d_features.row(i));
      axpy(g, x.row(i), out.d_prototypes.row(c));
    }
}

// -1/(N K_s) sum_i log p(y_i | x_i), N the batch size.
inline LossGrad lpb_loss(const PrototypeBank& bank, const Matrix& x, std::span<const int> labels) {
  if (x.rows() == 0) throw InvalidInput("lpb_loss: empty batch");
  if (labels.size() != x.rows()) throw InvalidInput("lpb_loss: label count mismatch");
  const std::size_t k = bank.num_classes();
  const double scale = 1.0 / (static_cast<double>(x.rows()) * static_cast<double>(k));
  LossGrad out = zero_loss(x.rows(), bank);
  Matrix logits = class_logits(bank, x);
  Matrix dlogits(x.rows(), k);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= k)
      throw InvalidInput("lpb_loss: label out of range at batch row " + std::to_string(i));
    auto logp = log_softmax_temperature(logits.row(i), bank.sigma);
    out.value -= scale * logp[static_cast<std::size_t>(y)];
    for (std::size_t c = 0; c < k; ++c) {
      const double p = std::exp(logp[c]);
      dlogits(i, c) = scale * (p - (static_cast<std::size_t>(y) == c ? 1.0 : 0.0)) / bank.sigma;
    }
  }
  accumulate_logit_grads(x, bank, dlogits, out);
  return out;
}

}  // namespace uasa
