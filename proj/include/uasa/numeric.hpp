#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "uasa/error.hpp"
#include "uasa/tensor.hpp"

namespace uasa {

// Floor applied to probabilities before taking a logarithm.
inline constexpr double kProbEpsilon = 1e-12;

struct Normalized {
  std::vector<double> values;
  double norm = 0.0;
  bool degenerate = false;  // input was the zero vector; values left as zeros
};

inline Normalized l2_normalize(std::span<const double> v) {
  Normalized out{std::vector<double>(v.begin(), v.end()), 0.0, false};
  out.norm = std::sqrt(dot(v, v));
  if (out.norm == 0.0) {
    out.degenerate = true;
    return out;
  }
  for (auto& x : out.values) x /= out.norm;
  return out;
}

// In-place variant. Returns the original norm; zero means the row was left untouched.
inline double l2_normalize_inplace(std::span<double> v) noexcept {
  const double n = std::sqrt(dot(v, v));
  if (n == 0.0) return 0.0;
  for (auto& x : v) x /= n;
  return n;
}

inline void check_temperature(double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma))
    throw InvalidParameter("temperature sigma must be positive and finite");
}

inline std::vector<double> softmax_temperature(std::span<const double> logits, double sigma) {
  check_temperature(sigma);
  if (logits.empty()) throw InvalidInput("softmax over an empty vector");
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp((logits[i] - mx) / sigma);
    z += p[i];
  }
  for (auto& x : p) x /= z;
  return p;
}

// log of softmax_temperature, exact (never -inf for finite logits).
inline std::vector<double> log_softmax_temperature(std::span<const double> logits, double sigma) {
  check_temperature(sigma);
  if (logits.empty()) throw InvalidInput("softmax over an empty vector");
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp((l - mx) / sigma);
  const double lz = std::log(z);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = (logits[i] - mx) / sigma - lz;
  return out;
}

// Shannon entropy in nats, with 0 ln 0 = 0.
inline double entropy(std::span<const double> p) noexcept {
  double h = 0.0;
  for (double x : p)
    if (x > 0.0) h -= x * std::log(std::max(x, kProbEpsilon));
  return h;
}

// (KL(p||q) + KL(q||p)) / 2 with both arguments floored at kProbEpsilon.
inline double symmetric_kl(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw InvalidInput("symmetric_kl: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double a = std::max(p[i], kProbEpsilon);
    const double b = std::max(q[i], kProbEpsilon);
    s += (a - b) * (std::log(a) - std::log(b));
  }
  return std::max(0.0, 0.5 * s);
}

inline double cosine_similarity(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw InvalidInput("cosine_similarity: length mismatch");
  const double nu = std::sqrt(dot(u, u));
  const double nv = std::sqrt(dot(v, v));
  if (nu == 0.0 || nv == 0.0) throw InvalidInput("cosine_similarity: zero vector");
  return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
}

// Smallest index attaining the maximum.
inline std::size_t argmax_tiebreak(std::span<const double> values) {
  if (values.empty()) throw InvalidInput("argmax over an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

}  // namespace uasa
