#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "uasa/error.hpp"
#include "uasa/lpb.hpp"
#include "uasa/numeric.hpp"
#include "uasa/tensor.hpp"

namespace uasa {

// Row j caches the unit-norm feature of target sample j. One instance is
// shared by domain alignment and target clustering.
class MemoryBank {
 public:
  MemoryBank() = default;
  MemoryBank(std::size_t num_samples, std::size_t dim)
      : rows_(num_samples, dim), initialized_(num_samples, 0), updated_at_(num_samples, 0) {}

  std::size_t size() const noexcept { return rows_.rows(); }
  std::size_t dim() const noexcept { return rows_.cols(); }
  const Matrix& rows() const noexcept { return rows_; }
  std::span<const double> row(std::size_t j) const { return rows_.row(j); }
  bool initialized(std::size_t j) const { return initialized_.at(j) != 0; }
  bool fully_initialized() const {
    for (auto f : initialized_)
      if (!f) return false;
    return true;
  }

  // Iterations since row j was last written.
  std::uint64_t staleness(std::size_t j) const { return clock_ - updated_at_.at(j); }
  void advance_clock() noexcept { ++clock_; }
  std::uint64_t clock() const noexcept { return clock_; }

  void update(std::size_t j, std::span<const double> feature) {
    if (j >= size()) throw InvalidInput("memory bank index " + std::to_string(j) + " out of range");
    if (feature.size() != dim()) throw InvalidInput("memory bank feature dimension mismatch");
    std::copy(feature.begin(), feature.end(), rows_.row(j).begin());
    initialized_[j] = 1;
    updated_at_[j] = clock_;
  }

  // Checkpoint restore.
  void restore(Matrix rows, std::vector<std::uint8_t> initialized, std::vector<std::uint64_t> updated_at,
               std::uint64_t clock) {
    if (initialized.size() != rows.rows() || updated_at.size() != rows.rows())
      throw InvalidInput("memory bank restore: inconsistent sizes");
    rows_ = std::move(rows);
    initialized_ = std::move(initialized);
    updated_at_ = std::move(updated_at);
    clock_ = clock;
  }
  const std::vector<std::uint8_t>& initialized_flags() const noexcept { return initialized_; }
  const std::vector<std::uint64_t>& updated_at() const noexcept { return updated_at_; }

  friend bool operator==(const MemoryBank&, const MemoryBank&) = default;

 private:
  Matrix rows_;
  std::vector<std::uint8_t> initialized_;
  std::vector<std::uint64_t> updated_at_;
  std::uint64_t clock_ = 0;
};

inline void update_bank(MemoryBank& bank, std::size_t sample_index, std::span<const double> feature) {
  bank.update(sample_index, feature);
}

// Posterior over the columns of F = [Z, M] with the sample's own slot removed.
// `columns` lists the F index of each entry: bank rows j first (ascending),
// then prototypes as N_t + c. Uninitialized bank rows are left out.
struct NeighborhoodPosterior {
  std::vector<std::size_t> columns;
  std::vector<double> probs;
  std::size_t skipped_uninitialized = 0;
};

inline NeighborhoodPosterior pda_posterior(const MemoryBank& bank, const PrototypeBank& protos,
                                           std::size_t sample_index, std::span<const double> feature) {
  if (feature.size() != bank.dim() || feature.size() != protos.dim())
    throw InvalidInput("pda_posterior: dimension mismatch");
  NeighborhoodPosterior out;
  std::vector<double> logits;
  for (std::size_t j = 0; j < bank.size(); ++j) {
    if (j == sample_index) continue;
    if (!bank.initialized(j)) {
      ++out.skipped_uninitialized;
      continue;
    }
    out.columns.push_back(j);
    logits.push_back(dot(bank.row(j), feature));
  }
  for (std::size_t c = 0; c < protos.num_classes(); ++c) {
    out.columns.push_back(bank.size() + c);
    logits.push_back(dot(protos.prototype(c), feature));
  }
  out.probs = softmax_temperature(logits, protos.sigma);
  return out;
}

// literal: divide the summed neighborhood entropies by |B| (N_t + K_s).
// batch:   divide by |B| only (mean per-sample neighborhood entropy).
enum class PdaNormalization { literal, batch };

// -1/(|B| (N_t + K_s)) sum_i sum_{j != i} p_ij ln p_ij. Bank rows are constants;
// the batch features and the prototypes receive gradients.
inline LossGrad pda_loss(const MemoryBank& bank, const PrototypeBank& protos, const Matrix& x,
                         std::span<const std::size_t> indices,
                         PdaNormalization norm = PdaNormalization::literal) {
  if (indices.size() != x.rows()) throw InvalidInput("pda_loss: index count mismatch");
  if (x.cols() != bank.dim() || x.cols() != protos.dim()) throw InvalidInput("pda_loss: dimension mismatch");
  LossGrad out = zero_loss(x.rows(), protos);
  if (x.rows() == 0) return out;
  const std::size_t nt = bank.size();
  const std::size_t ks = protos.num_classes();
  const double scale = norm == PdaNormalization::literal
                           ? 1.0 / (static_cast<double>(x.rows()) * static_cast<double>(nt + ks))
                           : 1.0 / static_cast<double>(x.rows());
  const double inv_sigma = 1.0 / protos.sigma;
  std::vector<double> a(nt + ks), q(nt + ks);
  std::vector<std::uint8_t> in_support(nt + ks);
  for (std::size_t b = 0; b < x.rows(); ++b) {
    const std::size_t self = indices[b];
    if (self >= nt) throw InvalidInput("pda_loss: sample index out of range");
    auto xi = x.row(b);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < nt + ks; ++j) {
      in_support[j] = j < nt ? (j != self && bank.initialized(j)) : 1;
      if (!in_support[j]) continue;
      a[j] = inv_sigma * dot(j < nt ? bank.row(j) : protos.prototype(j - nt), xi);
      mx = std::max(mx, a[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < nt + ks; ++j)
      if (in_support[j]) z += std::exp(a[j] - mx);
    const double lz = std::log(z) + mx;
    double h = 0.0;
    for (std::size_t j = 0; j < nt + ks; ++j) {
      if (!in_support[j]) continue;
      a[j] -= lz;  // now log q_j
      q[j] = std::exp(a[j]);
      h -= q[j] * a[j];
    }
    out.value += scale * h;
    auto dx = out.d_features.row(b);
    for (std::size_t j = 0; j < nt + ks; ++j) {
      if (!in_support[j]) continue;
      // dH/du_j = -q_j (ln q_j + H), u_j = f_j . x / sigma
      const double g = -q[j] * (a[j] + h) * scale * inv_sigma;
      if (g == 0.0) continue;
      if (j < nt) {
        axpy(g, bank.row(j), dx);
      } else {
        axpy(g, protos.prototype(j - nt), dx);
        axpy(g, xi, out.d_prototypes.row(j - nt));
      }
    }
  }
  return out;
}

}  // namespace uasa
