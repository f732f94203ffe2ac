#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "uasa/atg.hpp"
#include "uasa/error.hpp"
#include "uasa/lpb.hpp"
#include "uasa/numeric.hpp"
#include "uasa/pda.hpp"
#include "uasa/tensor.hpp"

namespace uasa {

// A unit-norm cluster centers, one per row (columns c_a of C).
struct ClusterSet {
  Matrix centers;
  std::vector<std::size_t> assignment;  // cluster of each clustered row
  std::vector<double> objective;        // sum of squared distances after each assignment step
  std::size_t iterations = 0;

  std::size_t size() const { return centers.rows(); }
  friend bool operator==(const ClusterSet&, const ClusterSet&) = default;
};

inline std::size_t cluster_count(std::size_t num_id_classes, double factor) {
  return static_cast<std::size_t>(std::ceil(factor * static_cast<double>(num_id_classes) - 1e-9));
}

namespace detail {

inline double sq_dist(std::span<const double> a, std::span<const double> b) noexcept {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

inline std::size_t nearest_center(const Matrix& centers, std::span<const double> x, double* dist = nullptr) {
  std::size_t best = 0;
  double bd = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < centers.rows(); ++a) {
    const double d = sq_dist(centers.row(a), x);
    if (d < bd) {
      bd = d;
      best = a;
    }
  }
  if (dist) *dist = bd;
  return best;
}

}  // namespace detail

struct KMeansOptions {
  std::size_t max_iterations = 100;
  double tolerance = 1e-6;  // stop when no center moves farther than this
};

// Spherical k-means on unit-norm rows: k-means++ seeding, Lloyd iterations on
// Euclidean distance, centers re-normalized after every refit. An empty
// cluster is re-seeded at the point farthest from its current center.
inline ClusterSet kmeans(const Matrix& points, std::size_t num_clusters, std::uint64_t seed,
                         KMeansOptions opts = {}) {
  const std::size_t n = points.rows();
  if (num_clusters == 0) throw InvalidConfig("kmeans: cluster count must be positive");
  if (n < num_clusters)
    throw InvalidConfig("kmeans: " + std::to_string(n) + " points cannot form " + std::to_string(num_clusters) +
                        " clusters");
  std::mt19937_64 rng(seed);
  ClusterSet cs;
  cs.centers = Matrix(num_clusters, points.cols());

  // k-means++ seeding.
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::vector<std::uint8_t> chosen(n, 0);
  std::size_t first = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  auto place = [&](std::size_t a, std::size_t idx) {
    std::copy(points.row(idx).begin(), points.row(idx).end(), cs.centers.row(a).begin());
    chosen[idx] = 1;
    for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], detail::sq_dist(points.row(i), points.row(idx)));
  };
  place(0, first);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t a = 1; a < num_clusters; ++a) {
    double total = 0.0;
    for (double v : d2) total += v;
    std::size_t pick = n;
    if (total > 0.0) {
      double r = unit(rng) * total;
      for (std::size_t i = 0; i < n; ++i) {
        if (d2[i] <= 0.0) continue;
        r -= d2[i];
        pick = i;
        if (r < 0.0) break;
      }
    }
    if (pick == n) {  // every remaining point coincides with a center
      for (std::size_t i = 0; i < n; ++i)
        if (!chosen[i]) {
          pick = i;
          break;
        }
    }
    place(a, pick);
  }

  cs.assignment.assign(n, 0);
  std::vector<double> dist(n);
  for (std::size_t it = 0; it < opts.max_iterations; ++it) {
    double obj = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      cs.assignment[i] = detail::nearest_center(cs.centers, points.row(i), &dist[i]);
      obj += dist[i];
    }
    cs.objective.push_back(obj);
    cs.iterations = it + 1;

    Matrix sums(num_clusters, points.cols());
    std::vector<std::size_t> counts(num_clusters, 0);
    for (std::size_t i = 0; i < n; ++i) {
      axpy(1.0, points.row(i), sums.row(cs.assignment[i]));
      ++counts[cs.assignment[i]];
    }
    double moved = 0.0;
    std::vector<std::uint8_t> taken(n, 0);
    for (std::size_t a = 0; a < num_clusters; ++a) {
      auto c = sums.row(a);
      if (counts[a] == 0) {
        std::size_t far = n;
        double fd = -1.0;
        for (std::size_t i = 0; i < n; ++i)
          if (!taken[i] && dist[i] > fd) {
            fd = dist[i];
            far = i;
          }
        taken[far] = 1;
        std::copy(points.row(far).begin(), points.row(far).end(), c.begin());
      } else if (l2_normalize_inplace(c) == 0.0) {
        std::copy(cs.centers.row(a).begin(), cs.centers.row(a).end(), c.begin());
      }
      moved = std::max(moved, std::sqrt(detail::sq_dist(c, cs.centers.row(a))));
    }
    cs.centers = std::move(sums);
    if (moved < opts.tolerance) break;
  }
  // Final assignment against the final centers.
  for (std::size_t i = 0; i < n; ++i) cs.assignment[i] = detail::nearest_center(cs.centers, points.row(i));
  return cs;
}

inline ClusterSet kmeans(const MemoryBank& bank, std::size_t num_clusters, std::uint64_t seed,
                         KMeansOptions opts = {}) {
  if (!bank.fully_initialized()) throw InvalidState("kmeans: memory bank has uninitialized rows");
  return kmeans(bank.rows(), num_clusters, seed, opts);
}

// a_j = argmax_a cos(c_a, x_j), smallest index on ties.
inline std::size_t assign_cluster(const ClusterSet& clusters, std::span<const double> feature) {
  std::vector<double> sims(clusters.size());
  for (std::size_t a = 0; a < clusters.size(); ++a) sims[a] = cosine_similarity(clusters.centers.row(a), feature);
  return argmax_tiebreak(sims);
}

inline double confidence_score(const TargetDecision& d) { return d.confidence; }

// Pairs match when both are ID with the same class, or both OOD in the same
// cluster; matched pairs weigh (s_i + s_j) / 2.
inline double pair_weight(const TargetDecision& a, const TargetDecision& b, std::size_t cluster_a,
                          std::size_t cluster_b) {
  bool match = false;
  if (!a.is_ood() && !b.is_ood()) match = a.predicted_class == b.predicted_class;
  else if (a.is_ood() && b.is_ood()) match = cluster_a == cluster_b;
  return match ? 0.5 * (confidence_score(a) + confidence_score(b)) : 0.0;
}

inline Matrix pair_weight_matrix(std::span<const TargetDecision> decisions, std::span<const std::size_t> clusters) {
  if (decisions.size() != clusters.size()) throw InvalidInput("pair_weight_matrix: size mismatch");
  const std::size_t n = decisions.size();
  Matrix w(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) w(i, j) = w(j, i) = pair_weight(decisions[i], decisions[j], clusters[i], clusters[j]);
  return w;
}

// kl: symmetric KL between posteriors. ce: symmetrized cross-entropy against
// the partner's argmax one-hot.
enum class PairLossKind { kl, ce };

// (1/|B|) sum_{i != j} m_ij L(p_i, p_j) over ordered pairs; weights are constants.
inline LossGrad uc_loss(const PrototypeBank& bank, const Matrix& x, const Matrix& weights,
                        PairLossKind kind = PairLossKind::kl) {
  const std::size_t n = x.rows();
  if (weights.rows() != n || weights.cols() != n) throw InvalidInput("uc_loss: weight matrix shape mismatch");
  LossGrad out = zero_loss(n, bank);
  if (n < 2) return out;
  const std::size_t k = bank.num_classes();
  const double scale = 1.0 / static_cast<double>(n);
  Matrix logits = class_logits(bank, x);
  Matrix logp(n, k), p(n, k);
  std::vector<std::size_t> top(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto lp = log_softmax_temperature(logits.row(i), bank.sigma);
    for (std::size_t c = 0; c < k; ++c) {
      logp(i, c) = lp[c];
      p(i, c) = std::exp(lp[c]);
    }
    top[i] = argmax_tiebreak(logits.row(i));
  }
  Matrix da(n, k);  // gradient w.r.t. logits / sigma
  std::vector<double> r(k);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double m = weights(i, j) * scale;
      if (m == 0.0) continue;
      if (kind == PairLossKind::kl) {
        double l = 0.0, ep = 0.0, eq = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
          r[c] = logp(i, c) - logp(j, c);
          l += (p(i, c) - p(j, c)) * r[c];
          ep += p(i, c) * r[c];
          eq += p(j, c) * r[c];
        }
        out.value += m * 0.5 * l;
        for (std::size_t c = 0; c < k; ++c) {
          da(i, c) += m * 0.5 * (p(i, c) * (r[c] - ep) + p(i, c) - p(j, c));
          da(j, c) += m * 0.5 * (p(j, c) * (eq - r[c]) + p(j, c) - p(i, c));
        }
      } else {
        const std::size_t ti = top[j], tj = top[i];
        out.value += m * 0.5 * (-logp(i, ti) - logp(j, tj));
        for (std::size_t c = 0; c < k; ++c) {
          da(i, c) += m * 0.5 * (p(i, c) - (c == ti ? 1.0 : 0.0));
          da(j, c) += m * 0.5 * (p(j, c) - (c == tj ? 1.0 : 0.0));
        }
      }
    }
  for (auto& v : da.flat()) v /= bank.sigma;
  accumulate_logit_grads(x, bank, da, out);
  return out;
}

}  // namespace uasa
