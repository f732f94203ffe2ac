#pragma once

// Helpers shared by the unit tests and the acceptance binary.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <span>
#include <random>
#include <string>
#include <vector>

#include "uasa/eval.hpp"
#include "uasa/trainer.hpp"

namespace uasa::testing {

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Matrix m(rows, cols);
  for (auto& v : m.flat()) v = g(rng);
  return m;
}

inline Matrix random_unit_rows(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  Matrix m = random_matrix(rows, cols, rng);
  for (std::size_t i = 0; i < rows; ++i) l2_normalize_inplace(m.row(i));
  return m;
}

inline PrototypeBank random_bank(std::size_t k, std::size_t d, double sigma, std::mt19937_64& rng) {
  return random_prototypes(k, d, sigma, rng);
}

// A loss of (features, prototypes) checked against central differences on the
// concatenated parameter vector [features..., prototypes...].
using FeatureLoss = std::function<LossGrad(const PrototypeBank&, const Matrix&)>;

inline GradCheckReport check_feature_loss(const FeatureLoss& fn, const Matrix& x, const PrototypeBank& bank,
                                          double tolerance, std::size_t coordinates, std::uint64_t seed = 7) {
  std::vector<double> theta(x.flat().begin(), x.flat().end());
  theta.insert(theta.end(), bank.weights.flat().begin(), bank.weights.flat().end());
  const std::size_t nx = x.size();
  ScalarLossFn loss = [&](std::span<const double> t, std::vector<double>* grad) {
    Matrix xx(x.rows(), x.cols());
    std::copy(t.begin(), t.begin() + static_cast<std::ptrdiff_t>(nx), xx.flat().begin());
    PrototypeBank p = bank;
    std::copy(t.begin() + static_cast<std::ptrdiff_t>(nx), t.end(), p.weights.flat().begin());
    LossGrad l = fn(p, xx);
    if (grad) {
      grad->assign(l.d_features.flat().begin(), l.d_features.flat().end());
      grad->insert(grad->end(), l.d_prototypes.flat().begin(), l.d_prototypes.flat().end());
    }
    return l.value;
  };
  return grad_check(loss, theta, tolerance, coordinates, seed);
}

// Small labelled toy problem: raw_dim <= 8, at most 10 samples per domain.
struct ToyProblem {
  SourceDataset source;
  Matrix target;
  TrainConfig cfg;
};

inline ToyProblem toy_problem(std::uint64_t seed, std::size_t n_source = 9, std::size_t n_target = 10,
                              std::size_t raw_dim = 6, std::size_t k = 3) {
  std::mt19937_64 rng(seed);
  ToyProblem p;
  p.source.features = random_matrix(n_source, raw_dim, rng);
  p.source.num_classes = k;
  for (std::size_t i = 0; i < n_source; ++i) p.source.labels.push_back(static_cast<int>(i % k));
  p.target = random_matrix(n_target, raw_dim, rng);
  p.cfg.seed = seed;
  p.cfg.hidden_layers = {7};
  p.cfg.feature_dim = 5;
  p.cfg.activation = Activation::tanh;  // smooth, so no kinks under finite differences
  p.cfg.cluster_factor = 2.5;
  return p;
}

// Composite loss L(theta) over every encoder and prototype parameter for one
// paired batch, with the per-batch constants (thresholds, pair weights) frozen
// at the starting point.
inline GradCheckReport check_composite(const ToyProblem& p, const ActiveLosses& active, double tolerance,
                                       std::size_t coordinates, std::uint64_t seed = 11) {
  TrainState s = init_state(p.cfg, p.source.dim(), p.source.num_classes, p.target.rows());
  refresh_epoch_statistics(s, p.cfg, p.target);
  RawBatch batch;
  batch.source = p.source.features;
  batch.source_labels = p.source.labels;
  batch.target = p.target;
  for (std::size_t j = 0; j < p.target.rows(); ++j) batch.target_indices.push_back(j);
  auto e = embed(s.encoder, batch.target);
  const BatchContext ctx = make_batch_context(s, e.normalized, e.norms);

  const auto theta = flatten_parameters(s);
  ScalarLossFn loss = [&](std::span<const double> t, std::vector<double>* grad) {
    TrainState w = s;
    assign_parameters(w, t);
    auto g = batch_gradient(w, p.cfg, active, batch, &ctx);
    if (grad) {
      grad->clear();
      for (const auto& v : g.grads) grad->insert(grad->end(), v.begin(), v.end());
    }
    return g.values.total;
  };
  return grad_check(loss, theta, tolerance, coordinates, seed);
}

// Brute-force nearest center by scanning every center with plain arithmetic.
inline std::size_t oracle_nearest(const Matrix& centers, std::span<const double> f) {
  double n = 0;
  for (double v : f) n += v * v;
  n = std::sqrt(n);
  std::size_t best = 0;
  double bd = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < centers.rows(); ++a) {
    double d = 0;
    for (std::size_t j = 0; j < f.size(); ++j) d += (f[j] / n - centers(a, j)) * (f[j] / n - centers(a, j));
    if (d < bd - 1e-12) {
      bd = d;
      best = a;
    }
  }
  return best;
}

struct EvalInstance {
  std::vector<TargetDecision> decisions;
  std::vector<int> truth;
  std::size_t k = 0;
};

inline EvalInstance random_eval_instance(std::mt19937_64& rng, std::size_t n, std::size_t k, std::size_t k_ood) {
  EvalInstance in;
  in.k = k;
  for (std::size_t i = 0; i < n; ++i) {
    TargetDecision d;
    d.predicted_class = rng() % k;
    d.verdict = rng() % 3 == 0 ? Verdict::ood : Verdict::id;
    in.decisions.push_back(d);
    in.truth.push_back(static_cast<int>(rng() % (k + k_ood)));
  }
  return in;
}

// Independent double-loop oracle: per-class accuracy by rescanning the samples.
struct EvalOracle {
  double os_star = 0, unk = 0, hos = 0;
  bool unk_defined = false;
};

inline EvalOracle oracle_evaluate(const EvalInstance& in) {
  EvalOracle o;
  double sum = 0;
  int present = 0;
  for (std::size_t c = 0; c < in.k; ++c) {
    int total = 0, right = 0;
    for (std::size_t i = 0; i < in.truth.size(); ++i) {
      if (in.truth[i] != static_cast<int>(c)) continue;
      ++total;
      if (!in.decisions[i].is_ood() && in.decisions[i].predicted_class == c) ++right;
    }
    if (total) {
      sum += static_cast<double>(right) / total;
      ++present;
    }
  }
  o.os_star = present ? sum / present : 0.0;
  int total = 0, right = 0;
  for (std::size_t i = 0; i < in.truth.size(); ++i)
    if (in.truth[i] >= static_cast<int>(in.k)) {
      ++total;
      right += in.decisions[i].is_ood();
    }
  o.unk_defined = total > 0;
  o.unk = total ? static_cast<double>(right) / total : 0.0;
  o.hos = o.unk_defined && o.os_star + o.unk > 0 ? 2 * o.os_star * o.unk / (o.os_star + o.unk) : 0.0;
  return o;
}

inline std::filesystem::path fresh_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("uasa_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace uasa::testing
