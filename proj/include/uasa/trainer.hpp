#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "uasa/atg.hpp"
#include "uasa/data.hpp"
#include "uasa/encoder.hpp"
#include "uasa/error.hpp"
#include "uasa/eval.hpp"
#include "uasa/lpb.hpp"
#include "uasa/numeric.hpp"
#include "uasa/pda.hpp"
#include "uasa/rng.hpp"
#include "uasa/tensor.hpp"
#include "uasa/uc.hpp"

namespace uasa {

enum class ThresholdMode { adaptive, fixed };

struct TrainConfig {
  double lambda_pda = 0.05;  // lambda_1
  double lambda_atg = 0.1;   // lambda_2
  double lambda_uc = 0.1;    // lambda_3
  double sigma = 0.05;
  double alpha = 0.15;
  double delta = 0.5;
  double cluster_factor = 2.5;  // A = ceil(factor * K_s)
  std::size_t source_batch = 32;
  std::size_t target_batch = 32;
  double learning_rate = 1e-2;
  double momentum = 0.9;
  std::size_t epochs = 50;
  std::size_t warmup_epochs = 2;  // epochs trained with L_lpb + L_pda only
  std::uint64_t seed = 0;

  bool use_lpb = true;
  bool use_pda = true;
  bool use_atg = true;
  bool use_uc = true;
  ThresholdMode threshold_mode = ThresholdMode::adaptive;
  ThresholdRule threshold_rule = ThresholdRule::corrected;
  SeparationMode separation = SeparationMode::literal;
  PairLossKind pair_loss = PairLossKind::kl;
  PdaNormalization pda_normalization = PdaNormalization::literal;

  std::vector<std::size_t> hidden_layers{32};  // empty together with feature_dim 0: identity encoder
  std::size_t feature_dim = 16;                // 0: identity encoder (features used as given)
  Activation activation = Activation::relu;
  bool freeze_encoder = false;

  void validate() const {
    if (!(sigma > 0.0)) throw InvalidConfig("sigma must be positive");
    if (!(learning_rate > 0.0)) throw InvalidConfig("learning_rate must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidConfig("momentum must lie in [0, 1)");
    if (lambda_pda < 0.0 || lambda_atg < 0.0 || lambda_uc < 0.0)
      throw InvalidConfig("loss weights must be non-negative");
    if (!(alpha > 0.0)) throw InvalidConfig("alpha must be positive");
    if (!(delta >= 0.0)) throw InvalidConfig("delta must be non-negative");
    if (!(cluster_factor > 1.0)) throw InvalidConfig("cluster_factor must exceed 1 (A > K_s)");
    if (source_batch == 0 || target_batch == 0) throw InvalidConfig("batch sizes must be positive");
  }

  std::vector<std::size_t> layer_sizes(std::size_t raw_dim) const {
    if (feature_dim == 0) return {raw_dim};
    std::vector<std::size_t> s{raw_dim};
    s.insert(s.end(), hidden_layers.begin(), hidden_layers.end());
    s.push_back(feature_dim);
    return s;
  }
};

struct TrainState {
  EncoderParams encoder;
  PrototypeBank prototypes;
  MemoryBank bank;
  ClusterSet clusters;
  ThresholdTable thresholds;
  SgdMomentum optimizer;
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;  // completed epochs
  bool statistics_ready = false;

  std::size_t feature_dim() const { return encoder.output_dim(); }

  // Optimizer order: encoder tensors, then the prototype matrix.
  std::vector<std::span<double>> parameters() {
    auto t = encoder.tensors();
    t.push_back(prototypes.weights.flat());
    return t;
  }
  std::vector<std::span<const double>> parameters() const {
    auto t = encoder.tensors();
    t.push_back(prototypes.weights.flat());
    return t;
  }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (auto s : parameters()) n += s.size();
    return n;
  }

  friend bool operator==(const TrainState& a, const TrainState& b) {
    return a.encoder == b.encoder && a.prototypes == b.prototypes && a.bank == b.bank &&
           a.clusters == b.clusters && a.thresholds == b.thresholds &&
           a.optimizer.velocity() == b.optimizer.velocity() && a.seed == b.seed && a.epoch == b.epoch;
  }
};

inline TrainState init_state(const TrainConfig& cfg, std::size_t raw_dim, std::size_t num_id_classes,
                             std::size_t num_targets) {
  cfg.validate();
  if (num_id_classes < 2) throw InvalidConfig("at least two source classes are required");
  TrainState s;
  s.seed = cfg.seed;
  auto rng = make_rng(cfg.seed, "init");
  s.encoder = make_encoder(cfg.layer_sizes(raw_dim), cfg.activation);
  init_encoder(s.encoder, rng);
  s.prototypes = random_prototypes(num_id_classes, s.encoder.output_dim(), cfg.sigma, rng);
  s.bank = MemoryBank(num_targets, s.encoder.output_dim());
  s.optimizer = SgdMomentum(cfg.learning_rate, cfg.momentum);
  return s;
}

// ---------------------------------------------------------------------------
// Feature extraction with L2 normalization and its backward pass.

struct Embedding {
  ForwardCache cache;
  Matrix normalized;
  std::vector<double> norms;  // 0 marks a degenerate (zero) feature
};

inline Embedding embed(const EncoderParams& enc, const Matrix& raw) {
  Embedding e;
  e.cache = forward_batch(enc, raw);
  e.normalized = e.cache.output;
  e.norms.resize(raw.rows());
  for (std::size_t i = 0; i < raw.rows(); ++i) e.norms[i] = l2_normalize_inplace(e.normalized.row(i));
  return e;
}

// d/df of a loss given d/dx at x = f/|f|: (dx - x (x . dx)) / |f|.
inline Matrix normalize_backward(const Embedding& e, const Matrix& d_normalized) {
  Matrix out(d_normalized.rows(), d_normalized.cols());
  for (std::size_t i = 0; i < out.rows(); ++i) {
    if (e.norms[i] == 0.0) continue;
    auto x = e.normalized.row(i);
    auto g = d_normalized.row(i);
    const double proj = dot(x, g);
    auto o = out.row(i);
    for (std::size_t j = 0; j < o.size(); ++j) o[j] = (g[j] - x[j] * proj) / e.norms[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Per-batch loss composition.

// Constants the target losses treat as fixed: o'_i for the separation loss and
// the pair weights m_ij for clustering.
struct BatchContext {
  std::vector<double> sample_thresholds;
  Matrix pair_weights;
};

struct ComponentLosses {
  double lpb = 0.0, pda = 0.0, atg = 0.0, uc = 0.0, total = 0.0;
};

struct ActiveLosses {
  bool lpb = true, pda = true, atg = true, uc = true;
};

inline ActiveLosses active_losses(const TrainConfig& cfg, std::size_t epoch_index) {
  const bool warm = epoch_index < cfg.warmup_epochs;
  return {cfg.use_lpb, cfg.use_pda, cfg.use_atg && !warm, cfg.use_uc && !warm};
}

inline BatchContext make_batch_context(const TrainState& s, const Matrix& target_features,
                                       std::span<const double> target_norms) {
  BatchContext ctx;
  Matrix post = class_posteriors(s.prototypes, target_features);
  ctx.sample_thresholds = sample_thresholds(post, s.thresholds);
  auto decisions = decide_all(post, s.thresholds);
  std::vector<std::size_t> clusters(target_features.rows(), 0);
  for (std::size_t i = 0; i < clusters.size(); ++i)
    if (target_norms[i] != 0.0 && s.clusters.size() > 0) clusters[i] = assign_cluster(s.clusters, target_features.row(i));
  ctx.pair_weights = pair_weight_matrix(decisions, clusters);
  for (std::size_t i = 0; i < clusters.size(); ++i) {
    if (target_norms[i] != 0.0) continue;
    ctx.sample_thresholds[i] = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t j = 0; j < clusters.size(); ++j) ctx.pair_weights(i, j) = ctx.pair_weights(j, i) = 0.0;
  }
  return ctx;
}

// L_lpb + l1 L_pda + l2 L_atg + l3 L_uc.
inline double weighted_total(const ComponentLosses& v, const TrainConfig& cfg) {
  return v.lpb + cfg.lambda_pda * v.pda + cfg.lambda_atg * v.atg + cfg.lambda_uc * v.uc;
}

struct CompositeLoss {
  ComponentLosses values;
  Matrix d_source;      // w.r.t. normalized source features
  Matrix d_target;      // w.r.t. normalized target features
  Matrix d_prototypes;
};

// L = L_lpb + l1 L_pda + l2 L_atg + l3 L_uc on normalized features. Disabled
// components contribute exactly zero and are not evaluated.
inline CompositeLoss total_loss(const TrainState& s, const TrainConfig& cfg, const ActiveLosses& active,
                                const Matrix& source_features, std::span<const int> source_labels,
                                const Matrix& target_features, std::span<const std::size_t> target_indices,
                                const BatchContext& ctx) {
  if (!s.statistics_ready && (active.atg || active.uc))
    throw InvalidState("total_loss: thresholds and clusters have not been computed");
  CompositeLoss out;
  out.d_source = Matrix(source_features.rows(), s.feature_dim());
  out.d_target = Matrix(target_features.rows(), s.feature_dim());
  out.d_prototypes = Matrix(s.prototypes.num_classes(), s.feature_dim());
  auto add = [](Matrix& dst, const Matrix& src, double w) { axpy(w, src.flat(), dst.flat()); };

  if (active.lpb && source_features.rows() > 0) {
    auto l = lpb_loss(s.prototypes, source_features, source_labels);
    out.values.lpb = l.value;
    add(out.d_source, l.d_features, 1.0);
    add(out.d_prototypes, l.d_prototypes, 1.0);
  }
  if (active.pda && cfg.lambda_pda != 0.0) {
    auto l = pda_loss(s.bank, s.prototypes, target_features, target_indices, cfg.pda_normalization);
    out.values.pda = l.value;
    add(out.d_target, l.d_features, cfg.lambda_pda);
    add(out.d_prototypes, l.d_prototypes, cfg.lambda_pda);
  }
  if (active.atg && cfg.lambda_atg != 0.0) {
    auto l = atg_loss(s.prototypes, target_features, ctx.sample_thresholds, cfg.delta, cfg.separation);
    out.values.atg = l.value;
    add(out.d_target, l.d_features, cfg.lambda_atg);
    add(out.d_prototypes, l.d_prototypes, cfg.lambda_atg);
  }
  if (active.uc && cfg.lambda_uc != 0.0) {
    auto l = uc_loss(s.prototypes, target_features, ctx.pair_weights, cfg.pair_loss);
    out.values.uc = l.value;
    add(out.d_target, l.d_features, cfg.lambda_uc);
    add(out.d_prototypes, l.d_prototypes, cfg.lambda_uc);
  }
  out.values.total = weighted_total(out.values, cfg);
  return out;
}

// One paired mini-batch expressed in raw inputs.
struct RawBatch {
  Matrix source;
  std::vector<int> source_labels;
  Matrix target;
  std::vector<std::size_t> target_indices;
};

struct BatchGradient {
  ComponentLosses values;
  std::vector<std::vector<double>> grads;  // aligned with TrainState::parameters()
  Embedding target_embedding;
};

// Loss and gradient w.r.t. every trainable parameter for a raw batch. When
// `frozen` is given the batch constants come from it instead of the current
// features (used by gradient checks).
inline BatchGradient batch_gradient(const TrainState& s, const TrainConfig& cfg, const ActiveLosses& active,
                                    const RawBatch& batch, const BatchContext* frozen = nullptr) {
  BatchGradient out;
  Embedding src = embed(s.encoder, batch.source);
  out.target_embedding = embed(s.encoder, batch.target);
  const Embedding& tgt = out.target_embedding;
  BatchContext ctx;
  if (frozen) ctx = *frozen;
  else if (active.atg || active.uc) ctx = make_batch_context(s, tgt.normalized, tgt.norms);
  else ctx.pair_weights = Matrix(batch.target.rows(), batch.target.rows());
  if (ctx.sample_thresholds.empty())
    ctx.sample_thresholds.assign(batch.target.rows(), std::numeric_limits<double>::quiet_NaN());

  auto loss = total_loss(s, cfg, active, src.normalized, batch.source_labels, tgt.normalized,
                         batch.target_indices, ctx);
  out.values = loss.values;

  Matrix df_src = normalize_backward(src, loss.d_source);
  Matrix df_tgt = normalize_backward(tgt, loss.d_target);
  auto gs = backward_batch(s.encoder, src.cache, df_src);
  auto gt = backward_batch(s.encoder, tgt.cache, df_tgt);
  auto ts = gs.tensors();
  auto tt = gt.tensors();
  for (std::size_t t = 0; t < ts.size(); ++t) {
    std::vector<double> g(ts[t].begin(), ts[t].end());
    for (std::size_t k = 0; k < g.size(); ++k) g[k] += tt[t][k];
    out.grads.push_back(std::move(g));
  }
  out.grads.emplace_back(loss.d_prototypes.flat().begin(), loss.d_prototypes.flat().end());
  return out;
}

inline std::vector<double> flatten_parameters(const TrainState& s) {
  std::vector<double> out;
  for (auto t : s.parameters()) out.insert(out.end(), t.begin(), t.end());
  return out;
}

inline void assign_parameters(TrainState& s, std::span<const double> flat) {
  std::size_t k = 0;
  for (auto t : s.parameters()) {
    if (k + t.size() > flat.size()) throw InvalidInput("assign_parameters: vector too short");
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(k), flat.begin() + static_cast<std::ptrdiff_t>(k + t.size()),
              t.begin());
    k += t.size();
  }
  if (k != flat.size()) throw InvalidInput("assign_parameters: vector too long");
}

// ---------------------------------------------------------------------------
// Full-population passes.

struct TargetSnapshot {
  Matrix features;    // normalized
  std::vector<double> norms;
  Matrix posteriors;  // K_s-way
  ThresholdTable thresholds;
  std::vector<TargetDecision> decisions;
  std::size_t degenerate = 0;
};

inline ThresholdTable make_thresholds(const TrainConfig& cfg, const Matrix& posteriors) {
  if (cfg.threshold_mode == ThresholdMode::fixed) return fixed_threshold_table(posteriors.cols());
  return build_threshold_table(posteriors, cfg.alpha, cfg.threshold_rule);
}

inline TargetSnapshot snapshot_targets(const TrainState& s, const TrainConfig& cfg, const Matrix& target_raw) {
  TargetSnapshot snap;
  auto e = embed(s.encoder, target_raw);
  snap.features = std::move(e.normalized);
  snap.norms = std::move(e.norms);
  for (double n : snap.norms) snap.degenerate += n == 0.0;
  snap.posteriors = class_posteriors(s.prototypes, snap.features);
  snap.thresholds = make_thresholds(cfg, snap.posteriors);
  snap.decisions = decide_all(snap.posteriors, snap.thresholds);
  return snap;
}

// Epoch start: refill the memory bank, then recompute pseudo-classes,
// thresholds and the k-means clusters.
inline TargetSnapshot refresh_epoch_statistics(TrainState& s, const TrainConfig& cfg, const Matrix& target_raw) {
  auto snap = snapshot_targets(s, cfg, target_raw);
  for (std::size_t j = 0; j < snap.features.rows(); ++j)
    if (snap.norms[j] != 0.0) s.bank.update(j, snap.features.row(j));
  s.thresholds = snap.thresholds;
  const std::size_t a = cluster_count(s.prototypes.num_classes(), cfg.cluster_factor);
  if (s.bank.fully_initialized()) {
    s.clusters = kmeans(s.bank.rows(), a, derive_seed(s.seed, "kmeans", s.epoch));
  } else {
    std::vector<std::size_t> idx;
    for (std::size_t j = 0; j < s.bank.size(); ++j)
      if (s.bank.initialized(j)) idx.push_back(j);
    s.clusters = kmeans(gather_rows(s.bank.rows(), idx), a, derive_seed(s.seed, "kmeans", s.epoch));
  }
  s.statistics_ready = true;
  return snap;
}

// ---------------------------------------------------------------------------
// Training loop.

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  ComponentLosses mean_loss;
  std::optional<MetricsSummary> metrics;
  ThresholdTable thresholds;                  // used for training during this epoch
  std::vector<std::size_t> cluster_assignment;  // k-means labels of the bank rows this epoch
  std::size_t degenerate_features = 0;
};

// Per-step hook, called after the optimizer step and bank update.
using StepObserver = std::function<void(const TrainState&, std::size_t epoch, std::size_t iteration)>;
// Evaluation hook; receives decisions only, never the model, so ground truth
// stays outside the training path.
using MetricsHook = std::function<MetricsSummary(std::span<const TargetDecision>)>;

struct TrainResult {
  TrainState state;
  std::vector<EpochRecord> log;
  TargetSnapshot final_snapshot;
};

inline const char* component_name(int c) {
  static const char* names[] = {"lpb", "pda", "atg", "uc"};
  return names[c];
}

inline void check_finite(const ComponentLosses& v, std::size_t epoch, std::size_t iter) {
  const double vals[] = {v.lpb, v.pda, v.atg, v.uc};
  for (int c = 0; c < 4; ++c)
    if (!std::isfinite(vals[c]))
      throw DivergenceError("non-finite " + std::string(component_name(c)) + " loss at epoch " +
                            std::to_string(epoch + 1) + " iteration " + std::to_string(iter + 1));
}

// Runs one epoch in place and returns its record.
inline EpochRecord train_epoch(TrainState& s, const TrainConfig& cfg, const SourceDataset& source,
                               const Matrix& target_raw, const MetricsHook& metrics = nullptr,
                               const StepObserver& observer = nullptr) {
  const std::size_t e = s.epoch;
  EpochRecord rec;
  rec.epoch = e + 1;
  auto start = refresh_epoch_statistics(s, cfg, target_raw);
  rec.thresholds = s.thresholds;
  rec.cluster_assignment = s.clusters.assignment;
  rec.degenerate_features = start.degenerate;

  const ActiveLosses active = active_losses(cfg, e);
  BatchStream src_stream(source.size(), cfg.source_batch, derive_seed(s.seed, "shuffle-source", e));
  BatchStream tgt_stream(target_raw.rows(), cfg.target_batch, derive_seed(s.seed, "shuffle-target", e));
  const std::size_t iters = std::max(src_stream.batches_per_cycle(), tgt_stream.batches_per_cycle());
  ComponentLosses sum;
  for (std::size_t it = 0; it < iters; ++it) {
    RawBatch batch;
    const auto& sb = src_stream.next();
    batch.source = gather_rows(source.features, sb);
    for (auto i : sb) batch.source_labels.push_back(source.labels[i]);
    batch.target_indices = tgt_stream.next();
    batch.target = gather_rows(target_raw, batch.target_indices);

    auto g = batch_gradient(s, cfg, active, batch);
    check_finite(g.values, e, it);
    if (!std::isfinite(g.values.total))
      throw DivergenceError("non-finite total loss at epoch " + std::to_string(e + 1));
    if (cfg.freeze_encoder)
      for (std::size_t t = 0; t + 1 < g.grads.size(); ++t) std::fill(g.grads[t].begin(), g.grads[t].end(), 0.0);
    std::vector<std::span<const double>> grads(g.grads.begin(), g.grads.end());
    s.optimizer.step(s.parameters(), grads);
    renormalize_prototypes(s.prototypes);
    s.bank.advance_clock();
    const auto& te = g.target_embedding;
    for (std::size_t b = 0; b < batch.target_indices.size(); ++b)
      if (te.norms[b] != 0.0) s.bank.update(batch.target_indices[b], te.normalized.row(b));

    sum.lpb += g.values.lpb;
    sum.pda += g.values.pda;
    sum.atg += g.values.atg;
    sum.uc += g.values.uc;
    sum.total += g.values.total;
    if (observer) observer(s, e, it);
  }
  const double n = static_cast<double>(iters);
  rec.mean_loss = {sum.lpb / n, sum.pda / n, sum.atg / n, sum.uc / n, sum.total / n};
  s.epoch = e + 1;
  if (metrics) {
    auto snap = snapshot_targets(s, cfg, target_raw);
    rec.metrics = metrics(snap.decisions);
  }
  return rec;
}

inline TrainResult train(const TrainConfig& cfg, const SourceDataset& source, const Matrix& target_raw,
                         const MetricsHook& metrics = nullptr, const StepObserver& observer = nullptr) {
  cfg.validate();
  validate_source(source);
  if (target_raw.rows() == 0) throw InvalidInput("target dataset is empty");
  if (target_raw.cols() != source.dim()) throw InvalidInput("source and target feature dimensions differ");
  TrainResult r;
  r.state = init_state(cfg, source.dim(), source.num_classes, target_raw.rows());
  for (std::size_t e = 0; e < cfg.epochs; ++e) r.log.push_back(train_epoch(r.state, cfg, source, target_raw, metrics, observer));
  r.final_snapshot = snapshot_targets(r.state, cfg, target_raw);
  return r;
}

// Convenience: the metrics hook for a target set with known ground truth.
inline MetricsHook ground_truth_metrics(const TargetDataset& target) {
  if (!target.has_ground_truth()) return nullptr;
  const std::vector<int>* gt = &target.ground_truth;
  const std::size_t k = target.num_id_classes;
  return [gt, k](std::span<const TargetDecision> d) { return evaluate(d, *gt, k); };
}

}  // namespace uasa
