#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "uasa/error.hpp"
#include "uasa/lpb.hpp"
#include "uasa/numeric.hpp"
#include "uasa/tensor.hpp"

namespace uasa {

// H_c: the target samples whose K_s-way argmax is class c.
struct PseudoClassTable {
  std::vector<std::size_t> assignment;
  std::vector<std::vector<std::size_t>> members;
};

inline PseudoClassTable assign_pseudo_classes(const Matrix& posteriors) {
  PseudoClassTable t;
  t.members.resize(posteriors.cols());
  t.assignment.reserve(posteriors.rows());
  for (std::size_t i = 0; i < posteriors.rows(); ++i) {
    const std::size_t c = argmax_tiebreak(posteriors.row(i));
    t.assignment.push_back(c);
    t.members[c].push_back(i);
  }
  return t;
}

struct ClassEntropy {
  std::vector<double> mean;          // T_c
  std::vector<std::uint8_t> defined;  // 0 when H_c is empty
};

inline ClassEntropy class_mean_entropy(const PseudoClassTable& table, const Matrix& posteriors) {
  if (table.assignment.size() != posteriors.rows())
    throw InvalidInput("class_mean_entropy: table does not match posteriors");
  ClassEntropy out;
  out.mean.assign(table.members.size(), 0.0);
  out.defined.assign(table.members.size(), 0);
  for (std::size_t c = 0; c < table.members.size(); ++c) {
    if (table.members[c].empty()) continue;
    double s = 0.0;
    for (auto i : table.members[c]) s += entropy(posteriors.row(i));
    out.mean[c] = s / static_cast<double>(table.members[c].size());
    out.defined[c] = 1;
  }
  return out;
}

// corrected: o_c = alpha (max T + min T - T_c) / (max T - min T) ln K_s.
// literal:   o_c = alpha (T_c - min T - max T) / (max T - min T) ln K_s, which is
//            never positive and is kept only for comparison runs.
enum class ThresholdRule { corrected, literal };

struct ThresholdTable {
  std::vector<double> mean_entropy;
  std::vector<double> thresholds;
  std::vector<std::uint8_t> defined;
  double alpha = 0.15;

  std::size_t num_classes() const { return thresholds.size(); }

  // Undefined slots hold NaN, so compare values with NaN == NaN.
  friend bool operator==(const ThresholdTable& a, const ThresholdTable& b) {
    auto same = [](const std::vector<double>& x, const std::vector<double>& y) {
      if (x.size() != y.size()) return false;
      for (std::size_t i = 0; i < x.size(); ++i)
        if (!(x[i] == y[i] || (std::isnan(x[i]) && std::isnan(y[i])))) return false;
      return true;
    };
    return same(a.mean_entropy, b.mean_entropy) && same(a.thresholds, b.thresholds) && a.defined == b.defined &&
           a.alpha == b.alpha;
  }
};

inline std::vector<double> adaptive_thresholds(std::span<const double> mean_entropy,
                                               std::span<const std::uint8_t> defined, double alpha,
                                               std::size_t num_classes,
                                               ThresholdRule rule = ThresholdRule::corrected) {
  if (mean_entropy.size() != defined.size()) throw InvalidInput("adaptive_thresholds: mask size mismatch");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < mean_entropy.size(); ++c) {
    if (!defined[c]) continue;
    lo = std::min(lo, mean_entropy[c]);
    hi = std::max(hi, mean_entropy[c]);
  }
  if (!(lo <= hi)) throw InvalidState("adaptive_thresholds: no pseudo-class has any member");
  const double log_k = std::log(static_cast<double>(num_classes));
  std::vector<double> o(mean_entropy.size(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t c = 0; c < mean_entropy.size(); ++c) {
    if (!defined[c]) continue;
    if (hi == lo) {
      o[c] = alpha * log_k;
    } else if (rule == ThresholdRule::corrected) {
      o[c] = alpha * (hi + lo - mean_entropy[c]) / (hi - lo) * log_k;
    } else {
      o[c] = alpha * (mean_entropy[c] - lo - hi) / (hi - lo) * log_k;
    }
  }
  return o;
}

inline std::vector<double> adaptive_thresholds(std::span<const double> mean_entropy, double alpha,
                                               std::size_t num_classes,
                                               ThresholdRule rule = ThresholdRule::corrected) {
  std::vector<std::uint8_t> all(mean_entropy.size(), 1);
  return adaptive_thresholds(mean_entropy, all, alpha, num_classes, rule);
}

inline ThresholdTable build_threshold_table(const Matrix& posteriors, double alpha,
                                            ThresholdRule rule = ThresholdRule::corrected) {
  const auto table = assign_pseudo_classes(posteriors);
  const auto t = class_mean_entropy(table, posteriors);
  ThresholdTable out;
  out.mean_entropy = t.mean;
  out.defined = t.defined;
  out.alpha = alpha;
  out.thresholds = adaptive_thresholds(t.mean, t.defined, alpha, posteriors.cols(), rule);
  return out;
}

// Constant ln(K_s)/2 for every class: the fixed-threshold ablation.
inline ThresholdTable fixed_threshold_table(std::size_t num_classes) {
  ThresholdTable out;
  out.mean_entropy.assign(num_classes, 0.0);
  out.defined.assign(num_classes, 1);
  out.alpha = 0.0;
  out.thresholds.assign(num_classes, 0.5 * std::log(static_cast<double>(num_classes)));
  return out;
}

enum class Verdict { id, ood };

struct TargetDecision {
  Verdict verdict = Verdict::ood;
  std::size_t predicted_class = 0;  // argmax class; the ID label when verdict == id
  double entropy = 0.0;
  double confidence = 0.0;
  bool undefined_threshold = false;  // argmax class had no pseudo-class members

  bool is_ood() const { return verdict == Verdict::ood; }
  friend bool operator==(const TargetDecision&, const TargetDecision&) = default;
};

// ID(c) iff Q(p) <= o_c for c = argmax p (boundary inclusive). Confidence is
// max p for ID and Q(p) / ln K_s for OOD.
inline TargetDecision decide(std::span<const double> posterior, const ThresholdTable& thresholds) {
  if (posterior.size() != thresholds.num_classes())
    throw InvalidInput("decide: posterior length does not match threshold table");
  TargetDecision d;
  d.predicted_class = argmax_tiebreak(posterior);
  d.entropy = entropy(posterior);
  const double log_k = std::log(static_cast<double>(posterior.size()));
  if (!thresholds.defined[d.predicted_class]) {
    d.undefined_threshold = true;
    d.verdict = Verdict::ood;
  } else {
    d.verdict = d.entropy <= thresholds.thresholds[d.predicted_class] ? Verdict::id : Verdict::ood;
  }
  d.confidence = d.verdict == Verdict::id ? posterior[d.predicted_class]
                                          : (log_k > 0.0 ? std::min(1.0, d.entropy / log_k) : 0.0);
  return d;
}

inline std::vector<TargetDecision> decide_all(const Matrix& posteriors, const ThresholdTable& thresholds) {
  std::vector<TargetDecision> out;
  out.reserve(posteriors.rows());
  for (std::size_t i = 0; i < posteriors.rows(); ++i) out.push_back(decide(posteriors.row(i), thresholds));
  return out;
}

// literal: per-sample term (o' - Q)^2 outside the gate, 0 inside.
// repel:   the same term negated, pushing entropy away from the threshold.
enum class SeparationMode { literal, repel };

// Per-sample o'_i = o_{argmax p_i}; NaN when that class has no threshold.
inline std::vector<double> sample_thresholds(const Matrix& posteriors, const ThresholdTable& table) {
  std::vector<double> o(posteriors.rows());
  for (std::size_t i = 0; i < posteriors.rows(); ++i) {
    const std::size_t c = argmax_tiebreak(posteriors.row(i));
    o[i] = table.defined.at(c) ? table.thresholds[c] : std::numeric_limits<double>::quiet_NaN();
  }
  return o;
}

// Entropy separation loss: batch mean of the gated per-sample terms. Thresholds
// are constants; samples whose o' is NaN contribute nothing.
inline LossGrad atg_loss(const PrototypeBank& bank, const Matrix& x, std::span<const double> sample_threshold,
                         double delta, SeparationMode mode = SeparationMode::literal) {
  if (sample_threshold.size() != x.rows()) throw InvalidInput("atg_loss: threshold count mismatch");
  LossGrad out = zero_loss(x.rows(), bank);
  if (x.rows() == 0) return out;
  const double scale = 1.0 / static_cast<double>(x.rows());
  const double sign = mode == SeparationMode::literal ? 1.0 : -1.0;
  Matrix logits = class_logits(bank, x);
  Matrix dlogits(x.rows(), bank.num_classes());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double o = sample_threshold[i];
    if (std::isnan(o)) continue;
    auto logp = log_softmax_temperature(logits.row(i), bank.sigma);
    double q = 0.0;
    for (double lp : logp) q -= std::exp(lp) * lp;
    const double e = (o - q) * (o - q);
    if (e < delta) continue;
    out.value += sign * scale * e;
    const double de_dq = sign * scale * -2.0 * (o - q);
    for (std::size_t c = 0; c < logp.size(); ++c) {
      const double p = std::exp(logp[c]);
      dlogits(i, c) = de_dq * -p * (logp[c] + q) / bank.sigma;
    }
  }
  accumulate_logit_grads(x, bank, dlogits, out);
  return out;
}

}  // namespace uasa
