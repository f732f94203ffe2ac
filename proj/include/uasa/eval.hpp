#pragma once

#include <span>
#include <string>
#include <vector>

#include "uasa/atg.hpp"
#include "uasa/error.hpp"

namespace uasa {

inline double harmonic_os_unk(double os_star, double unk) {
  const double s = os_star + unk;
  return s > 0.0 ? 2.0 * os_star * unk / s : 0.0;
}

struct MetricsSummary {
  std::vector<double> class_accuracy;      // per ID class; meaningful where class_present
  std::vector<std::uint8_t> class_present;  // ID class occurs in the ground truth
  double os_star = 0.0;
  double unk = 0.0;
  double hos = 0.0;
  bool unk_defined = true;  // false when the ground truth holds no OOD sample
  // (K_s+1) x (K_s+1): rows are ground truth, columns predictions; index K_s is OOD.
  std::vector<std::vector<std::size_t>> confusion;
};

// OOD verdicts on ID ground truth count as errors; OS* averages the per-class
// accuracy over the ID classes that occur in the ground truth.
inline MetricsSummary evaluate(std::span<const TargetDecision> decisions, std::span<const int> ground_truth,
                               std::size_t num_id_classes) {
  if (decisions.size() != ground_truth.size())
    throw InvalidInput("evaluate: " + std::to_string(decisions.size()) + " decisions vs " +
                       std::to_string(ground_truth.size()) + " ground-truth labels");
  const std::size_t k = num_id_classes;
  MetricsSummary m;
  m.confusion.assign(k + 1, std::vector<std::size_t>(k + 1, 0));
  for (std::size_t i = 0; i < decisions.size(); ++i) {
    const int y = ground_truth[i];
    if (y < 0) throw InvalidInput("evaluate: sample " + std::to_string(i) + " has no ground truth");
    const std::size_t row = static_cast<std::size_t>(y) < k ? static_cast<std::size_t>(y) : k;
    const std::size_t col = decisions[i].is_ood() ? k : decisions[i].predicted_class;
    if (col > k) throw InvalidInput("evaluate: predicted class out of range");
    ++m.confusion[row][col];
  }
  m.class_accuracy.assign(k, 0.0);
  m.class_present.assign(k, 0);
  double acc_sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t total = 0;
    for (auto v : m.confusion[c]) total += v;
    if (total == 0) continue;
    m.class_present[c] = 1;
    m.class_accuracy[c] = static_cast<double>(m.confusion[c][c]) / static_cast<double>(total);
    acc_sum += m.class_accuracy[c];
    ++present;
  }
  m.os_star = present ? acc_sum / static_cast<double>(present) : 0.0;
  std::size_t ood_total = 0;
  for (auto v : m.confusion[k]) ood_total += v;
  if (ood_total == 0) {
    m.unk_defined = false;
    m.unk = 0.0;
    m.hos = 0.0;
  } else {
    m.unk = static_cast<double>(m.confusion[k][k]) / static_cast<double>(ood_total);
    m.hos = harmonic_os_unk(m.os_star, m.unk);
  }
  return m;
}

}  // namespace uasa
