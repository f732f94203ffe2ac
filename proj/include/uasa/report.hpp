#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "uasa/data.hpp"
#include "uasa/error.hpp"
#include "uasa/eval.hpp"
#include "uasa/trainer.hpp"

namespace uasa {

// Shortest round-trip text for a double; "nan" / "inf" spelled out.
inline std::string fmt_real(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::ofstream open_output(const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  std::error_code ec;
  if (!parent.empty()) std::filesystem::create_directories(parent, ec);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  return out;
}

inline void finish_output(std::ofstream& out, const std::string& path) {
  out.flush();
  if (!out) throw IoError("write failed: " + path);
}

// ---------------------------------------------------------------------------
// Per-epoch logs.

// epoch,loss_lpb,loss_pda,loss_atg,loss_uc,loss_total,os_star,unk,hos
// Metric cells are empty when the run had no ground truth.
inline void write_metrics_csv(const std::string& path, const std::vector<EpochRecord>& log) {
  auto out = open_output(path);
  out << "epoch,loss_lpb,loss_pda,loss_atg,loss_uc,loss_total,os_star,unk,hos\n";
  for (const auto& r : log) {
    out << r.epoch << ',' << fmt_real(r.mean_loss.lpb) << ',' << fmt_real(r.mean_loss.pda) << ','
        << fmt_real(r.mean_loss.atg) << ',' << fmt_real(r.mean_loss.uc) << ',' << fmt_real(r.mean_loss.total);
    if (r.metrics) {
      out << ',' << fmt_real(r.metrics->os_star) << ',';
      if (r.metrics->unk_defined) out << fmt_real(r.metrics->unk) << ',' << fmt_real(r.metrics->hos);
      else out << ',';
    } else {
      out << ",,,";
    }
    out << '\n';
  }
  finish_output(out, path);
}

inline void write_thresholds_csv(const std::string& path, const std::vector<EpochRecord>& log) {
  auto out = open_output(path);
  out << "epoch,class,mean_entropy,threshold,defined\n";
  for (const auto& r : log)
    for (std::size_t c = 0; c < r.thresholds.num_classes(); ++c)
      out << r.epoch << ',' << c + 1 << ',' << fmt_real(r.thresholds.mean_entropy[c]) << ','
          << fmt_real(r.thresholds.thresholds[c]) << ',' << int(r.thresholds.defined[c]) << '\n';
  finish_output(out, path);
}

inline void write_clusters_csv(const std::string& path, const std::vector<EpochRecord>& log) {
  auto out = open_output(path);
  out << "epoch,sample,cluster\n";
  for (const auto& r : log)
    for (std::size_t i = 0; i < r.cluster_assignment.size(); ++i)
      out << r.epoch << ',' << i << ',' << r.cluster_assignment[i] << '\n';
  finish_output(out, path);
}

// Inverse of write_metrics_csv: losses and (when present) OS*/UNK/HOS.
inline std::vector<EpochRecord> read_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path);
  std::string line;
  if (!std::getline(in, line) || line != "epoch,loss_lpb,loss_pda,loss_atg,loss_uc,loss_total,os_star,unk,hos")
    throw ParseError(path + ": unexpected metrics header");
  std::vector<EpochRecord> log;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (cells.size() != 9) throw ParseError(path + ": row " + std::to_string(row) + ": expected 9 columns");
    auto real = [&](std::size_t c) {
      if (cells[c].empty()) return std::numeric_limits<double>::quiet_NaN();
      double v = 0.0;
      auto r = std::from_chars(cells[c].data(), cells[c].data() + cells[c].size(), v);
      if (r.ec != std::errc() || r.ptr != cells[c].data() + cells[c].size()) {
        if (cells[c] == "nan") return std::numeric_limits<double>::quiet_NaN();
        throw ParseError(path + ": row " + std::to_string(row) + " column " + std::to_string(c + 1) +
                         ": not a number");
      }
      return v;
    };
    EpochRecord r;
    r.epoch = static_cast<std::size_t>(real(0));
    r.mean_loss = {real(1), real(2), real(3), real(4), real(5)};
    if (!cells[6].empty()) {
      MetricsSummary m;
      m.os_star = real(6);
      m.unk_defined = !cells[7].empty();
      m.unk = m.unk_defined ? real(7) : 0.0;
      m.hos = m.unk_defined ? real(8) : 0.0;
      r.metrics = m;
    }
    log.push_back(std::move(r));
  }
  return log;
}

// sample,predicted,verdict,entropy,confidence[,ground_truth]; classes 1-based,
// predicted 0 for OOD.
inline void write_predictions_csv(const std::string& path, std::span<const TargetDecision> decisions,
                                  std::span<const int> ground_truth = {}) {
  auto out = open_output(path);
  out << "sample,predicted,verdict,entropy,confidence" << (ground_truth.empty() ? "" : ",ground_truth") << '\n';
  for (std::size_t i = 0; i < decisions.size(); ++i) {
    const auto& d = decisions[i];
    out << i << ',' << (d.is_ood() ? 0 : d.predicted_class + 1) << ',' << (d.is_ood() ? "ood" : "id") << ','
        << fmt_real(d.entropy) << ',' << fmt_real(d.confidence);
    if (!ground_truth.empty()) out << ',' << ground_truth[i] + 1;
    out << '\n';
  }
  finish_output(out, path);
}

// ---------------------------------------------------------------------------
// Ablation suites.

enum class AblationSuite { loss_removal, threshold_mode, sigma_sweep, delta_sweep, a_sweep };

inline AblationSuite parse_suite(const std::string& s) {
  if (s == "loss-removal") return AblationSuite::loss_removal;
  if (s == "threshold-mode") return AblationSuite::threshold_mode;
  if (s == "sigma-sweep") return AblationSuite::sigma_sweep;
  if (s == "delta-sweep") return AblationSuite::delta_sweep;
  if (s == "A-sweep" || s == "a-sweep") return AblationSuite::a_sweep;
  throw InvalidConfig("unknown ablation suite '" + s +
                      "'; valid: loss-removal threshold-mode sigma-sweep delta-sweep A-sweep");
}

struct AblationVariant {
  std::string name;
  TrainConfig config;
};

inline std::vector<AblationVariant> ablation_variants(AblationSuite suite, const TrainConfig& base) {
  std::vector<AblationVariant> v;
  auto with = [&](std::string name, auto edit) {
    TrainConfig c = base;
    edit(c);
    v.push_back({std::move(name), c});
  };
  auto label = [](const char* prefix, double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s=%.1f", prefix, x);
    return std::string(buf);
  };
  switch (suite) {
    case AblationSuite::loss_removal:
      with("full", [](TrainConfig&) {});
      with("w/o lpb", [](TrainConfig& c) { c.use_lpb = false; });
      with("w/o pda", [](TrainConfig& c) { c.use_pda = false; });
      with("w/o atg", [](TrainConfig& c) { c.use_atg = false; });
      with("w/o uc", [](TrainConfig& c) { c.use_uc = false; });
      break;
    case AblationSuite::threshold_mode:
      with("fixed", [](TrainConfig& c) { c.threshold_mode = ThresholdMode::fixed; });
      with("adaptive", [](TrainConfig& c) { c.threshold_mode = ThresholdMode::adaptive; });
      break;
    case AblationSuite::sigma_sweep:
      for (double s : {0.8, 0.9, 1.0, 1.1, 1.2}) with(label("sigma", s), [s](TrainConfig& c) { c.sigma = s; });
      break;
    case AblationSuite::delta_sweep:
      for (double d : {0.3, 0.4, 0.5, 0.6, 0.7}) with(label("delta", d), [d](TrainConfig& c) { c.delta = d; });
      break;
    case AblationSuite::a_sweep:
      for (double a : {2.3, 2.4, 2.5, 2.6, 2.7}) with(label("A/Ks", a), [a](TrainConfig& c) { c.cluster_factor = a; });
      break;
  }
  return v;
}

struct AblationRow {
  std::string variant;
  std::uint64_t seed = 0;
  MetricsSummary metrics;
};

using AblationProgress = std::function<void(const AblationRow&)>;

// Every variant sees the same generated data for a given seed.
inline std::vector<AblationRow> run_ablation(const std::vector<AblationVariant>& variants, SynthConfig synth,
                                             std::span<const std::uint64_t> seeds,
                                             const AblationProgress& progress = nullptr) {
  std::vector<AblationRow> rows;
  for (auto seed : seeds) {
    synth.seed = seed;
    const auto data = generate_synthetic_ccod(synth);
    for (const auto& v : variants) {
      TrainConfig cfg = v.config;
      cfg.seed = seed;
      auto r = train(cfg, data.source, data.target.features);
      AblationRow row{v.name, seed,
                      evaluate(r.final_snapshot.decisions, data.target.ground_truth, data.target.num_id_classes)};
      if (progress) progress(row);
      rows.push_back(std::move(row));
    }
  }
  // Variant-major order, seeds ascending within a variant.
  std::stable_sort(rows.begin(), rows.end(), [&](const AblationRow& a, const AblationRow& b) {
    auto rank = [&](const std::string& n) {
      for (std::size_t i = 0; i < variants.size(); ++i)
        if (variants[i].name == n) return i;
      return variants.size();
    };
    return rank(a.variant) < rank(b.variant);
  });
  return rows;
}

struct VariantSummary {
  std::string variant;
  std::size_t runs = 0;
  double mean_hos = 0.0, std_hos = 0.0;
  double mean_os_star = 0.0, mean_unk = 0.0;
};

inline std::vector<VariantSummary> summarize(const std::vector<AblationRow>& rows) {
  std::vector<VariantSummary> out;
  for (const auto& r : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const VariantSummary& s) { return s.variant == r.variant; });
    if (it == out.end()) {
      out.push_back({r.variant});
      it = out.end() - 1;
    }
    ++it->runs;
    it->mean_hos += r.metrics.hos;
    it->mean_os_star += r.metrics.os_star;
    it->mean_unk += r.metrics.unk;
  }
  for (auto& s : out) {
    const double n = static_cast<double>(s.runs);
    s.mean_hos /= n;
    s.mean_os_star /= n;
    s.mean_unk /= n;
    double ss = 0.0;
    for (const auto& r : rows)
      if (r.variant == s.variant) ss += (r.metrics.hos - s.mean_hos) * (r.metrics.hos - s.mean_hos);
    s.std_hos = s.runs > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  }
  return out;
}

inline void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows) {
  auto out = open_output(path);
  out << "variant,seed,os_star,unk,hos\n";
  for (const auto& r : rows)
    out << r.variant << ',' << r.seed << ',' << fmt_real(r.metrics.os_star) << ',' << fmt_real(r.metrics.unk) << ','
        << fmt_real(r.metrics.hos) << '\n';
  finish_output(out, path);
}

// ---------------------------------------------------------------------------
// Plots.

// Rows projected on the top two principal axes of the pooled covariance.
// Identical rows all land on the origin.
inline Matrix pca_2d(const Matrix& x) {
  const std::size_t n = x.rows(), d = x.cols();
  Matrix out(n, 2);
  if (n == 0 || d == 0) return out;
  Eigen::MatrixXd m(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) m(i, j) = x(i, j);
  const Eigen::RowVectorXd mean = m.colwise().mean();
  m.rowwise() -= mean;
  const Eigen::MatrixXd cov = (m.transpose() * m) / static_cast<double>(std::max<std::size_t>(n - 1, 1));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  // Eigenvalues ascend; take the last two columns. Fix each axis' sign so the
  // largest-magnitude loading is positive, which makes the plot reproducible.
  for (int k = 0; k < 2 && k < static_cast<int>(d); ++k) {
    Eigen::VectorXd axis = es.eigenvectors().col(static_cast<Eigen::Index>(d) - 1 - k);
    Eigen::Index arg;
    axis.cwiseAbs().maxCoeff(&arg);
    if (axis(arg) < 0) axis = -axis;
    const Eigen::VectorXd proj = m * axis;
    for (std::size_t i = 0; i < n; ++i) out(i, static_cast<std::size_t>(k)) = std::abs(proj(static_cast<Eigen::Index>(i))) < 1e-12 ? 0.0 : proj(static_cast<Eigen::Index>(i));
  }
  return out;
}

struct Series {
  std::string name;
  std::string color;
  std::vector<double> x, y;
};

namespace svg_detail {

inline const char* palette(std::size_t i) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"};
  return colors[i % 7];
}

struct Frame {
  double x0, x1, y0, y1;
  double left = 60, right = 150, top = 30, bottom = 40, width = 640, height = 400;

  double px(double x) const { return left + (x1 == x0 ? 0.5 : (x - x0) / (x1 - x0)) * (width - left - right); }
  double py(double y) const { return height - bottom - (y1 == y0 ? 0.5 : (y - y0) / (y1 - y0)) * (height - top - bottom); }
};

inline Frame frame_for(const std::vector<Series>& series) {
  Frame f{0, 0, 0, 0};
  bool first = true;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      if (first) {
        f.x0 = f.x1 = s.x[i];
        f.y0 = f.y1 = s.y[i];
        first = false;
      }
      f.x0 = std::min(f.x0, s.x[i]);
      f.x1 = std::max(f.x1, s.x[i]);
      f.y0 = std::min(f.y0, s.y[i]);
      f.y1 = std::max(f.y1, s.y[i]);
    }
  return f;
}

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

inline void header(std::ostream& o, const Frame& f, const std::string& title, const std::string& xlabel) {
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << f.width << "\" height=\"" << f.height
    << "\" viewBox=\"0 0 " << f.width << ' ' << f.height << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << f.width / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">" << title << "</text>\n";
  const double xa = f.height - f.bottom, xb = f.width - f.right;
  o << "<line x1=\"" << f.left << "\" y1=\"" << xa << "\" x2=\"" << xb << "\" y2=\"" << xa << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << f.left << "\" y1=\"" << f.top << "\" x2=\"" << f.left << "\" y2=\"" << xa << "\" stroke=\"black\"/>\n";
  o << "<text x=\"" << (f.left + xb) / 2 << "\" y=\"" << f.height - 8 << "\" text-anchor=\"middle\">" << xlabel << "</text>\n";
  for (double t : {f.y0, 0.5 * (f.y0 + f.y1), f.y1})
    o << "<text x=\"" << f.left - 4 << "\" y=\"" << num(f.py(t) + 4) << "\" text-anchor=\"end\">" << tick(t) << "</text>\n";
  for (double t : {f.x0, 0.5 * (f.x0 + f.x1), f.x1})
    o << "<text x=\"" << num(f.px(t)) << "\" y=\"" << xa + 14 << "\" text-anchor=\"middle\">" << tick(t) << "</text>\n";
}

}  // namespace svg_detail

// One polyline plus one marker per finite point for each series.
inline void write_line_plot(const std::string& path, const std::string& title, const std::string& xlabel,
                            const std::vector<Series>& series) {
  using namespace svg_detail;
  auto f = frame_for(series);
  std::ostringstream o;
  header(o, f, title, xlabel);
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const std::string color = s.color.empty() ? palette(k) : s.color;
    std::string pts;
    for (std::size_t i = 0; i < s.x.size(); ++i)
      if (std::isfinite(s.y[i])) pts += num(f.px(s.x[i])) + "," + num(f.py(s.y[i])) + " ";
    o << "<g class=\"series\" data-name=\"" << s.name << "\">\n";
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"" << pts << "\"/>\n";
    for (std::size_t i = 0; i < s.x.size(); ++i)
      if (std::isfinite(s.y[i]))
        o << "<circle class=\"point\" cx=\"" << num(f.px(s.x[i])) << "\" cy=\"" << num(f.py(s.y[i]))
          << "\" r=\"2\" fill=\"" << color << "\"/>\n";
    o << "</g>\n";
    const double ly = f.top + 14.0 * static_cast<double>(k) + 8;
    o << "<text x=\"" << f.width - f.right + 12 << "\" y=\"" << ly + 4 << "\" fill=\"" << color << "\">" << s.name
      << "</text>\n";
  }
  o << "</svg>\n";
  auto out = open_output(path);
  out << o.str();
  finish_output(out, path);
}

inline void write_loss_plot(const std::string& path, const std::vector<EpochRecord>& log) {
  std::vector<Series> s(5);
  const char* names[] = {"lpb", "pda", "atg", "uc", "total"};
  for (int k = 0; k < 5; ++k) s[k].name = names[k];
  for (const auto& r : log) {
    const double vals[] = {r.mean_loss.lpb, r.mean_loss.pda, r.mean_loss.atg, r.mean_loss.uc, r.mean_loss.total};
    for (int k = 0; k < 5; ++k) {
      s[k].x.push_back(static_cast<double>(r.epoch));
      s[k].y.push_back(vals[k]);
    }
  }
  write_line_plot(path, "training losses", "epoch", s);
}

inline void write_hos_plot(const std::string& path, const std::vector<EpochRecord>& log) {
  std::vector<Series> s(3);
  s[0].name = "HOS";
  s[1].name = "OS*";
  s[2].name = "UNK";
  for (const auto& r : log) {
    if (!r.metrics) continue;
    const double vals[] = {r.metrics->hos, r.metrics->os_star, r.metrics->unk};
    for (int k = 0; k < 3; ++k) {
      s[k].x.push_back(static_cast<double>(r.epoch));
      s[k].y.push_back(vals[k]);
    }
  }
  write_line_plot(path, "target metrics", "epoch", s);
}

// Source rows first, then target rows; targets colored by verdict.
inline void write_pca_scatter(const std::string& path, const Matrix& source_features, const Matrix& target_features,
                              std::span<const TargetDecision> decisions) {
  using namespace svg_detail;
  if (source_features.cols() != target_features.cols()) throw InvalidInput("pca scatter: dimension mismatch");
  if (decisions.size() != target_features.rows()) throw InvalidInput("pca scatter: decision count mismatch");
  Matrix pooled(source_features.rows() + target_features.rows(), source_features.cols());
  std::copy(source_features.flat().begin(), source_features.flat().end(), pooled.flat().begin());
  std::copy(target_features.flat().begin(), target_features.flat().end(),
            pooled.flat().begin() + static_cast<std::ptrdiff_t>(source_features.size()));
  const Matrix p = pca_2d(pooled);
  Series all;
  for (std::size_t i = 0; i < p.rows(); ++i) {
    all.x.push_back(p(i, 0));
    all.y.push_back(p(i, 1));
  }
  auto f = frame_for({all});
  std::ostringstream o;
  header(o, f, "features (PCA)", "PC1");
  const std::size_t ns = source_features.rows();
  for (std::size_t i = 0; i < p.rows(); ++i) {
    const char* cls = i < ns ? "source" : (decisions[i - ns].is_ood() ? "target-ood" : "target-id");
    const char* color = i < ns ? "#1f77b4" : (decisions[i - ns].is_ood() ? "#d62728" : "#2ca02c");
    o << "<circle class=\"" << cls << "\" cx=\"" << num(f.px(p(i, 0))) << "\" cy=\"" << num(f.py(p(i, 1)))
      << "\" r=\"1.8\" fill=\"" << color << "\" fill-opacity=\"0.6\"/>\n";
  }
  const char* legend[][2] = {{"source", "#1f77b4"}, {"target ID", "#2ca02c"}, {"target OOD", "#d62728"}};
  for (int k = 0; k < 3; ++k)
    o << "<text x=\"" << f.width - f.right + 12 << "\" y=\"" << f.top + 14 * k + 12 << "\" fill=\"" << legend[k][1]
      << "\">" << legend[k][0] << "</text>\n";
  o << "</svg>\n";
  auto out = open_output(path);
  out << o.str();
  finish_output(out, path);
}

struct PlotFiles {
  std::string losses, metrics, scatter;
};

inline PlotFiles export_plots(const std::vector<EpochRecord>& log, const std::string& out_dir,
                              const Matrix* source_features = nullptr, const Matrix* target_features = nullptr,
                              std::span<const TargetDecision> decisions = {}) {
  if (log.empty()) throw InvalidInput("export_plots: empty metrics log");
  PlotFiles files;
  const auto dir = std::filesystem::path(out_dir);
  files.losses = (dir / "losses.svg").string();
  write_loss_plot(files.losses, log);
  files.metrics = (dir / "hos.svg").string();
  write_hos_plot(files.metrics, log);
  if (source_features && target_features) {
    files.scatter = (dir / "pca_scatter.svg").string();
    write_pca_scatter(files.scatter, *source_features, *target_features, decisions);
  }
  return files;
}

}  // namespace uasa
