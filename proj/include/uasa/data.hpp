#pragma once

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "uasa/error.hpp"
#include "uasa/rng.hpp"
#include "uasa/tensor.hpp"

namespace uasa {

// Class labels are 0-based in memory; -1 marks an unlabeled row. Files store
// them 1-based (see write_csv / write_binary).
inline constexpr int kUnlabeled = -1;

struct SourceDataset {
  Matrix features;
  std::vector<int> labels;
  std::size_t num_classes = 0;

  std::size_t size() const { return features.rows(); }
  std::size_t dim() const { return features.cols(); }
};

// Ground truth lives beside the features but training code only ever receives
// `features` (see Trainer), so the labels cannot leak into optimization.
struct TargetDataset {
  Matrix features;
  std::vector<int> ground_truth;  // empty when unknown; classes >= num_id_classes are OOD
  std::size_t num_id_classes = 0;
  std::size_t num_ood_classes = 0;

  std::size_t size() const { return features.rows(); }
  std::size_t dim() const { return features.cols(); }
  bool has_ground_truth() const { return !ground_truth.empty(); }
};

inline void validate_source(const SourceDataset& s) {
  if (s.num_classes == 0) throw InvalidInput("source dataset has no classes");
  if (s.labels.size() != s.size()) throw InvalidInput("source label count != sample count");
  std::vector<std::size_t> counts(s.num_classes, 0);
  for (std::size_t i = 0; i < s.labels.size(); ++i) {
    const int y = s.labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= s.num_classes)
      throw InvalidInput("source label out of range at row " + std::to_string(i));
    ++counts[static_cast<std::size_t>(y)];
  }
  for (std::size_t c = 0; c < counts.size(); ++c)
    if (counts[c] == 0) throw InvalidInput("source class " + std::to_string(c + 1) + " has no samples");
}

// ---------------------------------------------------------------------------
// Synthetic class-imbalanced, domain-shifted Gaussian mixtures.

struct SynthConfig {
  std::size_t num_id_classes = 5;   // K_s
  std::size_t num_ood_classes = 3;  // K_t
  std::size_t raw_dim = 8;
  std::size_t max_class_size = 300;  // N_max of the source profile
  double imbalance = 10.0;           // mu = N_max / N_min
  std::size_t target_size = 2000;    // 0: target profile also peaks at max_class_size
  double radius = 5.0;
  double class_sigma = 1.0;
  double rotation_deg = 15.0;
  double translation = 1.0;
  double noise_sigma = 0.2;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_id_classes < 2) throw InvalidConfig("num_id_classes (K_s) must be at least 2");
    if (raw_dim < 2) throw InvalidConfig("raw_dim must be at least 2");
    if (max_class_size == 0) throw InvalidConfig("max_class_size must be positive");
    if (!(imbalance >= 1.0)) throw InvalidConfig("imbalance factor mu must be >= 1");
    if (!(class_sigma >= 0.0) || !(noise_sigma >= 0.0) || !(translation >= 0.0))
      throw InvalidConfig("sigmas and translation must be non-negative");
  }
};

// O_i = round(N_max * mu^(-(i-1)/(K-1))), i = 1..K.
inline std::vector<std::size_t> geometric_class_sizes(std::size_t k, std::size_t n_max, double mu) {
  if (k == 0) throw InvalidConfig("class count must be positive");
  if (k == 1) {
    if (mu > 1.0) throw InvalidConfig("a single class cannot have imbalance factor > 1");
    return {n_max};
  }
  std::vector<std::size_t> sizes(k);
  for (std::size_t i = 0; i < k; ++i) {
    const double v = static_cast<double>(n_max) *
                     std::pow(mu, -static_cast<double>(i) / static_cast<double>(k - 1));
    sizes[i] = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(v)));
  }
  return sizes;
}

// Same geometric shape, rescaled so the sizes sum to exactly `total`.
inline std::vector<std::size_t> geometric_sizes_with_total(std::size_t k, std::size_t total, double mu) {
  if (total < k) throw InvalidConfig("target_size must be at least the number of classes");
  std::vector<double> w(k);
  for (std::size_t i = 0; i < k; ++i)
    w[i] = k == 1 ? 1.0 : std::pow(mu, -static_cast<double>(i) / static_cast<double>(k - 1));
  const double sum = std::accumulate(w.begin(), w.end(), 0.0);
  std::vector<std::size_t> sizes(k);
  std::size_t acc = 0;
  for (std::size_t i = 0; i < k; ++i) {
    sizes[i] = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(total * w[i] / sum)));
    acc += sizes[i];
  }
  // Absorb rounding residue in the largest class.
  if (acc > total) sizes[0] -= acc - total;
  else sizes[0] += total - acc;
  return sizes;
}

struct SyntheticData {
  SourceDataset source;
  TargetDataset target;
  std::vector<std::size_t> source_class_sizes;
  std::vector<std::size_t> target_class_sizes;  // indexed by class label
};

inline double round_to_float(double x) { return static_cast<double>(static_cast<float>(x)); }

inline SyntheticData generate_synthetic_ccod(const SynthConfig& cfg) {
  cfg.validate();
  const std::size_t ks = cfg.num_id_classes;
  const std::size_t kt = cfg.num_ood_classes;
  const std::size_t k_all = ks + kt;
  const std::size_t d = cfg.raw_dim;
  auto rng = make_rng(cfg.seed, "data");
  const double pi = std::acos(-1.0);

  // Class means evenly spaced on a circle in the first two coordinates; which
  // circle slot each label occupies is a seeded permutation, so OOD classes
  // sit between ID classes.
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double phase = 2.0 * pi * unit(rng);
  std::vector<std::size_t> slot(k_all);
  std::iota(slot.begin(), slot.end(), 0);
  std::shuffle(slot.begin(), slot.end(), rng);
  Matrix means(k_all, d);
  for (std::size_t c = 0; c < k_all; ++c) {
    const double a = phase + 2.0 * pi * static_cast<double>(slot[c]) / static_cast<double>(k_all);
    means(c, 0) = cfg.radius * std::cos(a);
    means(c, 1) = cfg.radius * std::sin(a);
  }

  // Domain shift: rotation in the mean plane, translation along a random unit direction.
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> direction(d);
  double dn = 0.0;
  for (auto& v : direction) {
    v = gauss(rng);
    dn += v * v;
  }
  dn = std::sqrt(dn);
  for (auto& v : direction) v = v / dn * cfg.translation;
  const double theta = cfg.rotation_deg * pi / 180.0;
  const double cs = std::cos(theta), sn = std::sin(theta);

  SyntheticData out;
  out.source_class_sizes = geometric_class_sizes(ks, cfg.max_class_size, cfg.imbalance);
  std::vector<std::size_t> profile = cfg.target_size > 0
                                         ? geometric_sizes_with_total(k_all, cfg.target_size, cfg.imbalance)
                                         : geometric_class_sizes(k_all, cfg.max_class_size, cfg.imbalance);
  std::vector<std::size_t> order(k_all);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  out.target_class_sizes.assign(k_all, 0);
  for (std::size_t r = 0; r < k_all; ++r) out.target_class_sizes[order[r]] = profile[r];

  auto draw = [&](std::size_t c, std::span<double> x) {
    for (std::size_t j = 0; j < d; ++j) x[j] = means(c, j) + cfg.class_sigma * gauss(rng);
  };

  const std::size_t ns = std::accumulate(out.source_class_sizes.begin(), out.source_class_sizes.end(),
                                         std::size_t{0});
  Matrix src(ns, d);
  std::vector<int> src_labels(ns);
  std::size_t row = 0;
  for (std::size_t c = 0; c < ks; ++c)
    for (std::size_t n = 0; n < out.source_class_sizes[c]; ++n, ++row) {
      draw(c, src.row(row));
      src_labels[row] = static_cast<int>(c);
    }

  const std::size_t nt = std::accumulate(out.target_class_sizes.begin(), out.target_class_sizes.end(),
                                         std::size_t{0});
  Matrix tgt(nt, d);
  std::vector<int> tgt_labels(nt);
  row = 0;
  std::vector<double> x(d);
  for (std::size_t c = 0; c < k_all; ++c)
    for (std::size_t n = 0; n < out.target_class_sizes[c]; ++n, ++row) {
      draw(c, x);
      auto y = tgt.row(row);
      for (std::size_t j = 0; j < d; ++j) y[j] = x[j];
      y[0] = cs * x[0] - sn * x[1];
      y[1] = sn * x[0] + cs * x[1];
      for (std::size_t j = 0; j < d; ++j) y[j] += direction[j] + cfg.noise_sigma * gauss(rng);
      tgt_labels[row] = static_cast<int>(c);
    }

  // Shuffle rows and store float-representable values so the binary format round-trips exactly.
  auto shuffle_rows = [&](Matrix& m, std::vector<int>& labels) {
    std::vector<std::size_t> perm(m.rows());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix sm = gather_rows(m, perm);
    std::vector<int> sl(labels.size());
    for (std::size_t i = 0; i < perm.size(); ++i) sl[i] = labels[perm[i]];
    for (auto& v : sm.flat()) v = round_to_float(v);
    m = std::move(sm);
    labels = std::move(sl);
  };
  shuffle_rows(src, src_labels);
  shuffle_rows(tgt, tgt_labels);

  out.source = SourceDataset{std::move(src), std::move(src_labels), ks};
  out.target = TargetDataset{std::move(tgt), std::move(tgt_labels), ks, kt};
  return out;
}

// ---------------------------------------------------------------------------
// Feature files.

// A loaded feature table; labels are 0-based with -1 for unlabeled rows.
struct FeatureTable {
  Matrix features;
  std::vector<int> labels;
  bool has_labels = false;
};

enum class FileFormat { csv, binary };

inline FileFormat format_from_path(const std::string& path) {
  const auto dot = path.rfind('.');
  if (dot != std::string::npos && path.substr(dot) == ".csv") return FileFormat::csv;
  return FileFormat::binary;
}

inline void write_csv(const std::string& path, const Matrix& features, const std::vector<int>& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "label";
  for (std::size_t j = 0; j < features.cols(); ++j) out << ",f" << j;
  out << '\n';
  char buf[64];
  for (std::size_t i = 0; i < features.rows(); ++i) {
    const int y = labels.empty() ? kUnlabeled : labels[i];
    out << (y < 0 ? -1 : y + 1);
    for (double v : features.row(i)) {
      auto res = std::to_chars(buf, buf + sizeof buf, v);
      out << ',' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

inline FeatureTable read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ": missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) header.push_back(tok);
  }
  if (header.empty() || header[0] != "label")
    throw ParseError(path + ": header must start with 'label'");
  const std::size_t d = header.size() - 1;
  for (std::size_t j = 0; j < d; ++j)
    if (header[j + 1] != "f" + std::to_string(j))
      throw ParseError(path + ": header column " + std::to_string(j + 1) + " must be f" + std::to_string(j));
  std::vector<double> values;
  std::vector<int> labels;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++row;
    std::size_t col = 0;
    const char* p = line.data();
    const char* end = line.data() + line.size();
    while (true) {
      const char* comma = std::find(p, end, ',');
      if (col > d) throw ParseError(path + ": row " + std::to_string(row) + " has too many columns");
      if (col == 0) {
        int y = 0;
        auto r = std::from_chars(p, comma, y);
        if (r.ec != std::errc() || r.ptr != comma)
          throw ParseError(path + ": row " + std::to_string(row) + " column 0: bad label");
        if (y == 0 || y < -1)
          throw ParseError(path + ": row " + std::to_string(row) + " column 0: label must be >= 1 or -1");
        labels.push_back(y < 0 ? kUnlabeled : y - 1);
      } else {
        double v = 0.0;
        auto r = std::from_chars(p, comma, v);
        if (r.ec != std::errc() || r.ptr != comma || !std::isfinite(v))
          throw ParseError(path + ": row " + std::to_string(row) + " column " + std::to_string(col) +
                           ": bad or non-finite value");
        values.push_back(v);
      }
      ++col;
      if (comma == end) break;
      p = comma + 1;
    }
    if (col != d + 1)
      throw ParseError(path + ": row " + std::to_string(row) + " has " + std::to_string(col) +
                       " columns, expected " + std::to_string(d + 1));
  }
  FeatureTable t;
  t.features = Matrix(labels.size(), d);
  std::copy(values.begin(), values.end(), t.features.flat().begin());
  t.has_labels = std::any_of(labels.begin(), labels.end(), [](int y) { return y >= 0; });
  t.labels = std::move(labels);
  return t;
}

namespace detail {

template <typename T>
void put_le(std::ostream& out, T v) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get_le(std::istream& in, const std::string& path, const char* what) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v))
    throw ParseError(path + ": truncated while reading " + what);
  return v;
}

}  // namespace detail

inline constexpr std::uint32_t kBinaryVersion = 1;

// Layout: "CCOD", u32 version, u64 N, u32 d, u8 has_labels, N*d f32 row-major,
// then N i32 labels (1-based, -1 unlabeled) when has_labels.
inline void write_binary(const std::string& path, const Matrix& features, const std::vector<int>& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out.write("CCOD", 4);
  detail::put_le<std::uint32_t>(out, kBinaryVersion);
  detail::put_le<std::uint64_t>(out, features.rows());
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(features.cols()));
  detail::put_le<std::uint8_t>(out, labels.empty() ? 0 : 1);
  for (double v : features.flat()) detail::put_le<float>(out, static_cast<float>(v));
  if (!labels.empty())
    for (int y : labels) detail::put_le<std::int32_t>(out, y < 0 ? -1 : y + 1);
  if (!out) throw IoError("write failed: " + path);
}

inline FeatureTable read_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "CCOD", 4) != 0) throw ParseError(path + ": bad magic");
  const auto version = detail::get_le<std::uint32_t>(in, path, "version");
  if (version != kBinaryVersion) throw ParseError(path + ": unsupported version " + std::to_string(version));
  const auto n = detail::get_le<std::uint64_t>(in, path, "N");
  const auto d = detail::get_le<std::uint32_t>(in, path, "d");
  const auto has_labels = detail::get_le<std::uint8_t>(in, path, "has_labels");
  FeatureTable t;
  t.features = Matrix(n, d);
  for (std::uint64_t i = 0; i < n; ++i)
    for (std::uint32_t j = 0; j < d; ++j) {
      const float v = detail::get_le<float>(in, path, "features");
      if (!std::isfinite(v))
        throw ParseError(path + ": row " + std::to_string(i + 1) + " column " + std::to_string(j + 1) +
                         ": non-finite value");
      t.features(i, j) = v;
    }
  t.labels.assign(n, kUnlabeled);
  if (has_labels) {
    for (std::uint64_t i = 0; i < n; ++i) {
      const auto y = detail::get_le<std::int32_t>(in, path, "labels");
      if (y == 0 || y < -1) throw ParseError(path + ": row " + std::to_string(i + 1) + ": bad label");
      t.labels[i] = y < 0 ? kUnlabeled : y - 1;
    }
  }
  t.has_labels = has_labels != 0;
  return t;
}

inline FeatureTable load_features(const std::string& path, FileFormat fmt) {
  return fmt == FileFormat::csv ? read_csv(path) : read_binary(path);
}

inline FeatureTable load_features(const std::string& path) { return load_features(path, format_from_path(path)); }

inline void save_features(const std::string& path, const Matrix& features, const std::vector<int>& labels) {
  if (format_from_path(path) == FileFormat::csv) write_csv(path, features, labels);
  else write_binary(path, features, labels);
}

inline SourceDataset to_source(FeatureTable t, std::size_t num_classes = 0) {
  if (num_classes == 0)
    for (int y : t.labels) num_classes = std::max(num_classes, static_cast<std::size_t>(std::max(y, -1) + 1));
  SourceDataset s{std::move(t.features), std::move(t.labels), num_classes};
  validate_source(s);
  return s;
}

// Any labeled row >= num_id_classes is ground-truth OOD.
inline TargetDataset to_target(FeatureTable t, std::size_t num_id_classes) {
  TargetDataset out;
  out.features = std::move(t.features);
  out.num_id_classes = num_id_classes;
  if (t.has_labels) {
    out.ground_truth = std::move(t.labels);
    int mx = -1;
    for (int y : out.ground_truth) mx = std::max(mx, y);
    if (mx >= static_cast<int>(num_id_classes))
      out.num_ood_classes = static_cast<std::size_t>(mx + 1) - num_id_classes;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Mini-batches.

// Seeded permutation of 0..n-1 for (seed, epoch), chunked; the last partial batch is kept.
inline std::vector<std::vector<std::size_t>> minibatches(std::size_t n, std::size_t batch_size,
                                                         std::uint64_t seed, std::uint64_t epoch) {
  if (batch_size == 0) throw InvalidParameter("batch_size must be >= 1");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(derive_seed(seed, "shuffle", epoch));
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch_size)
    out.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(i),
                     perm.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
  return out;
}

// Endless stream of batches that reshuffles each time it wraps around.
class BatchStream {
 public:
  BatchStream(std::size_t n, std::size_t batch_size, std::uint64_t seed)
      : n_(n), batch_size_(batch_size), seed_(seed) {}

  const std::vector<std::size_t>& next() {
    if (pos_ >= batches_.size()) {
      batches_ = minibatches(n_, batch_size_, seed_, cycle_++);
      pos_ = 0;
    }
    return batches_[pos_++];
  }

  std::size_t batches_per_cycle() const { return (n_ + batch_size_ - 1) / batch_size_; }

 private:
  std::size_t n_, batch_size_;
  std::uint64_t seed_;
  std::uint64_t cycle_ = 0;
  std::size_t pos_ = 0;
  std::vector<std::vector<std::size_t>> batches_;
};

}  // namespace uasa
