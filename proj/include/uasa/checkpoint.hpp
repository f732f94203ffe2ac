#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "uasa/data.hpp"
#include "uasa/error.hpp"
#include "uasa/trainer.hpp"

namespace uasa {

// Same header shape as the dataset container ("CKPT", u32 version, u64 N,
// u32 d, u8 flag) where N counts named entries and d is the feature dim.
// Each entry: u32 name length, name bytes, u8 dtype, u64 rows, u32 cols,
// then rows*cols little-endian values. Payloads keep full precision (f64 /
// u64) so that a reloaded state is bit-identical.
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class EntryType : std::uint8_t { f64 = 0, u64 = 1 };

struct CheckpointEntry {
  EntryType type = EntryType::f64;
  std::uint64_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<double> f;
  std::vector<std::uint64_t> u;
};

class Checkpoint {
 public:
  void put(const std::string& name, const Matrix& m) {
    put(name, m.rows(), m.cols(), std::vector<double>(m.flat().begin(), m.flat().end()));
  }
  void put(const std::string& name, std::uint64_t rows, std::uint32_t cols, std::vector<double> v) {
    CheckpointEntry e;
    e.rows = rows;
    e.cols = cols;
    e.f = std::move(v);
    add(name, std::move(e));
  }
  void put_u64(const std::string& name, std::vector<std::uint64_t> v) {
    CheckpointEntry e;
    e.type = EntryType::u64;
    e.rows = v.size();
    e.cols = 1;
    e.u = std::move(v);
    add(name, std::move(e));
  }

  bool has(const std::string& name) const { return entries_.count(name) != 0; }

  const CheckpointEntry& at(const std::string& name, EntryType type) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ParseError("checkpoint: missing entry '" + name + "'");
    if (it->second.type != type) throw ParseError("checkpoint: entry '" + name + "' has the wrong type");
    return it->second;
  }
  Matrix matrix(const std::string& name) const {
    const auto& e = at(name, EntryType::f64);
    Matrix m(e.rows, e.cols);
    std::copy(e.f.begin(), e.f.end(), m.flat().begin());
    return m;
  }
  std::vector<double> f64(const std::string& name) const { return at(name, EntryType::f64).f; }
  std::vector<std::uint64_t> u64(const std::string& name) const { return at(name, EntryType::u64).u; }
  double scalar(const std::string& name) const {
    auto v = f64(name);
    if (v.size() != 1) throw ParseError("checkpoint: entry '" + name + "' is not a scalar");
    return v[0];
  }

  std::uint32_t dim = 0;
  const std::vector<std::string>& order() const { return order_; }

  void write(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.write("CKPT", 4);
    detail::put_le<std::uint32_t>(out, kCheckpointVersion);
    detail::put_le<std::uint64_t>(out, order_.size());
    detail::put_le<std::uint32_t>(out, dim);
    detail::put_le<std::uint8_t>(out, 0);
    for (const auto& name : order_) {
      const auto& e = entries_.at(name);
      detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(e.type));
      detail::put_le<std::uint64_t>(out, e.rows);
      detail::put_le<std::uint32_t>(out, e.cols);
      if (e.type == EntryType::f64)
        for (double v : e.f) detail::put_le<double>(out, v);
      else
        for (auto v : e.u) detail::put_le<std::uint64_t>(out, v);
    }
    if (!out) throw IoError("write failed: " + path);
  }

  static Checkpoint read(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, "CKPT", 4) != 0) throw ParseError(path + ": bad magic");
    const auto version = detail::get_le<std::uint32_t>(in, path, "version");
    if (version != kCheckpointVersion) throw ParseError(path + ": unsupported version " + std::to_string(version));
    const auto n = detail::get_le<std::uint64_t>(in, path, "entry count");
    Checkpoint ck;
    ck.dim = detail::get_le<std::uint32_t>(in, path, "d");
    detail::get_le<std::uint8_t>(in, path, "flag");
    for (std::uint64_t i = 0; i < n; ++i) {
      const auto len = detail::get_le<std::uint32_t>(in, path, "entry name length");
      if (len > 4096) throw ParseError(path + ": entry " + std::to_string(i) + " name too long");
      std::string name(len, '\0');
      if (!in.read(name.data(), len)) throw ParseError(path + ": truncated entry name");
      CheckpointEntry e;
      const auto type = detail::get_le<std::uint8_t>(in, path, "entry type");
      if (type > 1) throw ParseError(path + ": entry '" + name + "' has unknown type");
      e.type = static_cast<EntryType>(type);
      e.rows = detail::get_le<std::uint64_t>(in, path, "entry rows");
      e.cols = detail::get_le<std::uint32_t>(in, path, "entry cols");
      const std::uint64_t count = e.rows * e.cols;
      if (e.type == EntryType::f64) {
        e.f.resize(count);
        for (auto& v : e.f) v = detail::get_le<double>(in, path, name.c_str());
      } else {
        e.u.resize(count);
        for (auto& v : e.u) v = detail::get_le<std::uint64_t>(in, path, name.c_str());
      }
      ck.add(name, std::move(e));
    }
    return ck;
  }

 private:
  void add(const std::string& name, CheckpointEntry e) {
    if (entries_.count(name)) throw InvalidInput("checkpoint: duplicate entry '" + name + "'");
    order_.push_back(name);
    entries_.emplace(name, std::move(e));
  }

  std::vector<std::string> order_;
  std::map<std::string, CheckpointEntry> entries_;
};

inline Checkpoint to_checkpoint(const TrainState& s) {
  Checkpoint ck;
  ck.dim = static_cast<std::uint32_t>(s.feature_dim());
  ck.put_u64("meta", {s.seed, s.epoch, s.statistics_ready ? 1u : 0u,
                      static_cast<std::uint64_t>(s.encoder.activation), s.bank.clock()});
  ck.put_u64("encoder.layer_sizes", {s.encoder.layer_sizes.begin(), s.encoder.layer_sizes.end()});
  for (std::size_t l = 0; l < s.encoder.num_layers(); ++l) {
    ck.put("encoder.W" + std::to_string(l), s.encoder.weights[l]);
    ck.put("encoder.b" + std::to_string(l), s.encoder.biases[l]);
  }
  ck.put("prototypes", s.prototypes.weights);
  ck.put("sigma", 1, 1, {s.prototypes.sigma});
  ck.put("optimizer", 1, 2, {s.optimizer.learning_rate(), s.optimizer.momentum()});
  const auto& vel = s.optimizer.velocity();
  ck.put_u64("optimizer.tensors", {vel.size()});
  for (std::size_t t = 0; t < vel.size(); ++t) ck.put("optimizer.v" + std::to_string(t), vel[t].size(), 1, vel[t]);
  ck.put("bank.rows", s.bank.rows());
  ck.put_u64("bank.initialized", {s.bank.initialized_flags().begin(), s.bank.initialized_flags().end()});
  ck.put_u64("bank.updated_at", s.bank.updated_at());
  ck.put("clusters.centers", s.clusters.centers);
  ck.put_u64("clusters.assignment", {s.clusters.assignment.begin(), s.clusters.assignment.end()});
  ck.put("clusters.objective", s.clusters.objective.size(), 1, s.clusters.objective);
  ck.put_u64("clusters.iterations", {s.clusters.iterations});
  const auto& th = s.thresholds;
  ck.put("thresholds.mean_entropy", th.mean_entropy.size(), 1, th.mean_entropy);
  ck.put("thresholds.values", th.thresholds.size(), 1, th.thresholds);
  ck.put_u64("thresholds.defined", {th.defined.begin(), th.defined.end()});
  ck.put("thresholds.alpha", 1, 1, {th.alpha});
  return ck;
}

inline TrainState from_checkpoint(const Checkpoint& ck) {
  TrainState s;
  const auto meta = ck.u64("meta");
  if (meta.size() != 5) throw ParseError("checkpoint: malformed meta entry");
  s.seed = meta[0];
  s.epoch = meta[1];
  s.statistics_ready = meta[2] != 0;
  if (meta[3] > 1) throw ParseError("checkpoint: unknown activation");
  const auto sizes = ck.u64("encoder.layer_sizes");
  if (sizes.empty()) throw ParseError("checkpoint: empty layer list");
  s.encoder.layer_sizes.assign(sizes.begin(), sizes.end());
  s.encoder.activation = static_cast<Activation>(meta[3]);
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    s.encoder.weights.push_back(ck.matrix("encoder.W" + std::to_string(l)));
    s.encoder.biases.push_back(ck.matrix("encoder.b" + std::to_string(l)));
    if (s.encoder.weights[l].rows() != sizes[l + 1] || s.encoder.weights[l].cols() != sizes[l])
      throw ParseError("checkpoint: encoder layer " + std::to_string(l) + " has the wrong shape");
  }
  s.prototypes.weights = ck.matrix("prototypes");
  s.prototypes.sigma = ck.scalar("sigma");
  if (s.prototypes.weights.cols() != s.encoder.output_dim())
    throw ParseError("checkpoint: prototype dimension does not match the encoder");
  const auto opt = ck.f64("optimizer");
  if (opt.size() != 2) throw ParseError("checkpoint: malformed optimizer entry");
  s.optimizer = SgdMomentum(opt[0], opt[1]);
  const auto nvel = ck.u64("optimizer.tensors").at(0);
  for (std::uint64_t t = 0; t < nvel; ++t) s.optimizer.velocity().push_back(ck.f64("optimizer.v" + std::to_string(t)));

  const auto init = ck.u64("bank.initialized");
  s.bank = MemoryBank();
  s.bank.restore(ck.matrix("bank.rows"), {init.begin(), init.end()}, ck.u64("bank.updated_at"), meta[4]);

  s.clusters.centers = ck.matrix("clusters.centers");
  const auto assign = ck.u64("clusters.assignment");
  s.clusters.assignment.assign(assign.begin(), assign.end());
  s.clusters.objective = ck.f64("clusters.objective");
  s.clusters.iterations = ck.u64("clusters.iterations").at(0);

  s.thresholds.mean_entropy = ck.f64("thresholds.mean_entropy");
  s.thresholds.thresholds = ck.f64("thresholds.values");
  const auto def = ck.u64("thresholds.defined");
  s.thresholds.defined.assign(def.begin(), def.end());
  s.thresholds.alpha = ck.scalar("thresholds.alpha");
  return s;
}

inline void save_checkpoint(const std::string& path, const TrainState& s) { to_checkpoint(s).write(path); }
inline TrainState load_checkpoint(const std::string& path) { return from_checkpoint(Checkpoint::read(path)); }

}  // namespace uasa
