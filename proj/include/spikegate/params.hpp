#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>

#include "spikegate/binary_io.hpp"
#include "spikegate/tensor.hpp"

namespace spikegate {

/// Named parameters of a network plus a parallel gradient map.
///
/// Names follow "<layer-id>.<role>" (weight, bias, gamma, beta,
/// running_mean, running_var). Converted spiking networks additionally
/// carry per-layer thresholds "thresh.<layer-id>" and residual shortcut
/// scales "rscale.<layer-id>". Only entries in the trainable set are
/// touched by optimizers.
class ParameterSet {
 public:
  void add(const std::string& name, Tensor value, bool trainable) {
    grads_[name] = Tensor(value.shape());
    values_[name] = std::move(value);
    if (trainable) {
      trainable_.insert(name);
    } else {
      trainable_.erase(name);
    }
  }

  bool contains(const std::string& name) const { return values_.count(name) != 0; }

  const Tensor& value(const std::string& name) const {
    auto it = values_.find(name);
    if (it == values_.end()) throw ConfigError("no parameter named '" + name + "'");
    return it->second;
  }
  Tensor& value(const std::string& name) {
    auto it = values_.find(name);
    if (it == values_.end()) throw ConfigError("no parameter named '" + name + "'");
    return it->second;
  }
  Tensor& grad(const std::string& name) {
    auto it = grads_.find(name);
    if (it == grads_.end()) throw ConfigError("no gradient for '" + name + "'");
    return it->second;
  }
  const Tensor& grad(const std::string& name) const {
    auto it = grads_.find(name);
    if (it == grads_.end()) throw ConfigError("no gradient for '" + name + "'");
    return it->second;
  }

  /// Replaces a value keeping its trainable flag; shape may change only
  /// when the entry is new.
  void set(const std::string& name, Tensor value) {
    auto it = values_.find(name);
    if (it == values_.end()) {
      add(name, std::move(value), false);
      return;
    }
    it->second.require_same_shape(value, ("set " + name).c_str());
    it->second = std::move(value);
  }

  bool trainable(const std::string& name) const { return trainable_.count(name) != 0; }
  void set_trainable(const std::string& name, bool on) {
    value(name);
    if (on) {
      trainable_.insert(name);
    } else {
      trainable_.erase(name);
    }
  }

  void zero_grads() {
    for (auto& [_, g] : grads_) g.fill(0.0);
  }

  const std::map<std::string, Tensor>& values() const { return values_; }
  const std::map<std::string, Tensor>& grads() const { return grads_; }
  const std::set<std::string>& trainable_names() const { return trainable_; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, v] : values_) n += v.size();
    return n;
  }

  std::size_t trainable_scalar_count() const {
    std::size_t n = 0;
    for (const auto& name : trainable_) n += values_.at(name).size();
    return n;
  }

  friend bool operator==(const ParameterSet& a, const ParameterSet& b) {
    return a.values_ == b.values_ && a.trainable_ == b.trainable_;
  }

 private:
  std::map<std::string, Tensor> values_;
  std::map<std::string, Tensor> grads_;
  std::set<std::string> trainable_;
};

inline std::string threshold_name(const std::string& layer_id) { return "thresh." + layer_id; }
inline std::string shortcut_scale_name(const std::string& layer_id) { return "rscale." + layer_id; }

// ---------------------------------------------------------------------------
// Checkpoint file: "SGWT", u32 version, u32 count, then per entry
// u16 name length, name bytes, u8 rank, u32 extents[rank], f64 payload.
// All little-endian.

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::vector<unsigned char> encode_checkpoint(const std::map<std::string, Tensor>& entries) {
  io::Writer w;
  w.raw("SGWT", 4);
  w.le<std::uint32_t>(kCheckpointVersion);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, t] : entries) {
    if (name.size() > 0xffff) throw FormatError("parameter name too long: " + name);
    if (t.rank() > 0xff) throw FormatError("tensor rank too large for checkpoint: " + name);
    w.le<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    w.raw(name.data(), name.size());
    w.u8(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t e : t.shape()) w.le<std::uint32_t>(static_cast<std::uint32_t>(e));
    for (double v : t.data()) w.le<double>(v);
  }
  return std::move(w.bytes());
}

inline std::map<std::string, Tensor> decode_checkpoint(const std::vector<unsigned char>& bytes) {
  io::Reader r(bytes, "checkpoint");
  if (r.str(4) != "SGWT") throw FormatError("checkpoint: bad magic");
  const auto version = r.le<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto count = r.le<std::uint32_t>();
  std::map<std::string, Tensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.le<std::uint16_t>();
    std::string name = r.str(len);
    const auto rank = r.u8();
    Shape shape(rank);
    for (auto& e : shape) e = r.le<std::uint32_t>();
    std::vector<double> data(shape_size(shape));
    r.need(data.size() * 8);
    for (double& v : data) v = r.le<double>();
    out.emplace(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (r.remaining() != 0) throw FormatError("checkpoint: trailing bytes");
  return out;
}

inline void save_checkpoint(const ParameterSet& params, const std::filesystem::path& path) {
  io::write_file(path, encode_checkpoint(params.values()));
}

/// Loads values into an existing parameter set. Entries present in the file
/// but not in `params` are added as non-trainable (thresholds, scales).
inline void load_checkpoint(ParameterSet& params, const std::filesystem::path& path) {
  for (auto& [name, t] : decode_checkpoint(io::read_file(path))) {
    if (params.contains(name)) {
      params.set(name, std::move(t));
    } else {
      params.add(name, std::move(t), false);
    }
  }
}

}  // namespace spikegate
