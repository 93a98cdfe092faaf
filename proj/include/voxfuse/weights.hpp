#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "voxfuse/binary_io.hpp"
#include "voxfuse/tensor.hpp"

namespace voxfuse {

namespace role {
inline constexpr std::string_view kKernel = "kernel";
inline constexpr std::string_view kBias = "bias";
// Per-output-channel multiplier on the fused addition operand; absent means 1.
inline constexpr std::string_view kBaseScale = "base_scale";
inline constexpr std::string_view kBnMean = "bn_mean";
inline constexpr std::string_view kBnVar = "bn_var";
inline constexpr std::string_view kBnEps = "bn_eps";
inline constexpr std::string_view kScaleGamma = "scale_gamma";
inline constexpr std::string_view kScaleBeta = "scale_beta";
}  // namespace role

inline std::string weight_key(std::string_view layer, std::string_view role) {
  std::string key(layer);
  key += '.';
  key += role;
  return key;
}

// Named tensors, keyed "<layer>.<role>".
class WeightStore {
 public:
  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  bool contains(std::string_view layer, std::string_view r) const {
    return contains(weight_key(layer, r));
  }

  const StandardTensor& get(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw Error(ErrorKind::Shape, "missing weight entry '" + name + "'");
    return it->second;
  }
  const StandardTensor& get(std::string_view layer, std::string_view r) const {
    return get(weight_key(layer, r));
  }
  StandardTensor& get_mutable(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw Error(ErrorKind::Shape, "missing weight entry '" + name + "'");
    return it->second;
  }
  const StandardTensor* find(std::string_view layer, std::string_view r) const {
    auto it = entries_.find(weight_key(layer, r));
    return it == entries_.end() ? nullptr : &it->second;
  }

  void set(const std::string& name, StandardTensor t) { entries_[name] = std::move(t); }
  void set(std::string_view layer, std::string_view r, StandardTensor t) {
    set(weight_key(layer, r), std::move(t));
  }
  bool erase(const std::string& name) { return entries_.erase(name) != 0; }

  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  friend bool operator==(const WeightStore&, const WeightStore&) = default;

 private:
  std::map<std::string, StandardTensor> entries_;
};

// PZNW weight files: magic "PZNW", u32 version 1, u32 entry count; per entry
// u32 name length, UTF-8 name, u8 dtype (0 = f32), u8 rank, rank x u32 dims,
// row-major f32 payload. All little-endian.
inline constexpr std::uint32_t kWeightsVersion = 1;

inline std::vector<std::uint8_t> save_weights(const WeightStore& store) {
  io::ByteWriter w;
  w.magic("PZNW");
  w.u32(kWeightsVersion);
  w.u32(static_cast<std::uint32_t>(store.size()));
  for (const auto& [name, t] : store) {
    w.str(name);
    w.u8(0);
    w.u8(static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.dims()) w.u32(static_cast<std::uint32_t>(d));
    w.f32s(t.data());
  }
  return w.take();
}

inline WeightStore load_weights(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  r.set_context("weights header");
  r.expect_magic("PZNW");
  if (const auto v = r.u32(); v != kWeightsVersion)
    throw Error(ErrorKind::Format, "unsupported weights version " + std::to_string(v));
  const auto count = r.u32();
  WeightStore store;
  for (std::uint32_t i = 0; i < count; ++i) {
    r.set_context("entry #" + std::to_string(i) + " name");
    std::string name = r.str();
    r.set_context("entry '" + name + "'");
    if (const auto dtype = r.u8(); dtype != 0)
      throw Error(ErrorKind::Format,
                  "entry '" + name + "' has unsupported dtype " + std::to_string(dtype));
    const auto rank = r.u8();
    std::vector<std::int64_t> dims(rank);
    for (auto& d : dims) d = r.u32();
    StandardTensor t(dims);
    r.f32s(t.data());
    if (store.contains(name)) throw Error(ErrorKind::DuplicateName, "duplicate entry '" + name + "'");
    store.set(name, std::move(t));
  }
  if (r.remaining() != 0) throw Error(ErrorKind::Format, "trailing bytes after last entry");
  return store;
}

inline WeightStore load_weights_file(const std::string& path) {
  return load_weights(io::read_file(path));
}

inline void save_weights_file(const std::string& path, const WeightStore& store) {
  io::write_file(path, save_weights(store));
}

}  // namespace voxfuse
