#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "voxfuse/binary_io.hpp"
#include "voxfuse/tensor.hpp"

namespace voxfuse {

// PZNV volume files: magic "PZNV", u32 version 1, u8 rank 5, rank x u32 dims
// (B, F, X, Y, Z), then row-major f32 values. All little-endian.
inline constexpr std::uint32_t kVolumeVersion = 1;

inline std::vector<std::uint8_t> encode_volume(const StandardTensor& t) {
  t.require_rank(5);
  io::ByteWriter w;
  w.magic("PZNV");
  w.u32(kVolumeVersion);
  w.u8(5);
  for (auto d : t.dims()) w.u32(static_cast<std::uint32_t>(d));
  w.f32s(t.data());
  return w.take();
}

inline StandardTensor decode_volume(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  r.set_context("volume header");
  r.expect_magic("PZNV");
  if (const auto v = r.u32(); v != kVolumeVersion)
    throw Error(ErrorKind::Format, "unsupported volume version " + std::to_string(v));
  if (const auto rank = r.u8(); rank != 5)
    throw Error(ErrorKind::Format, "volume rank must be 5, got " + std::to_string(rank));
  std::vector<std::int64_t> dims(5);
  for (auto& d : dims) d = r.u32();
  StandardTensor t(dims);
  r.set_context("volume payload");
  r.f32s(t.data());
  if (r.remaining() != 0) throw Error(ErrorKind::Format, "trailing bytes after volume payload");
  return t;
}

inline StandardTensor load_volume(const std::string& path) {
  const auto bytes = io::read_file(path);
  return decode_volume(bytes);
}

inline void save_volume(const std::string& path, const StandardTensor& t) {
  io::write_file(path, encode_volume(t));
}

}  // namespace voxfuse
