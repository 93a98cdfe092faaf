#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "voxfuse/error.hpp"
#include "voxfuse/geometry.hpp"
#include "voxfuse/simd.hpp"

namespace voxfuse {

// Dense row-major float tensor in the conventional layout. Images are
// (B, F, X, Y, Z); convolution kernels are (F', F, Kx, Ky, Kz).
class StandardTensor {
 public:
  StandardTensor() = default;
  explicit StandardTensor(std::vector<std::int64_t> dims, float fill = 0.0f)
      : dims_(std::move(dims)), data_(checked_numel(dims_), fill) {}
  StandardTensor(std::vector<std::int64_t> dims, std::vector<float> data)
      : dims_(std::move(dims)), data_(std::move(data)) {
    if (static_cast<std::int64_t>(data_.size()) != checked_numel(dims_))
      throw Error(ErrorKind::Shape, "data length " + std::to_string(data_.size()) +
                                        " does not match dims");
  }
  explicit StandardTensor(std::initializer_list<std::int64_t> dims, float fill = 0.0f)
      : StandardTensor(std::vector<std::int64_t>(dims), fill) {}
  explicit StandardTensor(const Shape5& shape, float fill = 0.0f)
      : StandardTensor(std::vector<std::int64_t>{shape.b, shape.f, shape.x, shape.y, shape.z},
                       fill) {}

  const std::vector<std::int64_t>& dims() const noexcept { return dims_; }
  int rank() const noexcept { return static_cast<int>(dims_.size()); }
  std::int64_t numel() const noexcept { return static_cast<std::int64_t>(data_.size()); }
  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }
  std::vector<float>& values() noexcept { return data_; }
  const std::vector<float>& values() const noexcept { return data_; }

  Shape5 shape5() const {
    require_rank(5);
    return {dims_[0], dims_[1], dims_[2], dims_[3], dims_[4]};
  }

  void require_rank(int r) const {
    if (rank() != r)
      throw Error(ErrorKind::Shape,
                  "expected rank " + std::to_string(r) + ", got " + std::to_string(rank()));
  }

  std::int64_t offset(std::int64_t i0, std::int64_t i1, std::int64_t i2, std::int64_t i3,
                      std::int64_t i4) const noexcept {
    return (((i0 * dims_[1] + i1) * dims_[2] + i2) * dims_[3] + i3) * dims_[4] + i4;
  }
  float& at(std::int64_t i0, std::int64_t i1, std::int64_t i2, std::int64_t i3, std::int64_t i4) {
    return data_[offset(i0, i1, i2, i3, i4)];
  }
  float at(std::int64_t i0, std::int64_t i1, std::int64_t i2, std::int64_t i3,
           std::int64_t i4) const {
    return data_[offset(i0, i1, i2, i3, i4)];
  }

  friend bool operator==(const StandardTensor&, const StandardTensor&) = default;

 private:
  static std::int64_t checked_numel(const std::vector<std::int64_t>& dims) {
    std::int64_t n = 1;
    for (auto d : dims) {
      if (d < 0) throw Error(ErrorKind::Shape, "negative extent");
      n *= d;
    }
    return n;
  }

  std::vector<std::int64_t> dims_;
  std::vector<float> data_;
};

// Addressing of a blocked image: dims are (B, ceil(F/S), X, Y, Z); strides and
// the initial offset are counted in S-lane groups. The lane is always the
// fastest dimension.
struct LayoutDescriptor {
  std::array<std::int64_t, 5> dims{};
  std::array<std::int64_t, 5> strides{};
  std::int64_t initial_offset = 0;
  std::int64_t channels = 0;

  static std::array<std::int64_t, 5> row_major(const std::array<std::int64_t, 5>& dims) {
    std::array<std::int64_t, 5> s{};
    s[4] = 1;
    for (int d = 3; d >= 0; --d) s[d] = s[d + 1] * dims[d + 1];
    return s;
  }

  static LayoutDescriptor dense(const Shape5& shape, SimdWidth s) {
    LayoutDescriptor desc;
    desc.dims = {shape.b, ceil_div(shape.f, s.lanes()), shape.x, shape.y, shape.z};
    desc.strides = row_major(desc.dims);
    desc.channels = shape.f;
    return desc;
  }

  std::int64_t group(std::int64_t b, std::int64_t fb, std::int64_t x, std::int64_t y,
                     std::int64_t z) const noexcept {
    return initial_offset + b * strides[0] + fb * strides[1] + x * strides[2] +
           y * strides[3] + z * strides[4];
  }

  Shape5 shape() const { return {dims[0], channels, dims[2], dims[3], dims[4]}; }
  std::int64_t blocks() const noexcept { return dims[1]; }

  friend bool operator==(const LayoutDescriptor&, const LayoutDescriptor&) = default;
};

// Flat element index of logical coordinate (b, f, x, y, z).
inline std::int64_t blocked_index(std::int64_t b, std::int64_t f, std::int64_t x, std::int64_t y,
                                  std::int64_t z, const LayoutDescriptor& desc, SimdWidth s) {
  const std::int64_t coord[5] = {b, f, x, y, z};
  const std::int64_t limit[5] = {desc.dims[0], desc.channels, desc.dims[2], desc.dims[3],
                                 desc.dims[4]};
  for (int d = 0; d < 5; ++d) {
    if (coord[d] < 0 || coord[d] >= limit[d])
      throw Error(ErrorKind::Bounds, "coordinate " + std::to_string(coord[d]) +
                                         " out of range [0," + std::to_string(limit[d]) +
                                         ") in dimension " + std::to_string(d));
  }
  const int lanes = s.lanes();
  return desc.group(b, f / lanes, x, y, z) * lanes + f % lanes;
}

// Descriptor that writes a (B, F, X, Y, Z) image into the interior of a buffer
// whose spatial extents are inflated by 2*pad.
inline LayoutDescriptor padded_view_descriptor(const std::array<std::int64_t, 5>& logical_dims,
                                               std::int64_t channels, Dim3 pads) {
  if (pads.x < 0 || pads.y < 0 || pads.z < 0)
    throw Error(ErrorKind::Shape, "pads must be non-negative");
  std::array<std::int64_t, 5> inflated = logical_dims;
  for (int d = 0; d < 3; ++d) inflated[2 + d] += 2 * std::int64_t{pads[d]};
  LayoutDescriptor desc;
  desc.dims = logical_dims;
  desc.strides = LayoutDescriptor::row_major(inflated);
  desc.channels = channels;
  for (int d = 0; d < 3; ++d) desc.initial_offset += pads[d] * desc.strides[2 + d];
  return desc;
}

inline LayoutDescriptor padded_view_descriptor(const Shape5& shape, SimdWidth s, Dim3 pads) {
  return padded_view_descriptor(LayoutDescriptor::dense(shape, s).dims, shape.f, pads);
}

// Non-owning views handed to kernels.
struct ConstTensorRef {
  const float* data = nullptr;
  LayoutDescriptor desc;
  int simd = 1;

  const float* group_ptr(std::int64_t b, std::int64_t fb, std::int64_t x, std::int64_t y,
                         std::int64_t z) const noexcept {
    return data + desc.group(b, fb, x, y, z) * simd;
  }
  Shape5 shape() const { return desc.shape(); }
  explicit operator bool() const noexcept { return data != nullptr; }
};

struct TensorRef {
  float* data = nullptr;
  LayoutDescriptor desc;
  int simd = 1;

  float* group_ptr(std::int64_t b, std::int64_t fb, std::int64_t x, std::int64_t y,
                   std::int64_t z) const noexcept {
    return data + desc.group(b, fb, x, y, z) * simd;
  }
  Shape5 shape() const { return desc.shape(); }
  operator ConstTensorRef() const noexcept { return {data, desc, simd}; }
};

// Owning image in the blocked layout; optionally surrounded by a zero halo
// (padded view) so that its dense interpretation is the zero-padded image.
class BlockedTensor {
 public:
  BlockedTensor() = default;
  BlockedTensor(const Shape5& shape, SimdWidth s, Dim3 halo = {})
      : desc_(padded_view_descriptor(shape, s, halo)), simd_(s.lanes()), halo_(halo) {
    allocated_ = desc_.dims;
    for (int d = 0; d < 3; ++d) allocated_[2 + d] += 2 * std::int64_t{halo[d]};
    std::int64_t n = simd_;
    for (auto d : allocated_) n *= d;
    data_ = AlignedBuffer(static_cast<std::size_t>(n));
  }

  const LayoutDescriptor& descriptor() const noexcept { return desc_; }
  SimdWidth simd() const { return SimdWidth(simd_); }
  Shape5 shape() const { return desc_.shape(); }
  Dim3 halo() const noexcept { return halo_; }
  const std::array<std::int64_t, 5>& allocated_dims() const noexcept { return allocated_; }

  std::span<float> data() noexcept { return data_.span(); }
  std::span<const float> data() const noexcept { return data_.span(); }

  float& at(std::int64_t b, std::int64_t f, std::int64_t x, std::int64_t y, std::int64_t z) {
    return data_[static_cast<std::size_t>(blocked_index(b, f, x, y, z, desc_, simd()))];
  }
  float at(std::int64_t b, std::int64_t f, std::int64_t x, std::int64_t y,
           std::int64_t z) const {
    return data_[static_cast<std::size_t>(blocked_index(b, f, x, y, z, desc_, simd()))];
  }

  TensorRef ref() noexcept { return {data_.data(), desc_, simd_}; }
  ConstTensorRef cref() const noexcept { return {data_.data(), desc_, simd_}; }

  // Dense descriptor over the whole allocation, halo included.
  LayoutDescriptor allocated_descriptor() const {
    LayoutDescriptor d;
    d.dims = allocated_;
    d.strides = LayoutDescriptor::row_major(allocated_);
    d.channels = desc_.channels;
    return d;
  }
  ConstTensorRef allocated_cref() const { return {data_.data(), allocated_descriptor(), simd_}; }

 private:
  LayoutDescriptor desc_;
  int simd_ = 1;
  Dim3 halo_{};
  std::array<std::int64_t, 5> allocated_{};
  AlignedBuffer data_;
};

// Convolution weights stored as
// (out-block, in-block, kx, ky, kz, out-lane, in-lane).
class BlockedKernel {
 public:
  BlockedKernel() = default;
  BlockedKernel(std::int64_t out_channels, std::int64_t in_channels, Dim3 kdims, SimdWidth s)
      : out_channels_(out_channels),
        in_channels_(in_channels),
        kdims_(kdims),
        simd_(s.lanes()),
        data_(static_cast<std::size_t>(ceil_div(out_channels, simd_) *
                                       ceil_div(in_channels, simd_) * kdims.volume() * simd_ *
                                       simd_)) {}

  std::int64_t out_channels() const noexcept { return out_channels_; }
  std::int64_t in_channels() const noexcept { return in_channels_; }
  std::int64_t out_blocks() const noexcept { return ceil_div(out_channels_, simd_); }
  std::int64_t in_blocks() const noexcept { return ceil_div(in_channels_, simd_); }
  Dim3 kdims() const noexcept { return kdims_; }
  SimdWidth simd() const { return SimdWidth(simd_); }

  std::int64_t index(std::int64_t ob, std::int64_t ib, std::int64_t kx, std::int64_t ky,
                     std::int64_t kz, std::int64_t ol, std::int64_t il) const noexcept {
    return ((((((ob * in_blocks() + ib) * kdims_.x + kx) * kdims_.y + ky) * kdims_.z + kz) *
                 simd_ +
             ol) *
                simd_ +
            il);
  }
  float at(std::int64_t fo, std::int64_t fi, std::int64_t kx, std::int64_t ky,
           std::int64_t kz) const {
    return data_[static_cast<std::size_t>(
        index(fo / simd_, fi / simd_, kx, ky, kz, fo % simd_, fi % simd_))];
  }

  std::span<float> data() noexcept { return data_.span(); }
  std::span<const float> data() const noexcept { return data_.span(); }

 private:
  std::int64_t out_channels_ = 0;
  std::int64_t in_channels_ = 0;
  Dim3 kdims_{};
  int simd_ = 1;
  AlignedBuffer data_;
};

inline BlockedTensor to_blocked(const StandardTensor& t, SimdWidth s) {
  const Shape5 shape = t.shape5();
  BlockedTensor out(shape, s);
  auto data = out.data();
  const auto& desc = out.descriptor();
  const int lanes = s.lanes();
  for (std::int64_t b = 0; b < shape.b; ++b)
    for (std::int64_t f = 0; f < shape.f; ++f)
      for (std::int64_t x = 0; x < shape.x; ++x)
        for (std::int64_t y = 0; y < shape.y; ++y)
          for (std::int64_t z = 0; z < shape.z; ++z)
            data[desc.group(b, f / lanes, x, y, z) * lanes + f % lanes] = t.at(b, f, x, y, z);
  return out;
}

inline StandardTensor from_blocked(const BlockedTensor& t) {
  const Shape5 shape = t.shape();
  StandardTensor out(shape);
  auto data = t.data();
  const auto& desc = t.descriptor();
  const int lanes = t.simd().lanes();
  for (std::int64_t b = 0; b < shape.b; ++b)
    for (std::int64_t f = 0; f < shape.f; ++f)
      for (std::int64_t x = 0; x < shape.x; ++x)
        for (std::int64_t y = 0; y < shape.y; ++y)
          for (std::int64_t z = 0; z < shape.z; ++z)
            out.at(b, f, x, y, z) = data[desc.group(b, f / lanes, x, y, z) * lanes + f % lanes];
  return out;
}

inline BlockedKernel kernel_to_blocked(const StandardTensor& k, SimdWidth s) {
  k.require_rank(5);
  const auto& d = k.dims();
  const Dim3 kd{static_cast<int>(d[2]), static_cast<int>(d[3]), static_cast<int>(d[4])};
  BlockedKernel out(d[0], d[1], kd, s);
  auto data = out.data();
  const int lanes = s.lanes();
  for (std::int64_t fo = 0; fo < d[0]; ++fo)
    for (std::int64_t fi = 0; fi < d[1]; ++fi)
      for (int kx = 0; kx < kd.x; ++kx)
        for (int ky = 0; ky < kd.y; ++ky)
          for (int kz = 0; kz < kd.z; ++kz)
            data[out.index(fo / lanes, fi / lanes, kx, ky, kz, fo % lanes, fi % lanes)] =
                k.at(fo, fi, kx, ky, kz);
  return out;
}

// Writes t into a fresh buffer through a padded-view descriptor. The result's
// allocation, read densely, is the zero-padded image.
inline BlockedTensor to_padded_view(const BlockedTensor& t, Dim3 pads) {
  const Shape5 shape = t.shape();
  BlockedTensor out(shape, t.simd(), pads);
  const auto& src = t.descriptor();
  const auto& dst = out.descriptor();
  const int lanes = t.simd().lanes();
  auto in = t.data();
  auto o = out.data();
  for (std::int64_t b = 0; b < src.dims[0]; ++b)
    for (std::int64_t fb = 0; fb < src.dims[1]; ++fb)
      for (std::int64_t x = 0; x < src.dims[2]; ++x)
        for (std::int64_t y = 0; y < src.dims[3]; ++y)
          for (std::int64_t z = 0; z < src.dims[4]; ++z) {
            const auto si = src.group(b, fb, x, y, z) * lanes;
            const auto di = dst.group(b, fb, x, y, z) * lanes;
            for (int l = 0; l < lanes; ++l) o[di + l] = in[si + l];
          }
  return out;
}

// Materialises the zero-padded image as a dense tensor (the explicit padding
// layer).
inline BlockedTensor explicit_zero_pad(const BlockedTensor& t, Dim3 pads) {
  if (pads.x < 0 || pads.y < 0 || pads.z < 0)
    throw Error(ErrorKind::Shape, "pads must be non-negative");
  const Shape5 shape = t.shape();
  const Dim3 inflated = shape.spatial() + pads * 2;
  BlockedTensor out(shape.with_spatial(inflated), t.simd());
  const auto& src = t.descriptor();
  const auto& dst = out.descriptor();
  const int lanes = t.simd().lanes();
  auto in = t.data();
  auto o = out.data();
  for (std::int64_t b = 0; b < src.dims[0]; ++b)
    for (std::int64_t fb = 0; fb < src.dims[1]; ++fb)
      for (std::int64_t x = 0; x < src.dims[2]; ++x)
        for (std::int64_t y = 0; y < src.dims[3]; ++y)
          for (std::int64_t z = 0; z < src.dims[4]; ++z) {
            const auto si = src.group(b, fb, x, y, z) * lanes;
            const auto di = dst.group(b, fb, x + pads.x, y + pads.y, z + pads.z) * lanes;
            for (int l = 0; l < lanes; ++l) o[di + l] = in[si + l];
          }
  return out;
}

}  // namespace voxfuse
