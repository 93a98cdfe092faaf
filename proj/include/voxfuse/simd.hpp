#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <type_traits>

#include "voxfuse/error.hpp"

namespace voxfuse {

// Number of featuremap lanes grouped together in the blocked layout.
class SimdWidth {
 public:
  explicit SimdWidth(int lanes) : lanes_(lanes) {
    if (lanes < 1 || (lanes & (lanes - 1)) != 0)
      throw Error(ErrorKind::Config, "SIMD width must be a positive power of two, got " +
                                         std::to_string(lanes));
    if (lanes > kMaxLanes)
      throw Error(ErrorKind::Config, "SIMD width " + std::to_string(lanes) +
                                         " is not supported by this build (max " +
                                         std::to_string(kMaxLanes) + ")");
  }

  int lanes() const noexcept { return lanes_; }
  operator int() const noexcept { return lanes_; }
  friend bool operator==(SimdWidth, SimdWidth) = default;

  static constexpr int kMaxLanes = 16;

  // Widest width that maps onto one native vector register of the host.
  static SimdWidth native() {
#if defined(__AVX512F__)
    return SimdWidth(16);
#elif defined(__AVX__)
    return SimdWidth(8);
#else
    return SimdWidth(4);
#endif
  }

 private:
  int lanes_;
};

namespace simd {

template <int S>
struct vector_of {
  typedef float type __attribute__((vector_size(S * sizeof(float))));
};

template <int S>
using vec = typename vector_of<S>::type;

template <int S>
struct int_vector_of {
  typedef std::int32_t type __attribute__((vector_size(S * sizeof(std::int32_t))));
};

template <int S>
using ivec = typename int_vector_of<S>::type;

template <int S>
inline vec<S> load(const float* p) {
  vec<S> v;
  std::memcpy(&v, p, sizeof(v));
  return v;
}

template <int S>
inline void store(float* p, vec<S> v) {
  std::memcpy(p, &v, sizeof(v));
}

template <int S>
inline vec<S> splat(float x) {
  vec<S> v;
  for (int i = 0; i < S; ++i) v[i] = x;
  return v;
}

// exp(x) lane-wise: range reduction to [-ln2/2, ln2/2] and a degree-6
// polynomial, about 2 ulp. Inputs are clamped to [-87, 88].
template <int S>
inline vec<S> exp(vec<S> x) {
  const vec<S> lo = splat<S>(-87.0f), hi = splat<S>(88.0f);
  x = x < lo ? lo : x;
  x = x > hi ? hi : x;
  const vec<S> shifter = splat<S>(12582912.0f);  // 1.5 * 2^23: rounds to nearest
  const vec<S> n = (x * 1.44269504088896341f + shifter) - shifter;
  const vec<S> r = (x - n * 0.693359375f) + n * 2.12194440e-4f;
  vec<S> p = splat<S>(1.9875691500e-4f);
  p = p * r + 1.3981999507e-3f;
  p = p * r + 8.3334519073e-3f;
  p = p * r + 4.1665795894e-2f;
  p = p * r + 1.6666665459e-1f;
  p = p * r + 5.0000001201e-1f;
  p = p * r * r + r + 1.0f;
  const ivec<S> bits = (__builtin_convertvector(n, ivec<S>) + 127) << 23;
  vec<S> scale;
  std::memcpy(&scale, &bits, sizeof scale);
  return p * scale;
}

// Calls fn(std::integral_constant<int, S>{}) for the runtime width.
template <class Fn>
decltype(auto) dispatch(SimdWidth s, Fn&& fn) {
  switch (s.lanes()) {
    case 1: return fn(std::integral_constant<int, 1>{});
    case 2: return fn(std::integral_constant<int, 2>{});
    case 4: return fn(std::integral_constant<int, 4>{});
    case 8: return fn(std::integral_constant<int, 8>{});
    case 16: return fn(std::integral_constant<int, 16>{});
  }
  throw Error(ErrorKind::Config, "unsupported SIMD width " + std::to_string(s.lanes()));
}

}  // namespace simd

// Zero-initialised, 64-byte aligned float storage with value semantics.
class AlignedBuffer {
 public:
  static constexpr std::size_t kAlignment = 64;

  AlignedBuffer() = default;
  explicit AlignedBuffer(std::size_t size) : size_(size) {
    if (size_ == 0) return;
    data_.reset(static_cast<float*>(
        ::operator new[](size_ * sizeof(float), std::align_val_t{kAlignment})));
    std::fill_n(data_.get(), size_, 0.0f);
  }
  AlignedBuffer(const AlignedBuffer& other) : AlignedBuffer(other.size_) {
    if (size_) std::copy_n(other.data_.get(), size_, data_.get());
  }
  AlignedBuffer& operator=(const AlignedBuffer& other) {
    if (this != &other) {
      AlignedBuffer tmp(other);
      *this = std::move(tmp);
    }
    return *this;
  }
  AlignedBuffer(AlignedBuffer&&) noexcept = default;
  AlignedBuffer& operator=(AlignedBuffer&&) noexcept = default;

  float* data() noexcept { return data_.get(); }
  const float* data() const noexcept { return data_.get(); }
  std::size_t size() const noexcept { return size_; }
  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }
  std::span<float> span() noexcept { return {data_.get(), size_}; }
  std::span<const float> span() const noexcept { return {data_.get(), size_}; }
  void zero() { std::fill_n(data_.get(), size_, 0.0f); }

 private:
  struct Deleter {
    void operator()(float* p) const noexcept {
      ::operator delete[](p, std::align_val_t{kAlignment});
    }
  };
  std::unique_ptr<float[], Deleter> data_;
  std::size_t size_ = 0;
};

}  // namespace voxfuse
