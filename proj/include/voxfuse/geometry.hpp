#pragma once

#include <array>
#include <cstdint>
#include <ostream>
#include <string>

namespace voxfuse {

// Spatial triple (x, y, z); z is the fastest-varying dimension in memory.
struct Dim3 {
  int x = 0;
  int y = 0;
  int z = 0;

  static constexpr Dim3 all(int v) { return {v, v, v}; }

  constexpr int operator[](int d) const { return d == 0 ? x : (d == 1 ? y : z); }
  constexpr int& operator[](int d) { return d == 0 ? x : (d == 1 ? y : z); }
  constexpr std::int64_t volume() const {
    return std::int64_t{x} * std::int64_t{y} * std::int64_t{z};
  }
  constexpr bool is_zero() const { return x == 0 && y == 0 && z == 0; }
  constexpr bool isotropic() const { return x == y && y == z; }

  friend constexpr bool operator==(const Dim3&, const Dim3&) = default;
  friend constexpr Dim3 operator+(Dim3 a, Dim3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
  friend constexpr Dim3 operator-(Dim3 a, Dim3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  friend constexpr Dim3 operator*(Dim3 a, int k) { return {a.x * k, a.y * k, a.z * k}; }

  std::string str() const {
    return std::to_string(x) + "x" + std::to_string(y) + "x" + std::to_string(z);
  }
  friend std::ostream& operator<<(std::ostream& os, const Dim3& d) { return os << d.str(); }
};

// Logical extent of a 5-D image tensor: batch, featuremaps, x, y, z.
struct Shape5 {
  std::int64_t b = 1;
  std::int64_t f = 1;
  std::int64_t x = 1;
  std::int64_t y = 1;
  std::int64_t z = 1;

  constexpr Dim3 spatial() const {
    return {static_cast<int>(x), static_cast<int>(y), static_cast<int>(z)};
  }
  constexpr Shape5 with_spatial(Dim3 s) const { return {b, f, s.x, s.y, s.z}; }
  constexpr std::int64_t numel() const { return b * f * x * y * z; }
  constexpr std::array<std::int64_t, 5> dims() const { return {b, f, x, y, z}; }

  friend constexpr bool operator==(const Shape5&, const Shape5&) = default;

  std::string str() const {
    return "(" + std::to_string(b) + "," + std::to_string(f) + "," + std::to_string(x) + "," +
           std::to_string(y) + "," + std::to_string(z) + ")";
  }
  friend std::ostream& operator<<(std::ostream& os, const Shape5& s) { return os << s.str(); }
};

constexpr std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }

}  // namespace voxfuse
