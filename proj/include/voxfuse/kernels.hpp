#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "voxfuse/ir.hpp"
#include "voxfuse/simd.hpp"
#include "voxfuse/tensor.hpp"

namespace voxfuse {

inline float fast_exp(float x) { return simd::exp<1>(simd::splat<1>(x))[0]; }

inline float activate(const Activation& a, float x) {
  switch (a.kind) {
    case OpKind::ReLU: return x > 0.0f ? x : 0.0f;
    case OpKind::ELU: return x > 0.0f ? x : a.alpha * (fast_exp(x) - 1.0f);
    case OpKind::Sigmoid: return 1.0f / (1.0f + fast_exp(-x));
    default: return x;
  }
}

// Blocked weights with the two lane dimensions swapped, i.e.
// (out-block, in-block, kx, ky, kz, in-lane, out-lane), so that the weights
// of one input lane for all output lanes are one contiguous vector.
class PackedKernel {
 public:
  PackedKernel() = default;
  explicit PackedKernel(const BlockedKernel& k)
      : out_blocks_(k.out_blocks()),
        in_blocks_(k.in_blocks()),
        kdims_(k.kdims()),
        simd_(k.simd().lanes()),
        data_(k.data().size()) {
    const auto src = k.data();
    const std::int64_t taps = kdims_.volume();
    const std::int64_t s = simd_;
    for (std::int64_t blk = 0; blk < out_blocks_ * in_blocks_ * taps; ++blk)
      for (std::int64_t o = 0; o < s; ++o)
        for (std::int64_t i = 0; i < s; ++i)
          data_[static_cast<std::size_t>((blk * s + i) * s + o)] = src[(blk * s + o) * s + i];
  }

  const float* block(std::int64_t ob, std::int64_t ib) const noexcept {
    return data_.data() + (ob * in_blocks_ + ib) * kdims_.volume() * simd_ * simd_;
  }
  std::int64_t out_blocks() const noexcept { return out_blocks_; }
  std::int64_t in_blocks() const noexcept { return in_blocks_; }
  Dim3 kdims() const noexcept { return kdims_; }
  int simd() const noexcept { return simd_; }

 private:
  std::int64_t out_blocks_ = 0;
  std::int64_t in_blocks_ = 0;
  Dim3 kdims_{};
  int simd_ = 1;
  AlignedBuffer data_;
};

// Pads a per-channel vector to whole S-lane blocks, zero-filling the tail.
inline AlignedBuffer lane_padded(std::span<const float> v, std::int64_t channels, int simd,
                                 float fill = 0.0f) {
  AlignedBuffer out(static_cast<std::size_t>(ceil_div(channels, simd) * simd));
  for (std::int64_t c = 0; c < channels; ++c)
    out[static_cast<std::size_t>(c)] = v.empty() ? fill : v[static_cast<std::size_t>(c)];
  return out;
}

struct ConvInvocation {
  ConstTensorRef input;  // already padded; the convolution itself is "valid"
  const PackedKernel* kernel = nullptr;
  std::span<const float> bias;        // out_blocks * S, zero tail
  ConstTensorRef base;                // fused addition operand, output shape
  std::span<const float> base_scale;  // out_blocks * S; used with base
  bool additive = false;
  std::optional<Activation> activation;
  Dim3 stride{1, 1, 1};
  TensorRef output;  // dense or padded view
  Dim3 patch{4, 4, 8};
};

// Contribution of one block of S input featuremaps to one patch of one block
// of S output featuremaps.
struct SubImageTask {
  std::int64_t batch = 0;
  std::int64_t in_block = 0;
  std::int64_t out_block = 0;
  Dim3 origin{};
  Dim3 extent{};
  bool first_input_block = true;
  bool last_input_block = true;
};

namespace kernels {

template <int S>
[[gnu::always_inline]] inline simd::vec<S> finish_lanes(simd::vec<S> v,
                                                        const std::optional<Activation>& act,
                                                        int valid_lanes) {
  using V = simd::vec<S>;
  if (act) {
    const V zero = simd::splat<S>(0.0f);
    switch (act->kind) {
      case OpKind::ReLU:
        v = v > zero ? v : zero;
        break;
      case OpKind::ELU: {
        const V e = act->alpha * (simd::exp<S>(v) - 1.0f);
        v = v > zero ? v : e;
        break;
      }
      case OpKind::Sigmoid:
        v = 1.0f / (1.0f + simd::exp<S>(-v));
        break;
      default:
        break;
    }
  }
  for (int l = valid_lanes; l < S; ++l) v[l] = 0.0f;
  return v;
}

inline int valid_lanes(std::int64_t channels, std::int64_t block, int simd) {
  return static_cast<int>(std::clamp<std::int64_t>(channels - block * simd, 0, simd));
}

// acc[z] += sum over input lanes i of in[z * STEP + i] * w[i], with every
// offset a compile-time constant.
template <int S, int STEP, std::size_t... Z>
inline void accumulate_lanes(simd::vec<S>* acc, const float* ip, const float* wp,
                             std::index_sequence<Z...>) {
#pragma GCC unroll 16
  for (int i = 0; i < S; ++i) {
    const simd::vec<S> wv = simd::load<S>(wp + i * S);
    ((acc[Z] += ip[Z * STEP + i] * wv), ...);
  }
}

// One run of NZ consecutive output voxels along z, kept in registers. SZ is
// the convolution stride along z when known at compile time, 0 otherwise.
// The z stride of every blocked layout is one S-lane group.
template <int S, int NZ, int SZ>
__attribute__((optimize("no-predictive-commoning"))) inline void conv_row(const ConvInvocation& inv, const SubImageTask& t, std::int64_t ox,
                     std::int64_t oy, std::int64_t oz0) {
  using V = simd::vec<S>;
  const auto& in = inv.input;
  const auto& out = inv.output;
  const Dim3 kd = inv.kernel->kdims();
  const std::int64_t isx = in.desc.strides[2] * S;
  const std::int64_t isy = in.desc.strides[3] * S;
  const std::int64_t zstep = (SZ > 0 ? SZ : inv.stride.z) * S;

  float* optr = out.group_ptr(t.batch, t.out_block, ox, oy, oz0);
  V acc[NZ];
  if (t.first_input_block) {
    const V bias = simd::load<S>(inv.bias.data() + t.out_block * S);
    if (inv.additive) {
      const V bscale = simd::load<S>(inv.base_scale.data() + t.out_block * S);
      const float* bptr = inv.base.group_ptr(t.batch, t.out_block, ox, oy, oz0);
      for (int z = 0; z < NZ; ++z) acc[z] = bias + bscale * simd::load<S>(bptr + z * S);
    } else {
      for (int z = 0; z < NZ; ++z) acc[z] = bias;
    }
  } else {
    for (int z = 0; z < NZ; ++z) acc[z] = simd::load<S>(optr + z * S);
  }

  const float* wp = inv.kernel->block(t.out_block, t.in_block);
  const float* ibase =
      in.group_ptr(t.batch, t.in_block, ox * inv.stride.x, oy * inv.stride.y, oz0 * inv.stride.z);
  for (int kx = 0; kx < kd.x; ++kx) {
    for (int ky = 0; ky < kd.y; ++ky) {
      const float* ip = ibase + kx * isx + ky * isy;
      for (int kz = 0; kz < kd.z; ++kz, ip += S, wp += S * S) {
        if constexpr (SZ > 0) {
          accumulate_lanes<S, SZ * S>(acc, ip, wp, std::make_index_sequence<NZ>{});
        } else {
          for (int i = 0; i < S; ++i) {
            const V wv = simd::load<S>(wp + i * S);
            for (int z = 0; z < NZ; ++z) acc[z] += ip[z * zstep + i] * wv;
          }
        }
      }
    }
  }

  if (t.last_input_block) {
    const int lanes = valid_lanes(out.desc.channels, t.out_block, S);
    if (inv.activation || lanes < S)
      for (int z = 0; z < NZ; ++z) acc[z] = finish_lanes<S>(acc[z], inv.activation, lanes);
  }
  for (int z = 0; z < NZ; ++z) simd::store<S>(optr + z * S, acc[z]);
}

// Output voxels along z held in registers at once: 16 accumulators fit the
// 32 vector registers of AVX-512, 8 the 16 of narrower ISAs.
template <int S>
inline constexpr int kRowBlock = S == 16 ? 16 : 8;

template <int S, int SZ>
inline void subimage_rows(const SubImageTask& t, const ConvInvocation& inv) {
  const Dim3 end = t.origin + t.extent;
  for (std::int64_t ox = t.origin.x; ox < end.x; ++ox)
    for (std::int64_t oy = t.origin.y; oy < end.y; ++oy) {
      std::int64_t oz = t.origin.z;
      constexpr int rb = kRowBlock<S>;
      for (; oz + rb <= end.z; oz += rb) conv_row<S, rb, SZ>(inv, t, ox, oy, oz);
      if constexpr (rb > 8)
        for (; oz + 8 <= end.z; oz += 8) conv_row<S, 8, SZ>(inv, t, ox, oy, oz);
      for (; oz + 4 <= end.z; oz += 4) conv_row<S, 4, SZ>(inv, t, ox, oy, oz);
      for (; oz < end.z; ++oz) conv_row<S, 1, SZ>(inv, t, ox, oy, oz);
    }
}

template <int S>
inline void subimage_primitive(const SubImageTask& t, const ConvInvocation& inv) {
  if (inv.stride.z == 1)
    subimage_rows<S, 1>(t, inv);
  else
    subimage_rows<S, 0>(t, inv);
}

template <int S>
inline void conv3d(const ConvInvocation& inv) {
  const auto& od = inv.output.desc;
  const std::int64_t in_blocks = inv.kernel->in_blocks();
  const Dim3 p = inv.patch;
  for (std::int64_t b = 0; b < od.dims[0]; ++b)
    for (std::int64_t ob = 0; ob < od.dims[1]; ++ob)
      for (std::int64_t px = 0; px < od.dims[2]; px += p.x)
        for (std::int64_t py = 0; py < od.dims[3]; py += p.y)
          for (std::int64_t pz = 0; pz < od.dims[4]; pz += p.z) {
            SubImageTask t;
            t.batch = b;
            t.out_block = ob;
            t.origin = {static_cast<int>(px), static_cast<int>(py), static_cast<int>(pz)};
            t.extent = {static_cast<int>(std::min<std::int64_t>(p.x, od.dims[2] - px)),
                        static_cast<int>(std::min<std::int64_t>(p.y, od.dims[3] - py)),
                        static_cast<int>(std::min<std::int64_t>(p.z, od.dims[4] - pz))};
            for (std::int64_t ib = 0; ib < in_blocks; ++ib) {
              t.in_block = ib;
              t.first_input_block = ib == 0;
              t.last_input_block = ib == in_blocks - 1;
              subimage_primitive<S>(t, inv);
            }
          }
}

}  // namespace kernels

inline void subimage_primitive(const SubImageTask& task, const ConvInvocation& inv) {
  simd::dispatch(SimdWidth(inv.input.simd),
                 [&](auto s) { kernels::subimage_primitive<decltype(s)::value>(task, inv); });
}

inline void check_conv_invocation(const ConvInvocation& inv) {
  if (!inv.kernel) throw Error(ErrorKind::Shape, "convolution without kernel");
  const auto& in = inv.input.desc;
  const auto& out = inv.output.desc;
  const Dim3 kd = inv.kernel->kdims();
  if (inv.input.simd != inv.kernel->simd() || inv.output.simd != inv.kernel->simd())
    throw Error(ErrorKind::Shape, "SIMD width mismatch between tensors and kernel");
  if (in.dims[1] != inv.kernel->in_blocks() || out.dims[1] != inv.kernel->out_blocks())
    throw Error(ErrorKind::Shape, "featuremap blocks do not match kernel");
  if (in.dims[0] != out.dims[0]) throw Error(ErrorKind::Shape, "batch mismatch");
  for (int d = 0; d < 3; ++d) {
    if (in.dims[2 + d] < kd[d]) throw Error(ErrorKind::Shape, "input smaller than kernel");
    if (out.dims[2 + d] != (in.dims[2 + d] - kd[d]) / inv.stride[d] + 1)
      throw Error(ErrorKind::Shape, "output extent does not match valid convolution");
  }
  const auto lanes = static_cast<std::size_t>(out.dims[1] * inv.output.simd);
  if (inv.bias.size() < lanes) throw Error(ErrorKind::Shape, "bias shorter than output blocks");
  if (inv.additive != static_cast<bool>(inv.base))
    throw Error(ErrorKind::Shape, "additive flag requires a base operand and vice versa");
  if (inv.additive) {
    if (!(inv.base.desc.shape() == inv.output.desc.shape()))
      throw Error(ErrorKind::Shape, "base operand shape differs from output");
    if (inv.base_scale.size() < lanes) throw Error(ErrorKind::Shape, "base scale too short");
  }
}

inline void conv3d(const ConvInvocation& inv) {
  check_conv_invocation(inv);
  simd::dispatch(SimdWidth(inv.input.simd),
                 [&](auto s) { kernels::conv3d<decltype(s)::value>(inv); });
}

struct DeconvInvocation {
  ConstTensorRef input;
  const PackedKernel* kernel = nullptr;
  std::span<const float> bias;
  Dim3 stride{1, 1, 1};
  Dim3 pad{};  // cropped from the full transposed-convolution output
  std::optional<Activation> activation;
  TensorRef output;
};

namespace kernels {

// For each output coordinate along one axis, the (kernel tap, input index)
// pairs with input*stride + tap - pad == output.
inline std::vector<std::vector<std::pair<int, int>>> deconv_taps(std::int64_t in, std::int64_t out,
                                                                 int k, int stride, int pad) {
  std::vector<std::vector<std::pair<int, int>>> taps(static_cast<std::size_t>(out));
  for (std::int64_t o = 0; o < out; ++o)
    for (int t = 0; t < k; ++t) {
      const std::int64_t num = o + pad - t;
      if (num < 0 || num % stride != 0) continue;
      const std::int64_t i = num / stride;
      if (i < in) taps[static_cast<std::size_t>(o)].emplace_back(t, static_cast<int>(i));
    }
  return taps;
}

template <int S>
inline void deconv3d(const DeconvInvocation& inv) {
  using V = simd::vec<S>;
  const auto& in = inv.input;
  const auto& out = inv.output;
  const Dim3 kd = inv.kernel->kdims();
  const auto tx = deconv_taps(in.desc.dims[2], out.desc.dims[2], kd.x, inv.stride.x, inv.pad.x);
  const auto ty = deconv_taps(in.desc.dims[3], out.desc.dims[3], kd.y, inv.stride.y, inv.pad.y);
  const auto tz = deconv_taps(in.desc.dims[4], out.desc.dims[4], kd.z, inv.stride.z, inv.pad.z);
  const std::int64_t in_blocks = inv.kernel->in_blocks();
  for (std::int64_t b = 0; b < out.desc.dims[0]; ++b)
    for (std::int64_t ob = 0; ob < out.desc.dims[1]; ++ob) {
      const V bias = simd::load<S>(inv.bias.data() + ob * S);
      const int lanes = valid_lanes(out.desc.channels, ob, S);
      for (std::int64_t ox = 0; ox < out.desc.dims[2]; ++ox)
        for (std::int64_t oy = 0; oy < out.desc.dims[3]; ++oy)
          for (std::int64_t oz = 0; oz < out.desc.dims[4]; ++oz) {
            V acc = bias;
            for (std::int64_t ib = 0; ib < in_blocks; ++ib) {
              const float* wblock = inv.kernel->block(ob, ib);
              for (auto [kx, ix] : tx[ox])
                for (auto [ky, iy] : ty[oy])
                  for (auto [kz, iz] : tz[oz]) {
                    const float* ip = in.group_ptr(b, ib, ix, iy, iz);
                    const float* wp = wblock + ((kx * kd.y + ky) * kd.z + kz) * S * S;
                    for (int i = 0; i < S; ++i) acc += ip[i] * simd::load<S>(wp + i * S);
                  }
            }
            if (inv.activation || lanes < S) acc = finish_lanes<S>(acc, inv.activation, lanes);
            simd::store<S>(out.group_ptr(b, ob, ox, oy, oz), acc);
          }
    }
}

}  // namespace kernels

inline void deconv3d(const DeconvInvocation& inv) {
  if (!inv.kernel) throw Error(ErrorKind::Shape, "deconvolution without kernel");
  const Dim3 kd = inv.kernel->kdims();
  for (int d = 0; d < 3; ++d) {
    const auto expect =
        (inv.input.desc.dims[2 + d] - 1) * inv.stride[d] + kd[d] - 2 * std::int64_t{inv.pad[d]};
    if (inv.output.desc.dims[2 + d] != expect)
      throw Error(ErrorKind::Shape, "deconvolution output extent mismatch");
  }
  if (inv.input.desc.dims[1] != inv.kernel->in_blocks() ||
      inv.output.desc.dims[1] != inv.kernel->out_blocks())
    throw Error(ErrorKind::Shape, "featuremap blocks do not match kernel");
  simd::dispatch(SimdWidth(inv.input.simd),
                 [&](auto s) { kernels::deconv3d<decltype(s)::value>(inv); });
}

// Iterates every logical S-lane group of `out`, passing its coordinates.
template <class Fn>
inline void for_each_group(const LayoutDescriptor& d, Fn&& fn) {
  for (std::int64_t b = 0; b < d.dims[0]; ++b)
    for (std::int64_t fb = 0; fb < d.dims[1]; ++fb)
      for (std::int64_t x = 0; x < d.dims[2]; ++x)
        for (std::int64_t y = 0; y < d.dims[3]; ++y)
          for (std::int64_t z = 0; z < d.dims[4]; ++z) fn(b, fb, x, y, z);
}

inline void pool(ConstTensorRef in, TensorRef out, Dim3 window, Dim3 stride, PoolMode mode) {
  for (int d = 0; d < 3; ++d) {
    if (window[d] > in.desc.dims[2 + d]) throw Error(ErrorKind::Shape, "pooling window exceeds input");
    if (out.desc.dims[2 + d] != (in.desc.dims[2 + d] - window[d]) / stride[d] + 1)
      throw Error(ErrorKind::Shape, "pooling output extent mismatch");
  }
  simd::dispatch(SimdWidth(in.simd), [&](auto sc) {
    constexpr int S = decltype(sc)::value;
    using V = simd::vec<S>;
    const float inv_volume = 1.0f / static_cast<float>(window.volume());
    for_each_group(out.desc, [&](auto b, auto fb, auto x, auto y, auto z) {
      const std::int64_t x0 = x * stride.x, y0 = y * stride.y, z0 = z * stride.z;
      V acc = simd::load<S>(in.group_ptr(b, fb, x0, y0, z0));
      if (mode == PoolMode::Average) acc = simd::splat<S>(0.0f);
      for (int kx = 0; kx < window.x; ++kx)
        for (int ky = 0; ky < window.y; ++ky)
          for (int kz = 0; kz < window.z; ++kz) {
            const V v = simd::load<S>(in.group_ptr(b, fb, x0 + kx, y0 + ky, z0 + kz));
            if (mode == PoolMode::Max) {
              for (int l = 0; l < S; ++l) acc[l] = v[l] > acc[l] ? v[l] : acc[l];
            } else {
              acc += v;
            }
          }
      if (mode == PoolMode::Average) acc = acc * inv_volume;
      simd::store<S>(out.group_ptr(b, fb, x, y, z), acc);
    });
  });
}

inline void eltwise(ConstTensorRef a, ConstTensorRef b, TensorRef out, EltwiseOp op) {
  if (!(a.desc.shape() == b.desc.shape()) || !(a.desc.shape() == out.desc.shape()))
    throw Error(ErrorKind::Shape, "eltwise operand shapes differ: " + a.desc.shape().str() + " vs " +
                                      b.desc.shape().str());
  simd::dispatch(SimdWidth(a.simd), [&](auto sc) {
    constexpr int S = decltype(sc)::value;
    using V = simd::vec<S>;
    for_each_group(out.desc, [&](auto bb, auto fb, auto x, auto y, auto z) {
      const V va = simd::load<S>(a.group_ptr(bb, fb, x, y, z));
      const V vb = simd::load<S>(b.group_ptr(bb, fb, x, y, z));
      V r = op == EltwiseOp::Sum ? va + vb : op == EltwiseOp::Product ? va * vb : va / vb;
      const int lanes = kernels::valid_lanes(out.desc.channels, fb, S);
      for (int l = lanes; l < S; ++l) r[l] = 0.0f;
      simd::store<S>(out.group_ptr(bb, fb, x, y, z), r);
    });
  });
}

// Centre-crops the spatially larger operand to the smaller one (offset
// floor((large - small) / 2)) and concatenates featuremaps, a's first.
inline void mergecrop(ConstTensorRef a, ConstTensorRef b, TensorRef out) {
  const Shape5 sa = a.desc.shape(), sb = b.desc.shape(), so = out.desc.shape();
  if (sa.b != sb.b || so.f != sa.f + sb.f) throw Error(ErrorKind::Shape, "mergecrop shape mismatch");
  const int s = a.simd;
  auto offsets = [&](const Shape5& src) {
    return Dim3{static_cast<int>((src.x - so.x) / 2), static_cast<int>((src.y - so.y) / 2),
                static_cast<int>((src.z - so.z) / 2)};
  };
  const Dim3 oa = offsets(sa), ob = offsets(sb);
  for (int d = 0; d < 3; ++d)
    if (oa[d] < 0 || ob[d] < 0) throw Error(ErrorKind::Shape, "mergecrop output larger than input");
  for (std::int64_t bb = 0; bb < so.b; ++bb)
    for (std::int64_t fb = 0; fb < out.desc.dims[1]; ++fb)
      for (std::int64_t x = 0; x < so.x; ++x)
        for (std::int64_t y = 0; y < so.y; ++y)
          for (std::int64_t z = 0; z < so.z; ++z) {
            float* dst = out.group_ptr(bb, fb, x, y, z);
            for (int l = 0; l < s; ++l) {
              const std::int64_t f = fb * s + l;
              float v = 0.0f;
              if (f < sa.f) {
                v = a.group_ptr(bb, f / s, x + oa.x, y + oa.y, z + oa.z)[f % s];
              } else if (f < so.f) {
                const std::int64_t g = f - sa.f;
                v = b.group_ptr(bb, g / s, x + ob.x, y + ob.y, z + ob.z)[g % s];
              }
              dst[l] = v;
            }
          }
}

// out = in * mul + add per featuremap; mul/add are lane-padded with zeros.
inline void standalone_linear(ConstTensorRef in, TensorRef out, std::span<const float> mul,
                              std::span<const float> add) {
  if (!(in.desc.shape() == out.desc.shape())) throw Error(ErrorKind::Shape, "linear shape mismatch");
  simd::dispatch(SimdWidth(in.simd), [&](auto sc) {
    constexpr int S = decltype(sc)::value;
    for_each_group(out.desc, [&](auto b, auto fb, auto x, auto y, auto z) {
      const auto v = simd::load<S>(in.group_ptr(b, fb, x, y, z));
      simd::store<S>(out.group_ptr(b, fb, x, y, z),
                     v * simd::load<S>(mul.data() + fb * S) + simd::load<S>(add.data() + fb * S));
    });
  });
}

inline void standalone_activation(ConstTensorRef in, TensorRef out, const Activation& act) {
  if (!(in.desc.shape() == out.desc.shape()))
    throw Error(ErrorKind::Shape, "activation shape mismatch");
  simd::dispatch(SimdWidth(in.simd), [&](auto sc) {
    constexpr int S = decltype(sc)::value;
    const std::optional<Activation> a = act;
    for_each_group(out.desc, [&](auto b, auto fb, auto x, auto y, auto z) {
      auto v = simd::load<S>(in.group_ptr(b, fb, x, y, z));
      v = kernels::finish_lanes<S>(v, a, kernels::valid_lanes(out.desc.channels, fb, S));
      simd::store<S>(out.group_ptr(b, fb, x, y, z), v);
    });
  });
}

// Explicit padding layer: out is dense with spatial extents inflated by
// 2*pads; the halo is written with zeros.
inline void pad(ConstTensorRef in, TensorRef out, Dim3 pads) {
  const Shape5 si = in.desc.shape(), so = out.desc.shape();
  if (!(so == si.with_spatial(si.spatial() + pads * 2)))
    throw Error(ErrorKind::Shape, "pad output shape mismatch");
  simd::dispatch(SimdWidth(in.simd), [&](auto sc) {
    constexpr int S = decltype(sc)::value;
    const auto zero = simd::splat<S>(0.0f);
    for_each_group(out.desc, [&](auto b, auto fb, auto x, auto y, auto z) {
      const std::int64_t ix = x - pads.x, iy = y - pads.y, iz = z - pads.z;
      const bool inside = ix >= 0 && iy >= 0 && iz >= 0 && ix < si.x && iy < si.y && iz < si.z;
      simd::store<S>(out.group_ptr(b, fb, x, y, z),
                     inside ? simd::load<S>(in.group_ptr(b, fb, ix, iy, iz)) : zero);
    });
  });
}

// Convenience wrappers over owning tensors.

struct ConvOptions {
  Dim3 stride{1, 1, 1};
  const BlockedTensor* base = nullptr;
  std::vector<float> base_scale;  // empty means 1
  std::optional<Activation> activation;
  Dim3 out_halo{};
  Dim3 patch{4, 4, 8};
};

inline BlockedTensor conv3d(const BlockedTensor& input, const BlockedKernel& kernel,
                            std::span<const float> bias, const ConvOptions& opt = {}) {
  const Shape5 si = input.shape();
  const Dim3 kd = kernel.kdims();
  Dim3 out_sp{};
  for (int d = 0; d < 3; ++d) {
    if (si.spatial()[d] < kd[d]) throw Error(ErrorKind::Shape, "input smaller than kernel");
    out_sp[d] = (si.spatial()[d] - kd[d]) / opt.stride[d] + 1;
  }
  BlockedTensor out({si.b, kernel.out_channels(), out_sp.x, out_sp.y, out_sp.z}, kernel.simd(),
                    opt.out_halo);
  const PackedKernel packed(kernel);
  const int s = kernel.simd().lanes();
  const auto bias_p = lane_padded(bias, kernel.out_channels(), s);
  const auto scale_p = lane_padded(opt.base_scale, kernel.out_channels(), s, 1.0f);
  ConvInvocation inv;
  inv.input = input.cref();
  inv.kernel = &packed;
  inv.bias = bias_p.span();
  if (opt.base) {
    inv.base = opt.base->cref();
    inv.additive = true;
    inv.base_scale = scale_p.span();
  }
  inv.activation = opt.activation;
  inv.stride = opt.stride;
  inv.output = out.ref();
  inv.patch = opt.patch;
  conv3d(inv);
  return out;
}

inline BlockedTensor deconv3d(const BlockedTensor& input, const BlockedKernel& kernel,
                              std::span<const float> bias, Dim3 stride, Dim3 pad_crop = {},
                              std::optional<Activation> activation = std::nullopt) {
  const Shape5 si = input.shape();
  const Dim3 kd = kernel.kdims();
  Dim3 out_sp{};
  for (int d = 0; d < 3; ++d)
    out_sp[d] = (si.spatial()[d] - 1) * stride[d] + kd[d] - 2 * pad_crop[d];
  BlockedTensor out({si.b, kernel.out_channels(), out_sp.x, out_sp.y, out_sp.z}, kernel.simd());
  const PackedKernel packed(kernel);
  const auto bias_p = lane_padded(bias, kernel.out_channels(), kernel.simd().lanes());
  DeconvInvocation inv{input.cref(), &packed, bias_p.span(), stride, pad_crop, activation, out.ref()};
  deconv3d(inv);
  return out;
}

inline BlockedTensor pool(const BlockedTensor& input, Dim3 window, Dim3 stride, PoolMode mode) {
  const Shape5 si = input.shape();
  Dim3 out_sp{};
  for (int d = 0; d < 3; ++d) {
    if (window[d] > si.spatial()[d]) throw Error(ErrorKind::Shape, "pooling window exceeds input");
    out_sp[d] = (si.spatial()[d] - window[d]) / stride[d] + 1;
  }
  BlockedTensor out(si.with_spatial(out_sp), input.simd());
  pool(input.cref(), out.ref(), window, stride, mode);
  return out;
}

inline BlockedTensor eltwise(const BlockedTensor& a, const BlockedTensor& b, EltwiseOp op) {
  if (a.simd() != b.simd()) throw Error(ErrorKind::Shape, "SIMD width mismatch");
  BlockedTensor out(a.shape(), a.simd());
  eltwise(a.cref(), b.cref(), out.ref(), op);
  return out;
}

inline BlockedTensor mergecrop(const BlockedTensor& a, const BlockedTensor& b) {
  const Shape5 sa = a.shape(), sb = b.shape();
  const bool a_contains = sa.x >= sb.x && sa.y >= sb.y && sa.z >= sb.z;
  const bool b_contains = sb.x >= sa.x && sb.y >= sa.y && sb.z >= sa.z;
  if (!a_contains && !b_contains)
    throw Error(ErrorKind::Shape, "neither mergecrop input contains the other");
  Shape5 so = a_contains ? sb : sa;
  so.f = sa.f + sb.f;
  BlockedTensor out(so, a.simd());
  mergecrop(a.cref(), b.cref(), out.ref());
  return out;
}

inline BlockedTensor standalone_linear(const BlockedTensor& in, std::span<const float> mul,
                                       std::span<const float> add) {
  const int s = in.simd().lanes();
  const auto m = lane_padded(mul, in.shape().f, s);
  const auto a = lane_padded(add, in.shape().f, s);
  BlockedTensor out(in.shape(), in.simd());
  standalone_linear(in.cref(), out.ref(), m.span(), a.span());
  return out;
}

inline BlockedTensor standalone_activation(const BlockedTensor& in, const Activation& act) {
  BlockedTensor out(in.shape(), in.simd());
  standalone_activation(in.cref(), out.ref(), act);
  return out;
}

}  // namespace voxfuse
