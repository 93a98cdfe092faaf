#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "voxfuse/network.hpp"
#include "voxfuse/weights.hpp"

namespace voxfuse {

// How far the input region an output voxel depends on reaches, measured in
// input voxels: output voxel o of a blob at scale c reads input voxels
// [o*c - lo, o*c + c - 1 + hi]. `scale` is input voxels per blob voxel.
struct Footprint {
  std::array<double, 3> lo{};
  std::array<double, 3> hi{};
  std::array<double, 3> scale{1, 1, 1};
  // Largest scale seen on the way; tile origins must be multiples of it.
  std::array<double, 3> alignment{1, 1, 1};
  // True if any layer reads zero padding (padded convolution).
  bool padded = false;

  friend bool operator==(const Footprint&, const Footprint&) = default;
};

struct ShapedNetwork {
  NetworkSpec spec;
  std::vector<int> order;           // topological, stable by declaration index
  std::vector<Shape5> shapes;       // output shape per layer index
  std::vector<Footprint> footprints;  // per layer index

  int index_of_blob(std::string_view blob) const { return spec.producer_of(blob); }
  const Shape5& shape_of(std::string_view blob) const {
    const int i = index_of_blob(blob);
    if (i < 0) throw Error(ErrorKind::DanglingReference, "unknown blob '" + std::string(blob) + "'");
    return shapes[i];
  }
};

namespace detail {

inline std::int64_t conv_extent(std::int64_t in, int k, int s, int p) {
  const std::int64_t span = in + 2 * std::int64_t{p} - k;
  if (span < 0) return -1;
  return span / s + 1;
}

inline void require_dims(const WeightStore& store, const std::string& layer, std::string_view r,
                         const std::vector<std::int64_t>& dims, bool required = true) {
  const auto* t = store.find(layer, r);
  if (!t) {
    if (required)
      throw Error(ErrorKind::Shape, "missing weight entry '" + weight_key(layer, r) + "'");
    return;
  }
  if (t->dims() != dims) {
    std::string want, got;
    for (auto d : dims) want += (want.empty() ? "" : "x") + std::to_string(d);
    for (auto d : t->dims()) got += (got.empty() ? "" : "x") + std::to_string(d);
    throw Error(ErrorKind::Shape, "weight entry '" + weight_key(layer, r) + "' has dims " + got +
                                      ", expected " + want);
  }
}

inline Footprint merge_footprints(const Footprint& a, const Footprint& b) {
  Footprint out = a;
  for (int d = 0; d < 3; ++d) {
    out.lo[d] = std::max(a.lo[d], b.lo[d]);
    out.hi[d] = std::max(a.hi[d], b.hi[d]);
    out.alignment[d] = std::max(a.alignment[d], b.alignment[d]);
  }
  out.padded = a.padded || b.padded;
  return out;
}

}  // namespace detail

// Propagates blob shapes and dependency footprints in topological order.
// When `store` is given, weight entries are checked against the layers.
inline ShapedNetwork infer_shapes(const NetworkSpec& spec, const WeightStore* store = nullptr) {
  ShapedNetwork net;
  net.spec = spec;
  net.order = validate_graph(spec);
  const auto n = spec.layers.size();
  net.shapes.assign(n, Shape5{});
  net.footprints.assign(n, Footprint{});

  for (int li : net.order) {
    const auto& l = spec.layers[li];
    const auto& p = l.params;
    auto fail = [&](const std::string& msg) {
      throw Error(ErrorKind::Shape, "layer '" + l.name + "': " + msg, l.line, 1);
    };
    std::vector<int> in;
    for (const auto& b : l.bottoms) in.push_back(spec.producer_of(b));
    Shape5 out{};
    Footprint fp{};
    switch (l.kind) {
      case OpKind::Input:
        out = p.input_shape;
        break;
      case OpKind::Convolution: {
        const Shape5 s = net.shapes[in[0]];
        fp = net.footprints[in[0]];
        out = s;
        out.f = p.num_output;
        Dim3 sp = s.spatial();
        for (int d = 0; d < 3; ++d) {
          const auto e = detail::conv_extent(sp[d], p.kernel[d], p.stride[d], p.pad[d]);
          if (e < 1) fail("negative output extent (input " + s.spatial().str() + ", kernel " + p.kernel.str() + ")");
          sp[d] = static_cast<int>(e);
          const double c = fp.scale[d];
          fp.lo[d] += p.pad[d] * c;
          fp.hi[d] += (p.kernel[d] - 1 - p.pad[d]) * c - (p.stride[d] - 1) * c;
          fp.scale[d] = c * p.stride[d];
          fp.alignment[d] = std::max(fp.alignment[d], fp.scale[d]);
        }
        fp.padded = fp.padded || !p.pad.is_zero();
        out = out.with_spatial(sp);
        if (store) {
          detail::require_dims(*store, l.name, role::kKernel,
                               {p.num_output, s.f, p.kernel.x, p.kernel.y, p.kernel.z});
          detail::require_dims(*store, l.name, role::kBias, {p.num_output}, p.bias_term);
          detail::require_dims(*store, l.name, role::kBaseScale, {p.num_output}, false);
        }
        break;
      }
      case OpKind::Deconvolution: {
        const Shape5 s = net.shapes[in[0]];
        fp = net.footprints[in[0]];
        out = s;
        out.f = p.num_output;
        Dim3 sp = s.spatial();
        for (int d = 0; d < 3; ++d) {
          const std::int64_t e =
              (std::int64_t{sp[d]} - 1) * p.stride[d] + p.kernel[d] - 2 * std::int64_t{p.pad[d]};
          if (e < 1) fail("negative output extent");
          sp[d] = static_cast<int>(e);
          const double c = fp.scale[d];
          const double c2 = c / p.stride[d];
          fp.lo[d] += (p.kernel[d] - 1 - p.pad[d]) * c2;
          fp.hi[d] += p.pad[d] * c2 + (c - c2);
          fp.scale[d] = c2;
        }
        out = out.with_spatial(sp);
        if (store) {
          detail::require_dims(*store, l.name, role::kKernel,
                               {p.num_output, s.f, p.kernel.x, p.kernel.y, p.kernel.z});
          detail::require_dims(*store, l.name, role::kBias, {p.num_output}, p.bias_term);
        }
        break;
      }
      case OpKind::Pooling: {
        const Shape5 s = net.shapes[in[0]];
        fp = net.footprints[in[0]];
        Dim3 sp = s.spatial();
        for (int d = 0; d < 3; ++d) {
          if (p.kernel[d] > sp[d]) fail("pooling window " + p.kernel.str() + " exceeds input " + sp.str());
          sp[d] = static_cast<int>(detail::conv_extent(sp[d], p.kernel[d], p.stride[d], 0));
          const double c = fp.scale[d];
          fp.hi[d] += (std::max(p.kernel[d], p.stride[d]) - 1) * c;
          fp.scale[d] = c * p.stride[d];
          fp.hi[d] -= (fp.scale[d] - c);
          fp.alignment[d] = std::max(fp.alignment[d], fp.scale[d]);
        }
        out = s.with_spatial(sp);
        break;
      }
      case OpKind::BatchNorm:
      case OpKind::Scale:
      case OpKind::ReLU:
      case OpKind::ELU:
      case OpKind::Sigmoid: {
        out = net.shapes[in[0]];
        fp = net.footprints[in[0]];
        if (store && l.kind == OpKind::BatchNorm) {
          detail::require_dims(*store, l.name, role::kBnMean, {out.f});
          detail::require_dims(*store, l.name, role::kBnVar, {out.f});
          detail::require_dims(*store, l.name, role::kBnEps, {1}, false);
        }
        if (store && l.kind == OpKind::Scale) {
          detail::require_dims(*store, l.name, role::kScaleGamma, {out.f});
          detail::require_dims(*store, l.name, role::kScaleBeta, {out.f}, p.bias_term);
        }
        break;
      }
      case OpKind::Eltwise: {
        const Shape5 a = net.shapes[in[0]];
        const Shape5 b = net.shapes[in[1]];
        if (!(a == b)) fail("operand shapes differ: " + a.str() + " vs " + b.str());
        out = a;
        fp = detail::merge_footprints(net.footprints[in[0]], net.footprints[in[1]]);
        break;
      }
      case OpKind::MergeCrop: {
        const Shape5 a = net.shapes[in[0]];
        const Shape5 b = net.shapes[in[1]];
        if (a.b != b.b) fail("batch sizes differ");
        const bool a_contains = a.x >= b.x && a.y >= b.y && a.z >= b.z;
        const bool b_contains = b.x >= a.x && b.y >= a.y && b.z >= a.z;
        if (!a_contains && !b_contains)
          fail("neither input spatially contains the other: " + a.str() + " vs " + b.str());
        const Shape5 small = a_contains ? b : a;
        out = small;
        out.f = a.f + b.f;
        Footprint fa = net.footprints[in[0]];
        Footprint fb = net.footprints[in[1]];
        Footprint& big = a_contains ? fa : fb;
        const Shape5 large = a_contains ? a : b;
        const Dim3 off{static_cast<int>((large.x - small.x) / 2), static_cast<int>((large.y - small.y) / 2),
                       static_cast<int>((large.z - small.z) / 2)};
        for (int d = 0; d < 3; ++d) {
          big.lo[d] -= off[d] * big.scale[d];
          big.hi[d] += off[d] * big.scale[d];
        }
        fp = detail::merge_footprints(fa, fb);
        break;
      }
      case OpKind::Pad:
        fail("Pad is not a model layer");
    }
    net.shapes[li] = out;
    net.footprints[li] = fp;
  }
  return net;
}

// Shape propagation plus weight-entry checks.
inline ShapedNetwork validate_shapes(const NetworkSpec& spec, const WeightStore& store) {
  return infer_shapes(spec, &store);
}

}  // namespace voxfuse
