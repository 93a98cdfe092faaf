#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "voxfuse/voxfuse.hpp"

namespace vftest {

using namespace voxfuse;

inline StandardTensor random_tensor(std::vector<std::int64_t> dims, std::mt19937& rng,
                                    float lo = -1.0f, float hi = 1.0f) {
  StandardTensor t(std::move(dims));
  std::uniform_real_distribution<float> dist(lo, hi);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

inline StandardTensor random_tensor(std::initializer_list<std::int64_t> dims, std::mt19937& rng,
                                    float lo = -1.0f, float hi = 1.0f) {
  return random_tensor(std::vector<std::int64_t>(dims), rng, lo, hi);
}

inline StandardTensor random_tensor(const Shape5& s, std::mt19937& rng, float lo = -1.0f,
                                    float hi = 1.0f) {
  return random_tensor(std::vector<std::int64_t>{s.b, s.f, s.x, s.y, s.z}, rng, lo, hi);
}

// Largest |a - b|; infinity on shape mismatch or any non-finite value.
inline double max_abs_diff(const StandardTensor& a, const StandardTensor& b) {
  if (a.dims() != b.dims()) return INFINITY;
  double m = 0;
  for (std::size_t i = 0; i < a.data().size(); ++i) {
    const double x = a.data()[i], y = b.data()[i];
    if (!std::isfinite(x) || !std::isfinite(y)) return INFINITY;
    m = std::max(m, std::abs(x - y));
  }
  return m;
}

inline double max_abs_diff(const std::vector<StandardTensor>& a, const std::vector<StandardTensor>& b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, max_abs_diff(a[i], b[i]));
  return m;
}

inline bool bit_equal(const std::vector<StandardTensor>& a, const std::vector<StandardTensor>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].dims() != b[i].dims()) return false;
    if (std::memcmp(a[i].data().data(), b[i].data().data(), a[i].data().size_bytes()) != 0) return false;
  }
  return true;
}

struct Model {
  NetworkSpec spec;
  WeightStore weights;
};

// Seeded random networks of at most `max_layers` layers (input included) and
// at most 16 featuremaps, built from every layer kind the compiler knows.
// Residual-style additions, padded convolutions and BN/Scale/activation
// chains are generated often enough that every pass has work to do.
class NetworkGenerator {
 public:
  explicit NetworkGenerator(std::uint32_t seed, int max_layers = 12) : rng_(seed), max_(max_layers) {}

  Model generate() {
    const int f = pick(1, 4);
    const int edge = pick(7, 10);
    Shape5 s{1, f, edge, pick(6, 10), pick(6, 10)};
    LayerSpec in = layer(OpKind::Input, {});
    in.params.input_shape = s;
    std::string cur = push(std::move(in), s);
    while (count() < max_) {
      const int r = pick(0, 9);
      if (r <= 2) cur = conv(cur);
      else if (r == 3) cur = residual(cur);
      else if (r == 4) cur = linear(cur, OpKind::BatchNorm);
      else if (r == 5) cur = linear(cur, OpKind::Scale);
      else if (r == 6) cur = activation(cur);
      else if (r == 7) cur = pool_or_deconv(cur);
      else if (r == 8) cur = merge(cur);
      else cur = eltwise(cur);
    }
    return {spec_, weights_};
  }

 private:
  struct Blob {
    std::string name;
    Shape5 shape;
  };

  int pick(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
  float uniform(float lo, float hi) { return std::uniform_real_distribution<float>(lo, hi)(rng_); }
  int count() const { return static_cast<int>(spec_.layers.size()); }
  int room() const { return max_ - count(); }
  const Blob& blob(const std::string& n) const {
    return *std::find_if(blobs_.begin(), blobs_.end(), [&](const Blob& b) { return b.name == n; });
  }

  LayerSpec layer(OpKind k, std::vector<std::string> bottoms) {
    LayerSpec l;
    l.name = std::string(to_string(k)) + std::to_string(count());
    l.kind = k;
    l.bottoms = std::move(bottoms);
    l.tops = {l.name};
    return l;
  }

  std::string push(LayerSpec l, Shape5 out) {
    blobs_.push_back({l.name, out});
    spec_.layers.push_back(std::move(l));
    return spec_.layers.back().name;
  }

  StandardTensor values(std::vector<std::int64_t> dims, float lo, float hi) {
    StandardTensor t(std::move(dims));
    for (auto& v : t.data()) v = uniform(lo, hi);
    return t;
  }

  std::string conv_into(const std::string& in, int out_f, int k, int pad) {
    const Shape5 s = blob(in).shape;
    LayerSpec l = layer(OpKind::Convolution, {in});
    l.params.num_output = out_f;
    l.params.kernel = Dim3::all(k);
    l.params.pad = Dim3::all(pad);
    l.params.bias_term = pick(0, 3) != 0;
    const float lim = std::sqrt(1.0f / static_cast<float>(s.f * k * k * k));
    weights_.set(l.name, role::kKernel, values({out_f, s.f, k, k, k}, -lim, lim));
    if (l.params.bias_term) weights_.set(l.name, role::kBias, values({out_f}, -0.2f, 0.2f));
    Shape5 o = s;
    o.f = out_f;
    o = o.with_spatial(s.spatial() + Dim3::all(2 * pad - k + 1));
    return push(std::move(l), o);
  }

  std::string conv(const std::string& in) {
    const Shape5 s = blob(in).shape;
    const int k = std::min({s.x, s.y, s.z}) >= 5 && pick(0, 1) ? 3 : 1;
    const int pad = k == 3 && pick(0, 2) != 0 ? 1 : 0;
    std::string out = conv_into(in, pick(1, 16), k, pad);
    const Shape5 o = blob(out).shape;
    switch (room() > 0 ? pick(0, 3) : 0) {
      case 1: out = activation(out); break;
      case 2: out = linear(out, pick(0, 1) ? OpKind::BatchNorm : OpKind::Scale); break;
      case 3:
        if (std::min({o.x, o.y, o.z}) >= 3) out = conv_into(out, pick(1, 16), 3, 1);
        break;
    }
    return out;
  }

  // conv(pad=same) followed by a sum with its own input.
  std::string residual(const std::string& in) {
    if (room() < 2) return conv(in);
    const Shape5 s = blob(in).shape;
    const std::string c = conv_into(in, static_cast<int>(s.f), 3, 1);
    LayerSpec l = layer(OpKind::Eltwise, pick(0, 1) ? std::vector<std::string>{c, in}
                                                     : std::vector<std::string>{in, c});
    return push(std::move(l), s);
  }

  std::string linear(const std::string& in, OpKind k) {
    const Shape5 s = blob(in).shape;
    LayerSpec l = layer(k, {in});
    if (k == OpKind::BatchNorm) {
      weights_.set(l.name, role::kBnMean, values({s.f}, -0.5f, 0.5f));
      weights_.set(l.name, role::kBnVar, values({s.f}, 0.5f, 2.0f));
      if (pick(0, 1)) l.params.bn_eps = 1e-3f;
    } else {
      l.params.bias_term = pick(0, 3) != 0;
      weights_.set(l.name, role::kScaleGamma, values({s.f}, 0.5f, 1.5f));
      if (l.params.bias_term) weights_.set(l.name, role::kScaleBeta, values({s.f}, -0.5f, 0.5f));
    }
    return push(std::move(l), s);
  }

  std::string activation(const std::string& in) {
    const OpKind kinds[] = {OpKind::ReLU, OpKind::ELU, OpKind::Sigmoid};
    LayerSpec l = layer(kinds[pick(0, 2)], {in});
    if (l.kind == OpKind::ELU) l.params.elu_alpha = uniform(0.5f, 1.5f);
    return push(std::move(l), blob(in).shape);
  }

  std::string pool_or_deconv(const std::string& in) {
    const Shape5 s = blob(in).shape;
    if (std::min({s.x, s.y, s.z}) >= 4 && pick(0, 1)) {
      LayerSpec l = layer(OpKind::Pooling, {in});
      l.params.kernel = Dim3::all(2);
      l.params.stride = Dim3::all(2);
      l.params.pool = pick(0, 1) ? PoolMode::Max : PoolMode::Average;
      return push(std::move(l), s.with_spatial(Dim3{static_cast<int>(s.x / 2), static_cast<int>(s.y / 2),
                                                    static_cast<int>(s.z / 2)}));
    }
    if (std::max({s.x, s.y, s.z}) > 8) return conv(in);
    const int out_f = pick(1, 8);
    LayerSpec l = layer(OpKind::Deconvolution, {in});
    l.params.num_output = out_f;
    l.params.kernel = Dim3::all(2);
    l.params.stride = Dim3::all(2);
    l.params.bias_term = pick(0, 1) != 0;
    const float lim = std::sqrt(1.0f / static_cast<float>(s.f));
    weights_.set(l.name, role::kKernel, values({out_f, s.f, 2, 2, 2}, -lim, lim));
    if (l.params.bias_term) weights_.set(l.name, role::kBias, values({out_f}, -0.2f, 0.2f));
    Shape5 o = s.with_spatial(s.spatial() * 2);
    o.f = out_f;
    return push(std::move(l), o);
  }

  // Concatenates with an earlier blob that contains (or is contained by) cur.
  std::string merge(const std::string& in) {
    const Shape5 s = blob(in).shape;
    std::vector<std::string> cands;
    for (const auto& b : blobs_) {
      if (b.name == in || b.shape.f + s.f > 16) continue;
      const bool a = b.shape.x >= s.x && b.shape.y >= s.y && b.shape.z >= s.z;
      const bool c = s.x >= b.shape.x && s.y >= b.shape.y && s.z >= b.shape.z;
      if (a || c) cands.push_back(b.name);
    }
    if (cands.empty()) return activation(in);
    const Blob other = blob(cands[pick(0, static_cast<int>(cands.size()) - 1)]);
    const bool other_big = other.shape.x >= s.x && other.shape.y >= s.y && other.shape.z >= s.z;
    Shape5 o = other_big ? s : other.shape;
    o.f = s.f + other.shape.f;
    LayerSpec l = layer(OpKind::MergeCrop, {other.name, in});
    return push(std::move(l), o);
  }

  // Sum or product with an earlier blob of identical shape, or a sum
  // with a freshly computed 1x1 branch.
  std::string eltwise(const std::string& in) {
    const Shape5 s = blob(in).shape;
    std::vector<std::string> cands;
    for (const auto& b : blobs_)
      if (b.name != in && b.shape == s) cands.push_back(b.name);
    if (cands.empty()) {
      if (room() < 2) return activation(in);
      cands.push_back(conv_into(in, static_cast<int>(s.f), 1, 0));
    }
    LayerSpec l = layer(OpKind::Eltwise, {in, cands[pick(0, static_cast<int>(cands.size()) - 1)]});
    const int op = pick(0, 5);
    l.params.eltwise = op == 0 ? EltwiseOp::Product : EltwiseOp::Sum;
    return push(std::move(l), s);
  }

  std::mt19937 rng_;
  int max_;
  NetworkSpec spec_;
  WeightStore weights_;
  std::vector<Blob> blobs_;
};

inline Model random_network(std::uint32_t seed, int max_layers = 12) {
  return NetworkGenerator(seed, max_layers).generate();
}

inline Model zoo_model(ZooVariant v, int levels, Dim3 input, std::uint32_t seed = 1) {
  ZooConfig cfg;
  cfg.variant = v;
  cfg.levels = levels;
  cfg.input = input;
  cfg.seed = seed;
  auto m = generate_zoo(cfg);
  return {std::move(m.spec), std::move(m.weights)};
}

inline std::vector<StandardTensor> seeded_inputs(const NetworkSpec& spec, std::uint32_t seed) {
  std::mt19937 rng(seed);
  std::vector<StandardTensor> in;
  for (int i : spec.input_layers()) in.push_back(random_tensor(spec.layers[i].params.input_shape, rng));
  return in;
}

// Seeded weights for every layer of a spec that needs them.
inline WeightStore random_weights(const NetworkSpec& spec, std::uint32_t seed) {
  std::mt19937 rng(seed);
  const ShapedNetwork net = infer_shapes(spec);
  WeightStore w;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    const auto& p = l.params;
    const std::int64_t in_f = l.bottoms.empty() ? 0 : net.shape_of(l.bottoms[0]).f;
    const std::int64_t f = net.shapes[i].f;
    switch (l.kind) {
      case OpKind::Convolution:
      case OpKind::Deconvolution: {
        const float lim = std::sqrt(1.0f / static_cast<float>(in_f * p.kernel.volume()));
        w.set(l.name, role::kKernel,
              random_tensor({p.num_output, in_f, p.kernel.x, p.kernel.y, p.kernel.z}, rng, -lim, lim));
        if (p.bias_term) w.set(l.name, role::kBias, random_tensor({f}, rng, -0.2f, 0.2f));
        break;
      }
      case OpKind::BatchNorm:
        w.set(l.name, role::kBnMean, random_tensor({f}, rng, -0.5f, 0.5f));
        w.set(l.name, role::kBnVar, random_tensor({f}, rng, 0.5f, 2.0f));
        break;
      case OpKind::Scale:
        w.set(l.name, role::kScaleGamma, random_tensor({f}, rng, 0.5f, 1.5f));
        if (p.bias_term) w.set(l.name, role::kScaleBeta, random_tensor({f}, rng, -0.5f, 0.5f));
        break;
      default:
        break;
    }
  }
  return w;
}

inline Model parsed(const std::string& text, std::uint32_t seed = 1) {
  auto spec = parse_prototxt(text);
  auto w = random_weights(spec, seed);
  return {std::move(spec), std::move(w)};
}

inline std::string input_layer(const std::string& name, Shape5 s) {
  return "layer { name: \"" + name + "\" type: \"Input\" top: \"" + name +
         "\" input_param { shape { dim: " + std::to_string(s.b) + " dim: " + std::to_string(s.f) +
         " dim: " + std::to_string(s.x) + " dim: " + std::to_string(s.y) + " dim: " + std::to_string(s.z) +
         " } } }\n";
}

inline std::string conv_layer(const std::string& name, const std::string& in, int out, int k, int pad = 0,
                              int stride = 1) {
  return "layer { name: \"" + name + "\" type: \"Convolution\" bottom: \"" + in + "\" top: \"" + name +
         "\" convolution_param { num_output: " + std::to_string(out) + " kernel_size: " + std::to_string(k) +
         " pad: " + std::to_string(pad) + " stride: " + std::to_string(stride) + " } }\n";
}

inline std::string unary_layer(const std::string& name, const char* type, const std::string& in) {
  return "layer { name: \"" + name + "\" type: \"" + type + "\" bottom: \"" + in + "\" top: \"" + name +
         "\" }\n";
}

inline std::string binary_layer(const std::string& name, const char* type, const std::string& a,
                                const std::string& b) {
  return "layer { name: \"" + name + "\" type: \"" + type + "\" bottom: \"" + a + "\" bottom: \"" + b +
         "\" top: \"" + name + "\" }\n";
}

inline std::string pool_layer(const std::string& name, const std::string& in) {
  return "layer { name: \"" + name + "\" type: \"Pooling\" bottom: \"" + in + "\" top: \"" + name +
         "\" pooling_param { pool: MAX kernel_size: 2 stride: 2 } }\n";
}

inline IRGraph lowered(const Model& m) { return build_ir(validate_shapes(m.spec, m.weights)); }

inline const IRNode& node_named(const IRGraph& g, const std::string& name) {
  for (const auto& n : g.nodes)
    if (n.name == name) return n;
  throw std::runtime_error("no node " + name);
}

}  // namespace vftest
