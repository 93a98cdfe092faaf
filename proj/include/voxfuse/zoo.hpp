#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "voxfuse/network.hpp"
#include "voxfuse/shapes.hpp"
#include "voxfuse/weights.hpp"

namespace voxfuse {

enum class ZooVariant { Original, Symmetric, Residual };

inline std::string_view to_string(ZooVariant v) {
  switch (v) {
    case ZooVariant::Original: return "original";
    case ZooVariant::Symmetric: return "symmetric";
    case ZooVariant::Residual: return "residual";
  }
  return "?";
}

inline ZooVariant zoo_variant_from_string(std::string_view s) {
  if (s == "original") return ZooVariant::Original;
  if (s == "symmetric") return ZooVariant::Symmetric;
  if (s == "residual") return ZooVariant::Residual;
  throw Error(ErrorKind::Config, "unknown zoo variant '" + std::string(s) + "'");
}

struct ZooConfig {
  ZooVariant variant = ZooVariant::Residual;
  int levels = 4;  // U-Net levels; levels - 1 downsamples
  int base_features = 0;  // 0 picks the variant default
  std::vector<int> features;  // explicit per-level schedule, overrides the above
  Dim3 input{32, 32, 32};
  int in_channels = 1;
  int out_channels = 3;
  std::uint32_t seed = 1;
};

struct ZooModel {
  NetworkSpec spec;
  WeightStore weights;
};

// Original and Symmetric double per level (64 and 32 at the top); Residual
// starts at 28 and grows by 8, then by 16 per further level.
inline std::vector<int> zoo_features(const ZooConfig& cfg) {
  if (cfg.levels < 1) throw Error(ErrorKind::Config, "levels must be at least 1");
  if (!cfg.features.empty()) {
    if (static_cast<int>(cfg.features.size()) != cfg.levels)
      throw Error(ErrorKind::Config, "feature schedule has " + std::to_string(cfg.features.size()) +
                                         " entries for " + std::to_string(cfg.levels) + " levels");
    return cfg.features;
  }
  std::vector<int> f;
  switch (cfg.variant) {
    case ZooVariant::Original:
    case ZooVariant::Symmetric: {
      int c = cfg.base_features > 0 ? cfg.base_features : (cfg.variant == ZooVariant::Original ? 64 : 32);
      for (int l = 0; l < cfg.levels; ++l, c *= 2) f.push_back(c);
      break;
    }
    case ZooVariant::Residual: {
      int c = cfg.base_features > 0 ? cfg.base_features : 28;
      for (int l = 0; l < cfg.levels; ++l) {
        f.push_back(c);
        c += l == 0 ? 8 : 16;
      }
      break;
    }
  }
  return f;
}

namespace detail {

class ZooBuilder {
 public:
  ZooBuilder(const ZooConfig& cfg, bool with_weights)
      : rng_(cfg.seed), with_weights_(with_weights) {}

  std::string input(Shape5 shape) {
    LayerSpec l = layer("data", OpKind::Input, {});
    l.params.input_shape = shape;
    channels_["data"] = shape.f;
    return push(std::move(l));
  }

  std::string conv(const std::string& name, const std::string& in, int out, int k, int pad) {
    LayerSpec l = layer(name, OpKind::Convolution, {in});
    l.params.num_output = out;
    l.params.kernel = Dim3::all(k);
    l.params.pad = Dim3::all(pad);
    xavier(name, out, channels_.at(in), k);
    channels_[name] = out;
    return push(std::move(l));
  }

  std::string deconv(const std::string& name, const std::string& in, int out) {
    LayerSpec l = layer(name, OpKind::Deconvolution, {in});
    l.params.num_output = out;
    l.params.kernel = Dim3::all(2);
    l.params.stride = Dim3::all(2);
    xavier(name, out, channels_.at(in), 2);
    channels_[name] = out;
    return push(std::move(l));
  }

  // BatchNorm + Scale with identity statistics, then ELU.
  std::string bn_scale_elu(const std::string& prefix, const std::string& in) {
    const auto f = channels_.at(in);
    const std::vector<std::int64_t> d{f};
    std::string bn = push(layer(prefix + "_bn", OpKind::BatchNorm, {in}));
    if (with_weights_) {
      weights_.set(bn, role::kBnMean, StandardTensor(d, 0.0f));
      weights_.set(bn, role::kBnVar, StandardTensor(d, 1.0f));
    }
    std::string sc = push(layer(prefix + "_scale", OpKind::Scale, {bn}));
    if (with_weights_) {
      weights_.set(sc, role::kScaleGamma, StandardTensor(d, 1.0f));
      weights_.set(sc, role::kScaleBeta, StandardTensor(d, 0.0f));
    }
    channels_[bn] = channels_[sc] = f;
    std::string act = push(layer(prefix + "_elu", OpKind::ELU, {sc}));
    channels_[act] = f;
    return act;
  }

  std::string pool(const std::string& name, const std::string& in) {
    LayerSpec l = layer(name, OpKind::Pooling, {in});
    l.params.kernel = Dim3::all(2);
    l.params.stride = Dim3::all(2);
    channels_[name] = channels_.at(in);
    return push(std::move(l));
  }

  std::string add(const std::string& name, const std::string& a, const std::string& b) {
    LayerSpec l = layer(name, OpKind::Eltwise, {a, b});
    channels_[name] = channels_.at(a);
    return push(std::move(l));
  }

  std::string merge(const std::string& name, const std::string& a, const std::string& b) {
    LayerSpec l = layer(name, OpKind::MergeCrop, {a, b});
    channels_[name] = channels_.at(a) + channels_.at(b);
    return push(std::move(l));
  }

  std::string sigmoid(const std::string& name, const std::string& in) {
    channels_[name] = channels_.at(in);
    return push(layer(name, OpKind::Sigmoid, {in}));
  }

  ZooModel finish(std::string name) {
    spec_.name = std::move(name);
    return {std::move(spec_), std::move(weights_)};
  }

 private:
  static LayerSpec layer(const std::string& name, OpKind kind, std::vector<std::string> bottoms) {
    LayerSpec l;
    l.name = name;
    l.kind = kind;
    l.bottoms = std::move(bottoms);
    l.tops = {name};
    return l;
  }
  std::string push(LayerSpec l) {
    spec_.layers.push_back(std::move(l));
    return spec_.layers.back().name;
  }
  void xavier(const std::string& name, std::int64_t out, std::int64_t in, int k) {
    if (!with_weights_) return;
    const double taps = double(k) * k * k;
    const auto bound = static_cast<float>(std::sqrt(6.0 / (in * taps + out * taps)));
    std::uniform_real_distribution<float> dist(-bound, bound);
    StandardTensor kt(std::vector<std::int64_t>{out, in, k, k, k});
    for (auto& v : kt.data()) v = dist(rng_);
    weights_.set(name, role::kKernel, std::move(kt));
    weights_.set(name, role::kBias, StandardTensor(std::vector<std::int64_t>{out}));
  }

  std::mt19937 rng_;
  bool with_weights_;
  NetworkSpec spec_;
  WeightStore weights_;
  std::map<std::string, std::int64_t> channels_;
};


}  // namespace detail

// Builds the network and seeded weights without any shape checking.
inline ZooModel build_zoo(const ZooConfig& cfg, bool with_weights = true) {
  const auto feat = zoo_features(cfg);
  detail::ZooBuilder b(cfg, with_weights);
  const bool padded = cfg.variant != ZooVariant::Original;
  const int pad = padded ? 1 : 0;
  std::string x = b.input({1, cfg.in_channels, cfg.input.x, cfg.input.y, cfg.input.z});

  auto block = [&](const std::string& p, std::string in, int f) {
    if (cfg.variant == ZooVariant::Residual) {
      const std::string h = b.bn_scale_elu(p + "_1", b.conv(p + "_conv1", in, f, 3, pad));
      const std::string g = b.bn_scale_elu(p + "_2", b.conv(p + "_conv2", h, f, 3, pad));
      const std::string s = b.add(p + "_sum", b.conv(p + "_conv3", g, f, 3, pad), h);
      return b.bn_scale_elu(p + "_3", s);
    }
    const std::string h = b.bn_scale_elu(p + "_1", b.conv(p + "_conv1", in, f, 3, pad));
    return b.bn_scale_elu(p + "_2", b.conv(p + "_conv2", h, f, 3, pad));
  };

  std::vector<std::string> skips;
  for (int l = 0; l < cfg.levels; ++l) {
    const std::string p = "enc" + std::to_string(l);
    x = block(p, x, feat[l]);
    if (l + 1 < cfg.levels) {
      skips.push_back(x);
      x = b.pool("pool" + std::to_string(l), x);
    }
  }
  for (int l = cfg.levels - 2; l >= 0; --l) {
    const std::string p = "dec" + std::to_string(l);
    const std::string up = b.deconv("up" + std::to_string(l), x, feat[l]);
    const std::string joined = cfg.variant == ZooVariant::Original
                                   ? b.merge(p + "_merge", skips[l], up)
                                   : b.add(p + "_join", skips[l], up);
    x = block(p, joined, feat[l]);
  }
  x = b.sigmoid("prob", b.conv("final", x, cfg.out_channels, 1, 0));
  return b.finish(std::string(to_string(cfg.variant)) + "_unet");
}

// Smallest isotropic input edge for which the network is well formed.
inline int zoo_min_input(ZooConfig cfg, int limit = 1024) {
  for (int n = 1; n <= limit; ++n) {
    cfg.input = Dim3::all(n);
    try {
      infer_shapes(build_zoo(cfg, false).spec);
      return n;
    } catch (const Error&) {
    }
  }
  return -1;
}

inline ZooModel generate_zoo(const ZooConfig& cfg) {
  ZooModel m = build_zoo(cfg);
  try {
    validate_shapes(m.spec, m.weights);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::Shape) throw;
    const int min = zoo_min_input(cfg);
    throw Error(ErrorKind::Sizing,
                "input " + cfg.input.str() + " is too small for the " + std::string(to_string(cfg.variant)) +
                    " network with " + std::to_string(cfg.levels) + " levels (" + e.detail() +
                    "); minimum valid input is " +
                    (min > 0 ? Dim3::all(min).str() : std::string("above 1024^3")));
  }
  return m;
}

}  // namespace voxfuse
