#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <queue>
#include <string>
#include <string_view>
#include <vector>

#include "voxfuse/error.hpp"
#include "voxfuse/geometry.hpp"

namespace voxfuse {

enum class OpKind {
  Input,
  Convolution,
  Deconvolution,
  BatchNorm,
  Scale,
  ReLU,
  ELU,
  Sigmoid,
  Eltwise,
  MergeCrop,
  Pooling,
  // Inserted by the compiler only; never appears in model files.
  Pad,
};

enum class PoolMode { Max, Average };
enum class EltwiseOp { Sum, Product, Division };

constexpr std::string_view to_string(OpKind k) {
  switch (k) {
    case OpKind::Input: return "Input";
    case OpKind::Convolution: return "Convolution";
    case OpKind::Deconvolution: return "Deconvolution";
    case OpKind::BatchNorm: return "BatchNorm";
    case OpKind::Scale: return "Scale";
    case OpKind::ReLU: return "ReLU";
    case OpKind::ELU: return "ELU";
    case OpKind::Sigmoid: return "Sigmoid";
    case OpKind::Eltwise: return "Eltwise";
    case OpKind::MergeCrop: return "MergeCrop";
    case OpKind::Pooling: return "Pooling";
    case OpKind::Pad: return "Pad";
  }
  return "?";
}

inline std::optional<OpKind> layer_kind_from_string(std::string_view s) {
  for (auto k : {OpKind::Input, OpKind::Convolution, OpKind::Deconvolution, OpKind::BatchNorm,
                 OpKind::Scale, OpKind::ReLU, OpKind::ELU, OpKind::Sigmoid, OpKind::Eltwise,
                 OpKind::MergeCrop, OpKind::Pooling})
    if (to_string(k) == s) return k;
  return std::nullopt;
}

constexpr bool is_conv_like(OpKind k) {
  return k == OpKind::Convolution || k == OpKind::Deconvolution;
}
constexpr bool is_activation(OpKind k) {
  return k == OpKind::ReLU || k == OpKind::ELU || k == OpKind::Sigmoid;
}
constexpr bool is_linear(OpKind k) { return k == OpKind::BatchNorm || k == OpKind::Scale; }

// Parameters for every layer kind; each kind reads only its own fields.
struct LayerParams {
  Shape5 input_shape{};  // Input
  int num_output = 0;    // Convolution, Deconvolution
  Dim3 kernel{};         // Convolution, Deconvolution, Pooling
  Dim3 stride{1, 1, 1};
  Dim3 pad{};
  bool bias_term = true;  // Convolution, Deconvolution, Scale
  PoolMode pool = PoolMode::Max;
  EltwiseOp eltwise = EltwiseOp::Sum;
  float elu_alpha = 1.0f;
  std::optional<float> bn_eps;

  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

struct LayerSpec {
  std::string name;
  OpKind kind = OpKind::Input;
  std::vector<std::string> bottoms;
  std::vector<std::string> tops;
  LayerParams params;
  int line = 0;  // source location; not part of equality

  friend bool operator==(const LayerSpec& a, const LayerSpec& b) {
    return a.name == b.name && a.kind == b.kind && a.bottoms == b.bottoms && a.tops == b.tops &&
           a.params == b.params;
  }
};

struct NetworkSpec {
  std::string name;
  std::vector<LayerSpec> layers;

  friend bool operator==(const NetworkSpec& a, const NetworkSpec& b) {
    return a.name == b.name && a.layers == b.layers;
  }

  // Index of the layer producing `blob`, or -1.
  int producer_of(std::string_view blob) const {
    for (std::size_t i = 0; i < layers.size(); ++i)
      for (const auto& t : layers[i].tops)
        if (t == blob) return static_cast<int>(i);
    return -1;
  }

  std::vector<int> input_layers() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < layers.size(); ++i)
      if (layers[i].kind == OpKind::Input) out.push_back(static_cast<int>(i));
    return out;
  }

  // Blobs never consumed by another layer, in declaration order.
  std::vector<std::string> output_blobs() const {
    std::vector<std::string> out;
    for (const auto& l : layers)
      for (const auto& t : l.tops) {
        bool used = false;
        for (const auto& c : layers)
          used = used || std::find(c.bottoms.begin(), c.bottoms.end(), t) != c.bottoms.end();
        if (!used) out.push_back(t);
      }
    return out;
  }
};

inline int expected_arity(OpKind k) {
  switch (k) {
    case OpKind::Input: return 0;
    case OpKind::Eltwise:
    case OpKind::MergeCrop: return 2;
    default: return 1;
  }
}

// Checks single assignment, reference resolution and acyclicity, and returns
// a topological order that is stable with respect to declaration index.
inline std::vector<int> validate_graph(const NetworkSpec& spec) {
  const int n = static_cast<int>(spec.layers.size());
  std::map<std::string, int, std::less<>> producer;
  for (int i = 0; i < n; ++i) {
    const auto& l = spec.layers[i];
    if (l.tops.empty())
      throw Error(ErrorKind::MissingParam, "layer '" + l.name + "' declares no top", l.line, 1);
    if (l.tops.size() > 1)
      throw Error(ErrorKind::Unsupported, "layer '" + l.name + "' declares more than one top",
                  l.line, 1);
    if (static_cast<int>(l.bottoms.size()) != expected_arity(l.kind))
      throw Error(ErrorKind::Arity,
                  "layer '" + l.name + "' (" + std::string(to_string(l.kind)) + ") expects " +
                      std::to_string(expected_arity(l.kind)) + " bottoms, got " +
                      std::to_string(l.bottoms.size()),
                  l.line, 1);
    for (const auto& t : l.tops) {
      if (!producer.emplace(t, i).second)
        throw Error(ErrorKind::DuplicateTop, "blob '" + t + "' is produced more than once",
                    l.line, 1);
    }
  }
  std::vector<std::vector<int>> consumers(n);
  std::vector<int> indegree(n, 0);
  for (int i = 0; i < n; ++i) {
    const auto& l = spec.layers[i];
    for (const auto& b : l.bottoms) {
      auto it = producer.find(b);
      if (it == producer.end())
        throw Error(ErrorKind::DanglingReference,
                    "layer '" + l.name + "' references undeclared blob '" + b + "'", l.line, 1);
      consumers[it->second].push_back(i);
      ++indegree[i];
    }
  }
  std::priority_queue<int, std::vector<int>, std::greater<>> ready;
  for (int i = 0; i < n; ++i)
    if (indegree[i] == 0) ready.push(i);
  std::vector<int> order;
  order.reserve(n);
  while (!ready.empty()) {
    const int i = ready.top();
    ready.pop();
    order.push_back(i);
    for (int c : consumers[i])
      if (--indegree[c] == 0) ready.push(c);
  }
  if (static_cast<int>(order.size()) != n) {
    for (int i = 0; i < n; ++i)
      if (indegree[i] > 0)
        throw Error(ErrorKind::Cycle, "layer '" + spec.layers[i].name + "' is on or downstream of a cycle",
                    spec.layers[i].line, 1);
  }
  return order;
}

}  // namespace voxfuse
