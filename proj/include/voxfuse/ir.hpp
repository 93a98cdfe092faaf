#pragma once

#include <algorithm>
#include <functional>
#include <optional>
#include <queue>
#include <string>
#include <utility>
#include <vector>

#include "voxfuse/network.hpp"
#include "voxfuse/shapes.hpp"

namespace voxfuse {

struct Activation {
  OpKind kind = OpKind::ReLU;
  float alpha = 1.0f;  // ELU only

  friend bool operator==(const Activation&, const Activation&) = default;
};

struct IRNode {
  int id = -1;
  std::string name;  // also the weight-entry prefix
  OpKind kind = OpKind::Input;
  LayerParams params;
  std::vector<int> inputs;
  Shape5 shape;

  // Fusion state.
  int base = -1;  // second operand of a fused addition
  bool additive = false;
  std::optional<Activation> activation;
  Dim3 pads{};      // Pad nodes: padding applied to the input
  Dim3 out_pads{};  // producer writes through a padded view with this halo

  bool live = true;
};

struct ConsumerEdge {
  int node;
  bool via_base;
};

class IRGraph {
 public:
  std::vector<IRNode> nodes;
  std::vector<int> inputs;
  std::vector<int> outputs;

  IRNode& node(int id) { return nodes.at(id); }
  const IRNode& node(int id) const { return nodes.at(id); }

  int add(IRNode n) {
    n.id = static_cast<int>(nodes.size());
    nodes.push_back(std::move(n));
    return nodes.back().id;
  }

  std::size_t live_count() const {
    return static_cast<std::size_t>(
        std::count_if(nodes.begin(), nodes.end(), [](const IRNode& n) { return n.live; }));
  }
  std::size_t count(OpKind k) const {
    return static_cast<std::size_t>(std::count_if(
        nodes.begin(), nodes.end(), [k](const IRNode& n) { return n.live && n.kind == k; }));
  }

  bool is_output(int id) const {
    return std::find(outputs.begin(), outputs.end(), id) != outputs.end();
  }

  // One entry per edge; an input consumed twice appears twice.
  std::vector<ConsumerEdge> consumers(int id) const {
    std::vector<ConsumerEdge> out;
    for (const auto& n : nodes) {
      if (!n.live) continue;
      for (int i : n.inputs)
        if (i == id) out.push_back({n.id, false});
      if (n.base == id) out.push_back({n.id, true});
    }
    return out;
  }

  // True if `consumer` is the only reader of `producer`'s output.
  bool sole_consumer(int producer, int consumer) const {
    if (is_output(producer)) return false;
    const auto edges = consumers(producer);
    if (edges.empty()) return false;
    return std::all_of(edges.begin(), edges.end(),
                       [&](const ConsumerEdge& e) { return e.node == consumer && !e.via_base; });
  }

  void replace_uses(int from, int to) {
    for (auto& n : nodes) {
      if (!n.live) continue;
      for (int& i : n.inputs)
        if (i == from) i = to;
      if (n.base == from) n.base = to;
    }
    for (int& o : outputs)
      if (o == from) o = to;
  }

  void remove(int id) {
    auto& n = nodes.at(id);
    n.live = false;
    n.inputs.clear();
    n.base = -1;
  }

  std::vector<int> predecessors(int id) const {
    std::vector<int> p = nodes.at(id).inputs;
    if (nodes.at(id).base >= 0) p.push_back(nodes.at(id).base);
    return p;
  }

  bool has_path(int from, int to) const {
    if (from == to) return true;
    std::vector<char> seen(nodes.size(), 0);
    std::vector<int> stack{from};
    while (!stack.empty()) {
      const int cur = stack.back();
      stack.pop_back();
      if (cur == to) return true;
      if (seen[cur]) continue;
      seen[cur] = 1;
      for (const auto& e : consumers(cur)) stack.push_back(e.node);
    }
    return false;
  }

  // Deterministic topological order of live nodes (ties broken by id).
  // Throws ErrorKind::Internal if the graph has a cycle.
  std::vector<int> topo_order() const {
    std::vector<int> indegree(nodes.size(), 0);
    std::vector<std::vector<int>> succ(nodes.size());
    std::size_t live = 0;
    for (const auto& n : nodes) {
      if (!n.live) continue;
      ++live;
      for (int p : predecessors(n.id)) {
        succ[p].push_back(n.id);
        ++indegree[n.id];
      }
    }
    std::priority_queue<int, std::vector<int>, std::greater<>> ready;
    for (const auto& n : nodes)
      if (n.live && indegree[n.id] == 0) ready.push(n.id);
    std::vector<int> order;
    order.reserve(live);
    while (!ready.empty()) {
      const int id = ready.top();
      ready.pop();
      order.push_back(id);
      for (int s : succ[id])
        if (--indegree[s] == 0) ready.push(s);
    }
    if (order.size() != live) throw Error(ErrorKind::Internal, "IR graph contains a cycle");
    return order;
  }

  // Structural invariants; throws ErrorKind::Internal on violation.
  void check() const {
    topo_order();
    for (const auto& n : nodes) {
      if (!n.live) continue;
      for (int p : predecessors(n.id))
        if (p < 0 || p >= static_cast<int>(nodes.size()) || !nodes[p].live)
          throw Error(ErrorKind::Internal, "node '" + n.name + "' reads a removed node");
      if (n.additive != (n.base >= 0))
        throw Error(ErrorKind::Internal, "node '" + n.name + "' additive flag without base");
      if (n.activation && !is_conv_like(n.kind))
        throw Error(ErrorKind::Internal, "activation fused into non-convolution '" + n.name + "'");
      if (!n.out_pads.is_zero() && !is_conv_like(n.kind))
        throw Error(ErrorKind::Internal, "padded output on non-convolution '" + n.name + "'");
      if (!is_output(n.id) && n.kind != OpKind::Input && consumers(n.id).empty())
        throw Error(ErrorKind::Internal, "node '" + n.name + "' has no consumers");
    }
  }
};

// Lowers a shape-annotated network: one node per layer, plus an explicit Pad
// node in front of every convolution with non-zero padding (the convolution
// itself becomes unpadded).
inline IRGraph build_ir(const ShapedNetwork& net) {
  IRGraph g;
  std::vector<int> node_of_layer(net.spec.layers.size(), -1);
  for (int li : net.order) {
    const auto& l = net.spec.layers[li];
    std::vector<int> ins;
    for (const auto& b : l.bottoms) ins.push_back(node_of_layer[net.spec.producer_of(b)]);

    IRNode n;
    n.name = l.name;
    n.kind = l.kind;
    n.params = l.params;
    n.shape = net.shapes[li];
    if (l.kind == OpKind::Convolution && !l.params.pad.is_zero()) {
      IRNode pad;
      pad.name = l.name + "/pad";
      pad.kind = OpKind::Pad;
      pad.pads = l.params.pad;
      pad.inputs = ins;
      const Shape5 src = g.node(ins[0]).shape;
      pad.shape = src.with_spatial(src.spatial() + l.params.pad * 2);
      ins = {g.add(std::move(pad))};
      n.params.pad = {};
    }
    n.inputs = std::move(ins);
    const int id = g.add(std::move(n));
    node_of_layer[li] = id;
    if (l.kind == OpKind::Input) g.inputs.push_back(id);
  }
  for (const auto& blob : net.spec.output_blobs())
    g.outputs.push_back(node_of_layer[net.spec.producer_of(blob)]);
  return g;
}

}  // namespace voxfuse
