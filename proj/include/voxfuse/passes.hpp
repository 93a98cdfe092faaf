#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "voxfuse/ir.hpp"
#include "voxfuse/weights.hpp"

namespace voxfuse {

struct PassOptions {
  bool fuse_addition = true;
  bool fold_linear = true;
  bool fuse_activation = true;
  bool eliminate_padding = true;

  static PassOptions none() { return {false, false, false, false}; }
  static PassOptions only(int pass) {
    PassOptions o = none();
    o.set(pass, true);
    return o;
  }
  static PassOptions all_but(int pass) {
    PassOptions o;
    o.set(pass, false);
    return o;
  }
  void set(int pass, bool on) {
    switch (pass) {
      case 0: fuse_addition = on; break;
      case 1: fold_linear = on; break;
      case 2: fuse_activation = on; break;
      case 3: eliminate_padding = on; break;
      default: throw Error(ErrorKind::Config, "no pass #" + std::to_string(pass));
    }
  }
  friend bool operator==(const PassOptions&, const PassOptions&) = default;
};

struct PassReport {
  std::string pass;
  int removed = 0;    // nodes deleted from the graph
  int rewritten = 0;  // surviving nodes whose fusion state or weights changed
};

// Absorbs element-wise additions into a producing convolution. For
// E = add(L1, L2) with L1 a convolution, E must be L1's only consumer and no
// path may lead from L1 to L2; L2's output then becomes L1's base operand.
inline PassReport fuse_addition(IRGraph& g) {
  PassReport rep{"fuse-addition"};
  for (int e : g.topo_order()) {
    auto& add = g.node(e);
    if (!add.live || add.kind != OpKind::Eltwise || add.params.eltwise != EltwiseOp::Sum) continue;
    const auto order = g.topo_order();
    auto position = [&](int id) {
      return static_cast<int>(std::find(order.begin(), order.end(), id) - order.begin());
    };
    int chosen = -1;
    int other = -1;
    for (int k = 0; k < 2; ++k) {
      const int l1 = add.inputs[k];
      const int l2 = add.inputs[1 - k];
      const auto& conv = g.node(l1);
      if (conv.kind != OpKind::Convolution || conv.additive || conv.activation ||
          !conv.out_pads.is_zero())
        continue;
      if (!g.sole_consumer(l1, e)) continue;
      if (g.has_path(l1, l2)) continue;
      if (chosen < 0 || position(l1) > position(chosen)) {
        chosen = l1;
        other = l2;
      }
    }
    if (chosen < 0) continue;
    auto& conv = g.node(chosen);
    conv.base = other;
    conv.additive = true;
    g.remove(e);
    g.replace_uses(e, chosen);
    g.topo_order();
    ++rep.removed;
    ++rep.rewritten;
  }
  return rep;
}

// Per-channel multiplier and offset of an inference-time BatchNorm or Scale.
struct LinearTransform {
  std::vector<float> mul;
  std::vector<float> add;
};

inline LinearTransform linear_transform_of(const IRNode& n, const WeightStore& w) {
  LinearTransform t;
  const auto f = static_cast<std::size_t>(n.shape.f);
  t.mul.resize(f);
  t.add.resize(f);
  if (n.kind == OpKind::BatchNorm) {
    const auto mean = w.get(n.name, role::kBnMean).data();
    const auto var = w.get(n.name, role::kBnVar).data();
    double eps = n.params.bn_eps.value_or(1e-5f);
    if (const auto* e = w.find(n.name, role::kBnEps)) eps = e->data()[0];
    for (std::size_t m = 0; m < f; ++m) {
      const double inv = 1.0 / std::sqrt(static_cast<double>(var[m]) + eps);
      t.mul[m] = static_cast<float>(inv);
      t.add[m] = static_cast<float>(-static_cast<double>(mean[m]) * inv);
    }
  } else if (n.kind == OpKind::Scale) {
    const auto gamma = w.get(n.name, role::kScaleGamma).data();
    const auto* beta = w.find(n.name, role::kScaleBeta);
    for (std::size_t m = 0; m < f; ++m) {
      t.mul[m] = gamma[m];
      t.add[m] = beta ? beta->data()[m] : 0.0f;
    }
  } else {
    throw Error(ErrorKind::Internal, "node '" + n.name + "' is not a linear transform");
  }
  return t;
}

// Folds BatchNorm/Scale nodes into the preceding convolution or
// deconvolution: K' = K*M, B' = B*M + A. A fused addition operand is scaled
// by M as well (kept as a per-channel base multiplier).
inline PassReport fold_linear(IRGraph& g, WeightStore& w) {
  PassReport rep{"fold-linear"};
  for (int id : g.topo_order()) {
    auto& lin = g.node(id);
    if (!lin.live || !is_linear(lin.kind)) continue;
    const int pid = lin.inputs[0];
    auto& conv = g.node(pid);
    if (!is_conv_like(conv.kind) || conv.activation || !conv.out_pads.is_zero()) continue;
    if (!g.sole_consumer(pid, id)) continue;

    const auto t = linear_transform_of(lin, w);
    const auto f = static_cast<std::int64_t>(t.mul.size());
    auto& kernel = w.get_mutable(weight_key(conv.name, role::kKernel));
    const std::int64_t per_out = kernel.numel() / f;
    auto kd = kernel.data();
    for (std::int64_t m = 0; m < f; ++m)
      for (std::int64_t j = 0; j < per_out; ++j) kd[m * per_out + j] *= t.mul[m];

    if (!w.contains(conv.name, role::kBias)) w.set(conv.name, role::kBias, StandardTensor(std::vector<std::int64_t>{f}));
    auto bias = w.get_mutable(weight_key(conv.name, role::kBias)).data();
    for (std::int64_t m = 0; m < f; ++m) bias[m] = bias[m] * t.mul[m] + t.add[m];

    if (conv.additive) {
      if (!w.contains(conv.name, role::kBaseScale))
        w.set(conv.name, role::kBaseScale, StandardTensor(std::vector<std::int64_t>{f}, 1.0f));
      auto bs = w.get_mutable(weight_key(conv.name, role::kBaseScale)).data();
      for (std::int64_t m = 0; m < f; ++m) bs[m] *= t.mul[m];
    }
    g.remove(id);
    g.replace_uses(id, pid);
    ++rep.removed;
    ++rep.rewritten;
  }
  return rep;
}

// Moves ReLU/ELU/Sigmoid into the final store of the producing convolution.
inline PassReport fuse_activation(IRGraph& g) {
  PassReport rep{"fuse-activation"};
  for (int id : g.topo_order()) {
    auto& act = g.node(id);
    if (!act.live || !is_activation(act.kind)) continue;
    const int pid = act.inputs[0];
    auto& conv = g.node(pid);
    if (!is_conv_like(conv.kind) || conv.activation || !conv.out_pads.is_zero()) continue;
    if (!g.sole_consumer(pid, id)) continue;
    conv.activation = Activation{act.kind, act.params.elu_alpha};
    g.remove(id);
    g.replace_uses(id, pid);
    ++rep.removed;
    ++rep.rewritten;
  }
  return rep;
}

// Replaces Pad nodes by a padded-view output on the producing convolution when
// every consumer of that output asks for the same padding.
inline PassReport eliminate_padding(IRGraph& g) {
  PassReport rep{"eliminate-padding"};
  for (int id : g.topo_order()) {
    const auto& pad = g.node(id);
    if (!pad.live || pad.kind != OpKind::Pad) continue;
    const int pid = pad.inputs[0];
    auto& producer = g.node(pid);
    if (!is_conv_like(producer.kind) || !producer.out_pads.is_zero() || g.is_output(pid)) continue;
    const auto edges = g.consumers(pid);
    bool uniform = !edges.empty();
    for (const auto& e : edges) {
      const auto& c = g.node(e.node);
      uniform = uniform && !e.via_base && c.kind == OpKind::Pad && c.pads == pad.pads;
    }
    if (!uniform) continue;
    producer.out_pads = pad.pads;
    std::vector<int> pads;
    for (const auto& e : edges)
      if (std::find(pads.begin(), pads.end(), e.node) == pads.end()) pads.push_back(e.node);
    for (int p : pads) {
      g.remove(p);
      g.replace_uses(p, pid);
      ++rep.removed;
    }
    ++rep.rewritten;
  }
  return rep;
}

// Runs the enabled passes in their fixed order: addition, linear, activation,
// padding. Every pass is followed by a structural check.
inline std::vector<PassReport> optimize(IRGraph& g, WeightStore& w, const PassOptions& opts = {}) {
  std::vector<PassReport> reports;
  auto run = [&](bool enabled, auto&& pass, const char* name) {
    if (!enabled) {
      reports.push_back({name, 0, 0});
      return;
    }
    reports.push_back(pass());
    g.check();
  };
  run(opts.fuse_addition, [&] { return fuse_addition(g); }, "fuse-addition");
  run(opts.fold_linear, [&] { return fold_linear(g, w); }, "fold-linear");
  run(opts.fuse_activation, [&] { return fuse_activation(g); }, "fuse-activation");
  run(opts.eliminate_padding, [&] { return eliminate_padding(g); }, "eliminate-padding");
  return reports;
}

inline std::string format_report(const std::vector<PassReport>& reports) {
  std::string out;
  for (const auto& r : reports)
    out += r.pass + ": removed " + std::to_string(r.removed) + ", rewritten " +
           std::to_string(r.rewritten) + "\n";
  return out;
}

}  // namespace voxfuse
