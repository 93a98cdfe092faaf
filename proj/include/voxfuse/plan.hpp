#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "voxfuse/ir.hpp"
#include "voxfuse/kernels.hpp"
#include "voxfuse/passes.hpp"
#include "voxfuse/shapes.hpp"
#include "voxfuse/weights.hpp"

namespace voxfuse {

struct PlanOptions {
  SimdWidth simd = SimdWidth::native();
  Dim3 patch{4, 4, 16};
};

// One region of the arena. Padded slots keep a zero halo and are only ever
// shared by values with the same allocation and padding.
struct BufferSlot {
  std::array<std::int64_t, 5> allocated{};
  Dim3 pads{};
  std::int64_t floats = 0;
  std::int64_t offset = 0;  // floats from the arena start, 64-byte aligned

  bool padded() const noexcept { return !pads.is_zero(); }
};

struct PlanValue {
  int node = -1;
  Shape5 shape;
  Dim3 pads{};
  int slot = -1;
  LayoutDescriptor write_desc;  // where the producer stores (padded view if pads)
  LayoutDescriptor read_desc;   // what consumers see (dense over the allocation)
  int first_step = -1;          // producing step, -1 for network inputs
  int last_step = -1;           // last reading step, -1 if never read
};

struct PlanStep {
  int node = -1;
  OpKind kind = OpKind::Input;
  std::string name;
  std::vector<int> inputs;  // value ids
  int base = -1;            // value id of the fused addition operand
  int output = -1;
  LayerParams params;
  std::optional<Activation> activation;
  Dim3 pads{};

  PackedKernel kernel;
  AlignedBuffer bias;
  AlignedBuffer base_scale;
  AlignedBuffer mul;
  AlignedBuffer add;
};

class ExecutionPlan {
 public:
  IRGraph graph;
  WeightStore weights;  // folded, restricted to live nodes
  PlanOptions options;
  Footprint footprint;

  std::vector<PlanValue> values;
  std::vector<int> value_of_node;
  std::vector<BufferSlot> slots;
  std::vector<PlanStep> steps;
  std::vector<int> input_values;
  std::vector<int> output_values;
  std::int64_t arena_floats = 0;

  int simd() const { return options.simd.lanes(); }
  Shape5 input_shape(std::size_t i = 0) const { return values.at(input_values.at(i)).shape; }
  Shape5 output_shape(std::size_t i = 0) const { return values.at(output_values.at(i)).shape; }
  std::size_t buffer_count() const { return slots.size(); }
};

namespace detail {

inline std::int64_t slot_floats(const std::array<std::int64_t, 5>& allocated, int simd) {
  std::int64_t n = simd;
  for (auto d : allocated) n *= d;
  return n;
}

inline void prepare_weights(PlanStep& st, const IRNode& n, const WeightStore& w, SimdWidth s) {
  const int lanes = s.lanes();
  if (is_conv_like(n.kind)) {
    st.kernel = PackedKernel(kernel_to_blocked(w.get(n.name, role::kKernel), s));
    const auto f = n.shape.f;
    const auto* bias = w.find(n.name, role::kBias);
    st.bias = lane_padded(bias ? bias->data() : std::span<const float>{}, f, lanes);
    if (n.additive) {
      const auto* bs = w.find(n.name, role::kBaseScale);
      st.base_scale = lane_padded(bs ? bs->data() : std::span<const float>{}, f, lanes, 1.0f);
    }
  } else if (is_linear(n.kind)) {
    const auto t = linear_transform_of(n, w);
    st.mul = lane_padded(t.mul, n.shape.f, lanes);
    st.add = lane_padded(t.add, n.shape.f, lanes);
  }
}

inline WeightStore live_weights(const IRGraph& g, const WeightStore& w) {
  WeightStore out;
  for (const auto& [key, t] : w) {
    const auto dot = key.rfind('.');
    const std::string layer = key.substr(0, dot);
    for (const auto& n : g.nodes)
      if (n.live && n.name == layer) {
        out.set(key, t);
        break;
      }
  }
  return out;
}

}  // namespace detail

// Schedules the live nodes topologically and assigns arena slots by greedy
// liveness-based reuse.
inline ExecutionPlan plan(IRGraph g, const WeightStore& w, const PlanOptions& opts = {}) {
  g.check();
  ExecutionPlan p;
  p.options = opts;
  const SimdWidth s = opts.simd;
  const int lanes = s.lanes();
  const auto order = g.topo_order();

  p.value_of_node.assign(g.nodes.size(), -1);
  for (int id : order) {
    const auto& n = g.node(id);
    PlanValue v;
    v.node = id;
    v.shape = n.shape;
    v.pads = n.out_pads;
    v.write_desc = padded_view_descriptor(n.shape, s, n.out_pads);
    v.read_desc = LayoutDescriptor::dense(n.shape.with_spatial(n.shape.spatial() + n.out_pads * 2), s);
    v.read_desc.channels = n.shape.f;
    p.value_of_node[id] = static_cast<int>(p.values.size());
    p.values.push_back(v);
  }
  for (int id : g.inputs) p.input_values.push_back(p.value_of_node.at(id));
  for (int id : g.outputs) p.output_values.push_back(p.value_of_node.at(id));

  for (int id : order) {
    const auto& n = g.node(id);
    if (n.kind == OpKind::Input) continue;
    PlanStep st;
    st.node = id;
    st.kind = n.kind;
    st.name = n.name;
    for (int i : n.inputs) st.inputs.push_back(p.value_of_node.at(i));
    if (n.base >= 0) st.base = p.value_of_node.at(n.base);
    st.output = p.value_of_node.at(id);
    st.params = n.params;
    st.activation = n.activation;
    st.pads = n.pads;
    detail::prepare_weights(st, n, w, s);
    const int step_index = static_cast<int>(p.steps.size());
    p.values[st.output].first_step = step_index;
    for (int v : st.inputs) p.values[v].last_step = step_index;
    if (st.base >= 0) p.values[st.base].last_step = step_index;
    p.steps.push_back(std::move(st));
  }

  std::vector<int> free_slots;
  auto allocate = [&](int vid) {
    auto& v = p.values[vid];
    std::array<std::int64_t, 5> allocated = v.read_desc.dims;
    const std::int64_t need = detail::slot_floats(allocated, lanes);
    int chosen = -1;
    if (!v.pads.is_zero()) {
      for (int sid : free_slots) {
        const auto& sl = p.slots[sid];
        if (sl.padded() && sl.pads == v.pads && sl.allocated == allocated) {
          chosen = sid;
          break;
        }
      }
    } else {
      for (int sid : free_slots) {
        const auto& sl = p.slots[sid];
        if (sl.padded() || sl.floats < need) continue;
        if (chosen < 0 || sl.floats < p.slots[chosen].floats) chosen = sid;
      }
      if (chosen < 0)
        for (int sid : free_slots) {
          const auto& sl = p.slots[sid];
          if (sl.padded()) continue;
          if (chosen < 0 || sl.floats > p.slots[chosen].floats) chosen = sid;
        }
    }
    if (chosen >= 0) {
      free_slots.erase(std::find(free_slots.begin(), free_slots.end(), chosen));
    } else {
      chosen = static_cast<int>(p.slots.size());
      p.slots.push_back({allocated, v.pads, 0, 0});
    }
    auto& sl = p.slots[chosen];
    sl.floats = std::max(sl.floats, need);
    if (!v.pads.is_zero()) sl.allocated = allocated;
    v.slot = chosen;
  };
  auto is_output = [&](int vid) {
    return std::find(p.output_values.begin(), p.output_values.end(), vid) != p.output_values.end();
  };

  for (int vid : p.input_values) allocate(vid);
  for (std::size_t i = 0; i < p.steps.size(); ++i) {
    const auto& st = p.steps[i];
    allocate(st.output);
    std::vector<int> reads = st.inputs;
    if (st.base >= 0) reads.push_back(st.base);
    std::sort(reads.begin(), reads.end());
    reads.erase(std::unique(reads.begin(), reads.end()), reads.end());
    for (int v : reads)
      if (p.values[v].last_step == static_cast<int>(i) && !is_output(v))
        free_slots.push_back(p.values[v].slot);
  }

  std::int64_t offset = 0;
  for (auto& sl : p.slots) {
    sl.offset = offset;
    offset += ceil_div(sl.floats, 16) * 16;
  }
  p.arena_floats = offset;
  p.weights = detail::live_weights(g, w);
  p.graph = std::move(g);
  return p;
}

struct CompileResult {
  ExecutionPlan plan;
  std::vector<PassReport> reports;
};

// Shape-checks the network against its weights, lowers it, runs the enabled
// passes and plans the result.
inline CompileResult compile(const NetworkSpec& spec, const WeightStore& weights,
                             const PassOptions& passes = {}, const PlanOptions& opts = {}) {
  const ShapedNetwork shaped = validate_shapes(spec, weights);
  IRGraph g = build_ir(shaped);
  WeightStore folded = weights;
  CompileResult r;
  r.reports = optimize(g, folded, passes);
  r.plan = plan(std::move(g), folded, opts);
  const auto outs = spec.output_blobs();
  if (!outs.empty()) r.plan.footprint = shaped.footprints.at(shaped.index_of_blob(outs.front()));
  return r;
}

// Replays the schedule and checks that every read happens after the value's
// write and before its slot is handed to another value. Returns a
// description of the first violation, or an empty string.
inline std::string check_plan_liveness(const ExecutionPlan& p) {
  std::vector<int> holder(p.slots.size(), -1);
  std::vector<char> written(p.values.size(), 0);
  for (int v : p.input_values) {
    holder[p.values[v].slot] = v;
    written[v] = 1;
  }
  for (std::size_t i = 0; i < p.steps.size(); ++i) {
    const auto& st = p.steps[i];
    std::vector<int> reads = st.inputs;
    if (st.base >= 0) reads.push_back(st.base);
    for (int v : reads) {
      if (!written[v]) return "step '" + st.name + "' reads value of node " +
                              std::to_string(p.values[v].node) + " before it is written";
      if (holder[p.values[v].slot] != v)
        return "step '" + st.name + "' reads a value whose slot was reused";
    }
    const int out_slot = p.values[st.output].slot;
    for (int v : reads)
      if (p.values[v].slot == out_slot) return "step '" + st.name + "' writes over its own input";
    holder[out_slot] = st.output;
    written[st.output] = 1;
  }
  for (int v : p.output_values)
    if (holder[p.values[v].slot] != v) return "network output overwritten";
  for (std::size_t a = 0; a < p.slots.size(); ++a)
    for (std::size_t b = a + 1; b < p.slots.size(); ++b) {
      const auto& x = p.slots[a];
      const auto& y = p.slots[b];
      if (x.offset < y.offset + y.floats && y.offset < x.offset + x.floats)
        return "slots " + std::to_string(a) + " and " + std::to_string(b) + " overlap";
    }
  return {};
}

}  // namespace voxfuse
