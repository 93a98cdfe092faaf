#pragma once

#include <string>
#include <vector>

#include "voxfuse/binary_io.hpp"
#include "voxfuse/plan.hpp"
#include "voxfuse/weights.hpp"

namespace voxfuse {

// PZNP plan files: magic "PZNP", u32 version, plan options, the output
// footprint, the optimized graph (removed nodes included so ids stay
// stable), the schedule and arena size, then the folded weights as an
// embedded PZNW image. Same little-endian conventions as PZNW.
inline constexpr std::uint32_t kPlanVersion = 1;

namespace detail {

inline void put_dim3(io::ByteWriter& w, Dim3 d) {
  w.i32(d.x);
  w.i32(d.y);
  w.i32(d.z);
}
inline Dim3 get_dim3(io::ByteReader& r) {
  Dim3 d;
  d.x = r.i32();
  d.y = r.i32();
  d.z = r.i32();
  return d;
}
inline void put_shape(io::ByteWriter& w, const Shape5& s) {
  for (auto v : s.dims()) w.i64(v);
}
inline Shape5 get_shape(io::ByteReader& r) {
  Shape5 s;
  s.b = r.i64();
  s.f = r.i64();
  s.x = r.i64();
  s.y = r.i64();
  s.z = r.i64();
  return s;
}

inline void put_params(io::ByteWriter& w, const LayerParams& p) {
  put_shape(w, p.input_shape);
  w.i32(p.num_output);
  put_dim3(w, p.kernel);
  put_dim3(w, p.stride);
  put_dim3(w, p.pad);
  w.u8(p.bias_term);
  w.u8(static_cast<std::uint8_t>(p.pool));
  w.u8(static_cast<std::uint8_t>(p.eltwise));
  w.f32(p.elu_alpha);
  w.u8(p.bn_eps.has_value());
  w.f32(p.bn_eps.value_or(0.0f));
}

inline LayerParams get_params(io::ByteReader& r) {
  LayerParams p;
  p.input_shape = get_shape(r);
  p.num_output = r.i32();
  p.kernel = get_dim3(r);
  p.stride = get_dim3(r);
  p.pad = get_dim3(r);
  p.bias_term = r.u8() != 0;
  const auto pool = r.u8();
  const auto elt = r.u8();
  if (pool > 1 || elt > 2) throw Error(ErrorKind::Format, "bad pooling or eltwise mode");
  p.pool = static_cast<PoolMode>(pool);
  p.eltwise = static_cast<EltwiseOp>(elt);
  p.elu_alpha = r.f32();
  const bool has_eps = r.u8() != 0;
  const float eps = r.f32();
  if (has_eps) p.bn_eps = eps;
  return p;
}

inline OpKind get_kind(io::ByteReader& r) {
  const auto k = r.u8();
  if (k > static_cast<std::uint8_t>(OpKind::Pad))
    throw Error(ErrorKind::Format, "unknown node kind " + std::to_string(k));
  return static_cast<OpKind>(k);
}

}  // namespace detail

inline std::vector<std::uint8_t> save_plan(const ExecutionPlan& p) {
  io::ByteWriter w;
  w.magic("PZNP");
  w.u32(kPlanVersion);
  w.u32(static_cast<std::uint32_t>(p.options.simd.lanes()));
  detail::put_dim3(w, p.options.patch);
  for (int d = 0; d < 3; ++d) {
    w.f64(p.footprint.lo[d]);
    w.f64(p.footprint.hi[d]);
    w.f64(p.footprint.scale[d]);
    w.f64(p.footprint.alignment[d]);
  }
  w.u8(p.footprint.padded);

  const auto& g = p.graph;
  w.u32(static_cast<std::uint32_t>(g.nodes.size()));
  for (const auto& n : g.nodes) {
    w.str(n.name);
    w.u8(static_cast<std::uint8_t>(n.kind));
    w.u8(n.live);
    detail::put_shape(w, n.shape);
    w.u32(static_cast<std::uint32_t>(n.inputs.size()));
    for (int i : n.inputs) w.i32(i);
    w.i32(n.base);
    w.u8(n.additive);
    w.u8(n.activation.has_value());
    w.u8(static_cast<std::uint8_t>(n.activation ? n.activation->kind : OpKind::ReLU));
    w.f32(n.activation ? n.activation->alpha : 0.0f);
    detail::put_dim3(w, n.pads);
    detail::put_dim3(w, n.out_pads);
    detail::put_params(w, n.params);
  }
  auto put_ids = [&](const std::vector<int>& ids) {
    w.u32(static_cast<std::uint32_t>(ids.size()));
    for (int i : ids) w.i32(i);
  };
  put_ids(g.inputs);
  put_ids(g.outputs);
  std::vector<int> schedule;
  for (const auto& st : p.steps) schedule.push_back(st.node);
  put_ids(schedule);
  w.u32(static_cast<std::uint32_t>(p.slots.size()));
  w.i64(p.arena_floats);
  const auto weights = save_weights(p.weights);
  w.u32(static_cast<std::uint32_t>(weights.size()));
  w.bytes(weights);
  return w.take();
}

inline ExecutionPlan load_plan(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  r.set_context("plan header");
  r.expect_magic("PZNP");
  if (const auto v = r.u32(); v != kPlanVersion)
    throw Error(ErrorKind::Format, "unsupported plan version " + std::to_string(v));
  PlanOptions opts;
  const auto lanes = r.u32();
  if (lanes == 0 || lanes > 16 || (lanes & (lanes - 1)) != 0)
    throw Error(ErrorKind::Format, "bad SIMD width " + std::to_string(lanes));
  opts.simd = SimdWidth(static_cast<int>(lanes));
  opts.patch = detail::get_dim3(r);
  Footprint fp;
  for (int d = 0; d < 3; ++d) {
    fp.lo[d] = r.f64();
    fp.hi[d] = r.f64();
    fp.scale[d] = r.f64();
    fp.alignment[d] = r.f64();
  }
  fp.padded = r.u8() != 0;

  IRGraph g;
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    r.set_context("plan node #" + std::to_string(i));
    IRNode n;
    n.name = r.str();
    n.kind = detail::get_kind(r);
    n.live = r.u8() != 0;
    n.shape = detail::get_shape(r);
    const auto nin = r.u32();
    if (nin > count) throw Error(ErrorKind::Format, "node '" + n.name + "' has too many inputs");
    for (std::uint32_t k = 0; k < nin; ++k) n.inputs.push_back(r.i32());
    n.base = r.i32();
    n.additive = r.u8() != 0;
    const bool has_act = r.u8() != 0;
    const OpKind ak = detail::get_kind(r);
    const float alpha = r.f32();
    if (has_act) n.activation = Activation{ak, alpha};
    n.pads = detail::get_dim3(r);
    n.out_pads = detail::get_dim3(r);
    n.params = detail::get_params(r);
    g.add(std::move(n));
  }
  r.set_context("plan schedule");
  auto get_ids = [&] {
    const auto k = r.u32();
    if (k > count + 1) throw Error(ErrorKind::Format, "id list longer than the graph");
    std::vector<int> ids;
    for (std::uint32_t i = 0; i < k; ++i) {
      const int id = r.i32();
      if (id < 0 || id >= static_cast<int>(count)) throw Error(ErrorKind::Format, "node id out of range");
      ids.push_back(id);
    }
    return ids;
  };
  g.inputs = get_ids();
  g.outputs = get_ids();
  const auto schedule = get_ids();
  const auto slots = r.u32();
  const auto arena = r.i64();
  for (const auto& n : g.nodes) {
    for (int i : n.inputs)
      if (i < 0 || i >= static_cast<int>(count)) throw Error(ErrorKind::Format, "node input out of range");
    if (n.base >= static_cast<int>(count)) throw Error(ErrorKind::Format, "base operand out of range");
  }
  r.set_context("plan weights");
  const auto wlen = r.u32();
  const WeightStore weights = load_weights(r.bytes(wlen));
  if (r.remaining() != 0) throw Error(ErrorKind::Format, "trailing bytes after plan");

  ExecutionPlan p;
  try {
    p = plan(std::move(g), weights, opts);
  } catch (const Error& e) {
    throw Error(ErrorKind::Format, "plan graph is inconsistent: " + std::string(e.what()));
  }
  p.footprint = fp;
  std::vector<int> replay;
  for (const auto& st : p.steps) replay.push_back(st.node);
  if (replay != schedule || p.slots.size() != slots || p.arena_floats != arena)
    throw Error(ErrorKind::Format, "stored schedule does not match the graph");
  return p;
}

inline void save_plan_file(const std::string& path, const ExecutionPlan& p) {
  io::write_file(path, save_plan(p));
}

inline ExecutionPlan load_plan_file(const std::string& path) { return load_plan(io::read_file(path)); }

}  // namespace voxfuse
