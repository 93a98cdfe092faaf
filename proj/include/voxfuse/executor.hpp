#pragma once

#include <chrono>
#include <span>
#include <string>
#include <vector>

#include "voxfuse/kernels.hpp"
#include "voxfuse/plan.hpp"

namespace voxfuse {

// Private arena for running one plan; a plan may be shared by several
// sessions on different threads.
class Session {
 public:
  explicit Session(const ExecutionPlan& plan)
      : plan_(&plan), arena_(static_cast<std::size_t>(plan.arena_floats)) {}

  const ExecutionPlan& plan() const noexcept { return *plan_; }
  // Completed executions of the plan.
  std::int64_t runs() const noexcept { return runs_; }

  std::vector<StandardTensor> run(std::span<const StandardTensor> inputs) {
    const auto& p = *plan_;
    if (inputs.size() != p.input_values.size())
      throw Error(ErrorKind::Shape, "plan expects " + std::to_string(p.input_values.size()) +
                                        " inputs, got " + std::to_string(inputs.size()));
    for (std::size_t i = 0; i < inputs.size(); ++i) store_input(p.input_values[i], inputs[i]);
    for (std::size_t i = 0; i < p.steps.size(); ++i) {
      if (!profile_) {
        run_step(p.steps[i]);
        continue;
      }
      const auto t0 = std::chrono::steady_clock::now();
      run_step(p.steps[i]);
      (*profile_)[i] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
    std::vector<StandardTensor> out;
    for (int v : p.output_values) out.push_back(load_value(v));
    ++runs_;
    return out;
  }

  StandardTensor run(const StandardTensor& input) { return run(std::span(&input, 1)).at(0); }

  // Like run, but also records the wall time of every step in seconds.
  std::vector<StandardTensor> run_profiled(std::span<const StandardTensor> inputs,
                                           std::vector<double>& step_seconds) {
    step_seconds.assign(plan_->steps.size(), 0.0);
    profile_ = &step_seconds;
    try {
      auto out = run(inputs);
      profile_ = nullptr;
      return out;
    } catch (...) {
      profile_ = nullptr;
      throw;
    }
  }

  // Reads any value of the last run (standard layout).
  StandardTensor load_value(int vid) const {
    const auto& v = plan_->values.at(vid);
    const auto r = cref(vid, v.write_desc);
    const int s = r.simd;
    StandardTensor t(v.shape);
    auto d = t.data();
    std::size_t k = 0;
    for (std::int64_t b = 0; b < v.shape.b; ++b)
      for (std::int64_t f = 0; f < v.shape.f; ++f)
        for (std::int64_t x = 0; x < v.shape.x; ++x)
          for (std::int64_t y = 0; y < v.shape.y; ++y)
            for (std::int64_t z = 0; z < v.shape.z; ++z)
              d[k++] = r.group_ptr(b, f / s, x, y, z)[f % s];
    return t;
  }

  // True if every padded slot still has an all-zero halo.
  bool halos_zero() const {
    const auto& p = *plan_;
    const int s = p.simd();
    for (const auto& sl : p.slots) {
      if (!sl.padded()) continue;
      const float* base = arena_.data() + sl.offset;
      const auto& a = sl.allocated;
      for (std::int64_t i = 0; i < a[0] * a[1]; ++i)
        for (std::int64_t x = 0; x < a[2]; ++x)
          for (std::int64_t y = 0; y < a[3]; ++y)
            for (std::int64_t z = 0; z < a[4]; ++z) {
              const bool interior = x >= sl.pads.x && x < a[2] - sl.pads.x && y >= sl.pads.y &&
                                    y < a[3] - sl.pads.y && z >= sl.pads.z &&
                                    z < a[4] - sl.pads.z;
              if (interior) continue;
              const float* g = base + (((i * a[2] + x) * a[3] + y) * a[4] + z) * s;
              for (int l = 0; l < s; ++l)
                if (g[l] != 0.0f) return false;
            }
    }
    return true;
  }

 private:
  float* slot_ptr(int vid) { return arena_.data() + plan_->slots[plan_->values[vid].slot].offset; }
  const float* slot_ptr(int vid) const {
    return arena_.data() + plan_->slots[plan_->values[vid].slot].offset;
  }
  TensorRef ref(int vid) {
    return {slot_ptr(vid), plan_->values[vid].write_desc, plan_->simd()};
  }
  ConstTensorRef cref(int vid, const LayoutDescriptor& d) const {
    return {slot_ptr(vid), d, plan_->simd()};
  }
  ConstTensorRef in(int vid) const { return cref(vid, plan_->values[vid].read_desc); }

  void store_input(int vid, const StandardTensor& t) {
    const auto& v = plan_->values[vid];
    if (t.shape5() != v.shape)
      throw Error(ErrorKind::Shape, "input shape " + t.shape5().str() + " does not match plan input " +
                                        v.shape.str());
    const auto r = ref(vid);
    const int s = r.simd;
    const auto src = t.data();
    const Shape5 sh = v.shape;
    for (std::int64_t b = 0; b < v.shape.b; ++b)
      for (std::int64_t fb = 0; fb < r.desc.dims[1]; ++fb)
        for (std::int64_t x = 0; x < v.shape.x; ++x)
          for (std::int64_t y = 0; y < v.shape.y; ++y)
            for (std::int64_t z = 0; z < v.shape.z; ++z) {
              float* g = r.group_ptr(b, fb, x, y, z);
              for (int l = 0; l < s; ++l) {
                const std::int64_t f = fb * s + l;
                g[l] = f < sh.f ? src[static_cast<std::size_t>((((b * sh.f + f) * sh.x + x) * sh.y + y) * sh.z + z)]
                                : 0.0f;
              }
            }
  }

  void run_step(const PlanStep& st) {
    const auto& prm = st.params;
    switch (st.kind) {
      case OpKind::Convolution: {
        ConvInvocation inv;
        inv.input = in(st.inputs[0]);
        inv.kernel = &st.kernel;
        inv.bias = st.bias.span();
        if (st.base >= 0) {
          inv.base = cref(st.base, plan_->values[st.base].write_desc);
          inv.additive = true;
          inv.base_scale = st.base_scale.span();
        }
        inv.activation = st.activation;
        inv.stride = prm.stride;
        inv.output = ref(st.output);
        inv.patch = plan_->options.patch;
        conv3d(inv);
        break;
      }
      case OpKind::Deconvolution: {
        DeconvInvocation inv{in(st.inputs[0]), &st.kernel, st.bias.span(), prm.stride, prm.pad,
                             st.activation, ref(st.output)};
        deconv3d(inv);
        break;
      }
      case OpKind::BatchNorm:
      case OpKind::Scale:
        standalone_linear(in(st.inputs[0]), ref(st.output), st.mul.span(), st.add.span());
        break;
      case OpKind::ReLU:
      case OpKind::ELU:
      case OpKind::Sigmoid:
        standalone_activation(in(st.inputs[0]), ref(st.output), Activation{st.kind, prm.elu_alpha});
        break;
      case OpKind::Eltwise:
        eltwise(in(st.inputs[0]), in(st.inputs[1]), ref(st.output), prm.eltwise);
        break;
      case OpKind::MergeCrop:
        mergecrop(in(st.inputs[0]), in(st.inputs[1]), ref(st.output));
        break;
      case OpKind::Pooling:
        pool(in(st.inputs[0]), ref(st.output), prm.kernel, prm.stride, prm.pool);
        break;
      case OpKind::Pad:
        pad(in(st.inputs[0]), ref(st.output), st.pads);
        break;
      case OpKind::Input:
        break;
    }
  }

  const ExecutionPlan* plan_;
  AlignedBuffer arena_;
  std::vector<double>* profile_ = nullptr;
  std::int64_t runs_ = 0;
};

inline std::vector<StandardTensor> execute(const ExecutionPlan& plan,
                                           std::span<const StandardTensor> inputs) {
  Session s(plan);
  return s.run(inputs);
}

inline StandardTensor execute(const ExecutionPlan& plan, const StandardTensor& input) {
  Session s(plan);
  return s.run(input);
}

}  // namespace voxfuse
