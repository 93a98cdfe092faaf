#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "voxfuse/network.hpp"
#include "voxfuse/tensor.hpp"
#include "voxfuse/weights.hpp"

// Naive standard-layout implementations of every layer. Deliberately
// unblocked and unfused; accumulates in double.
namespace voxfuse::reference {

namespace detail {

struct Dims5 {
  std::int64_t n[5];

  explicit Dims5(const StandardTensor& t) {
    if (t.rank() != 5) throw Error(ErrorKind::Shape, "reference ops take 5-D tensors");
    for (int i = 0; i < 5; ++i) n[i] = t.dims()[static_cast<std::size_t>(i)];
  }
  std::size_t operator()(std::int64_t a, std::int64_t b, std::int64_t c, std::int64_t d,
                         std::int64_t e) const {
    return static_cast<std::size_t>(((((a * n[1]) + b) * n[2] + c) * n[3] + d) * n[4] + e);
  }
};

inline StandardTensor make(std::int64_t a, std::int64_t b, std::int64_t c, std::int64_t d,
                           std::int64_t e) {
  return StandardTensor(std::vector<std::int64_t>{a, b, c, d, e});
}

inline float bias_at(std::span<const float> bias, std::int64_t m) {
  return bias.empty() ? 0.0f : bias[static_cast<std::size_t>(m)];
}

}  // namespace detail

inline StandardTensor zero_pad(const StandardTensor& in, Dim3 pad) {
  const detail::Dims5 di(in);
  auto out = detail::make(di.n[0], di.n[1], di.n[2] + 2 * pad.x, di.n[3] + 2 * pad.y,
                          di.n[4] + 2 * pad.z);
  const detail::Dims5 dout(out);
  const auto src = in.data();
  auto dst = out.data();
  for (std::int64_t b = 0; b < di.n[0]; ++b)
    for (std::int64_t f = 0; f < di.n[1]; ++f)
      for (std::int64_t x = 0; x < di.n[2]; ++x)
        for (std::int64_t y = 0; y < di.n[3]; ++y)
          for (std::int64_t z = 0; z < di.n[4]; ++z)
            dst[dout(b, f, x + pad.x, y + pad.y, z + pad.z)] = src[di(b, f, x, y, z)];
  return out;
}

// Cross-correlation; kernel is (F_out, F_in, kx, ky, kz).
inline StandardTensor ref_conv3d(const StandardTensor& input, const StandardTensor& kernel,
                                 std::span<const float> bias, Dim3 stride, Dim3 pad) {
  const StandardTensor in = zero_pad(input, pad);
  const detail::Dims5 di(in), dk(kernel);
  if (dk.n[1] != di.n[1]) throw Error(ErrorKind::Shape, "kernel input featuremaps mismatch");
  std::int64_t o[3];
  for (int d = 0; d < 3; ++d) {
    if (di.n[2 + d] < dk.n[2 + d]) throw Error(ErrorKind::Shape, "input smaller than kernel");
    o[d] = (di.n[2 + d] - dk.n[2 + d]) / stride[d] + 1;
  }
  auto out = detail::make(di.n[0], dk.n[0], o[0], o[1], o[2]);
  const detail::Dims5 dout(out);
  const auto I = in.data();
  const auto K = kernel.data();
  auto O = out.data();
  for (std::int64_t b = 0; b < di.n[0]; ++b)
    for (std::int64_t m = 0; m < dk.n[0]; ++m)
      for (std::int64_t x = 0; x < o[0]; ++x)
        for (std::int64_t y = 0; y < o[1]; ++y)
          for (std::int64_t z = 0; z < o[2]; ++z) {
            double acc = detail::bias_at(bias, m);
            for (std::int64_t n = 0; n < dk.n[1]; ++n)
              for (std::int64_t i = 0; i < dk.n[2]; ++i)
                for (std::int64_t j = 0; j < dk.n[3]; ++j)
                  for (std::int64_t k = 0; k < dk.n[4]; ++k)
                    acc += double{I[di(b, n, x * stride.x + i, y * stride.y + j, z * stride.z + k)]} *
                           double{K[dk(m, n, i, j, k)]};
            O[dout(b, m, x, y, z)] = static_cast<float>(acc);
          }
  return out;
}

// Transposed convolution by scattering every input voxel, then cropping
// `pad` from each side. Kernel is (F_out, F_in, kx, ky, kz).
inline StandardTensor ref_deconv3d(const StandardTensor& input, const StandardTensor& kernel,
                                   std::span<const float> bias, Dim3 stride, Dim3 pad) {
  const detail::Dims5 di(input), dk(kernel);
  if (dk.n[1] != di.n[1]) throw Error(ErrorKind::Shape, "kernel input featuremaps mismatch");
  std::int64_t full[3], o[3];
  for (int d = 0; d < 3; ++d) {
    full[d] = (di.n[2 + d] - 1) * stride[d] + dk.n[2 + d];
    o[d] = full[d] - 2 * pad[d];
    if (o[d] <= 0) throw Error(ErrorKind::Shape, "deconvolution crops everything");
  }
  std::vector<double> acc(static_cast<std::size_t>(di.n[0] * dk.n[0] * full[0] * full[1] * full[2]));
  auto at = [&](std::int64_t b, std::int64_t m, std::int64_t x, std::int64_t y, std::int64_t z) -> double& {
    return acc[static_cast<std::size_t>((((b * dk.n[0] + m) * full[0] + x) * full[1] + y) * full[2] + z)];
  };
  const auto I = input.data();
  const auto K = kernel.data();
  for (std::int64_t b = 0; b < di.n[0]; ++b)
    for (std::int64_t n = 0; n < di.n[1]; ++n)
      for (std::int64_t x = 0; x < di.n[2]; ++x)
        for (std::int64_t y = 0; y < di.n[3]; ++y)
          for (std::int64_t z = 0; z < di.n[4]; ++z) {
            const double v = I[di(b, n, x, y, z)];
            for (std::int64_t m = 0; m < dk.n[0]; ++m)
              for (std::int64_t i = 0; i < dk.n[2]; ++i)
                for (std::int64_t j = 0; j < dk.n[3]; ++j)
                  for (std::int64_t k = 0; k < dk.n[4]; ++k)
                    at(b, m, x * stride.x + i, y * stride.y + j, z * stride.z + k) +=
                        v * double{K[dk(m, n, i, j, k)]};
          }
  auto out = detail::make(di.n[0], dk.n[0], o[0], o[1], o[2]);
  const detail::Dims5 dout(out);
  auto O = out.data();
  for (std::int64_t b = 0; b < di.n[0]; ++b)
    for (std::int64_t m = 0; m < dk.n[0]; ++m)
      for (std::int64_t x = 0; x < o[0]; ++x)
        for (std::int64_t y = 0; y < o[1]; ++y)
          for (std::int64_t z = 0; z < o[2]; ++z)
            O[dout(b, m, x, y, z)] = static_cast<float>(
                at(b, m, x + pad.x, y + pad.y, z + pad.z) + detail::bias_at(bias, m));
  return out;
}

inline StandardTensor ref_pool(const StandardTensor& input, Dim3 window, Dim3 stride, PoolMode mode) {
  const detail::Dims5 di(input);
  std::int64_t o[3];
  for (int d = 0; d < 3; ++d) {
    if (window[d] > di.n[2 + d]) throw Error(ErrorKind::Shape, "pooling window exceeds input");
    o[d] = (di.n[2 + d] - window[d]) / stride[d] + 1;
  }
  auto out = detail::make(di.n[0], di.n[1], o[0], o[1], o[2]);
  const detail::Dims5 dout(out);
  const auto I = input.data();
  auto O = out.data();
  for (std::int64_t b = 0; b < di.n[0]; ++b)
    for (std::int64_t f = 0; f < di.n[1]; ++f)
      for (std::int64_t x = 0; x < o[0]; ++x)
        for (std::int64_t y = 0; y < o[1]; ++y)
          for (std::int64_t z = 0; z < o[2]; ++z) {
            float best = -std::numeric_limits<float>::infinity();
            double sum = 0.0;
            for (int i = 0; i < window.x; ++i)
              for (int j = 0; j < window.y; ++j)
                for (int k = 0; k < window.z; ++k) {
                  const float v = I[di(b, f, x * stride.x + i, y * stride.y + j, z * stride.z + k)];
                  best = std::max(best, v);
                  sum += v;
                }
            O[dout(b, f, x, y, z)] =
                mode == PoolMode::Max ? best : static_cast<float>(sum / static_cast<double>(window.volume()));
          }
  return out;
}

inline StandardTensor ref_eltwise(const StandardTensor& a, const StandardTensor& b, EltwiseOp op) {
  if (a.dims() != b.dims()) throw Error(ErrorKind::Shape, "eltwise operand shapes differ");
  StandardTensor out(a.dims());
  const auto A = a.data();
  const auto B = b.data();
  auto O = out.data();
  for (std::size_t i = 0; i < O.size(); ++i) {
    switch (op) {
      case EltwiseOp::Sum: O[i] = A[i] + B[i]; break;
      case EltwiseOp::Product: O[i] = A[i] * B[i]; break;
      case EltwiseOp::Division: O[i] = A[i] / B[i]; break;
    }
  }
  return out;
}

// Concatenates featuremaps (a first) after centre-cropping the spatially
// larger operand to the smaller one.
inline StandardTensor ref_mergecrop(const StandardTensor& a, const StandardTensor& b) {
  const detail::Dims5 da(a), db(b);
  if (da.n[0] != db.n[0]) throw Error(ErrorKind::Shape, "mergecrop batch mismatch");
  bool a_big = true, b_big = true;
  for (int d = 2; d < 5; ++d) {
    a_big = a_big && da.n[d] >= db.n[d];
    b_big = b_big && db.n[d] >= da.n[d];
  }
  if (!a_big && !b_big) throw Error(ErrorKind::Shape, "neither mergecrop input contains the other");
  std::int64_t o[3];
  for (int d = 0; d < 3; ++d) o[d] = std::min(da.n[2 + d], db.n[2 + d]);
  auto out = detail::make(da.n[0], da.n[1] + db.n[1], o[0], o[1], o[2]);
  const detail::Dims5 dout(out);
  auto O = out.data();
  auto copy = [&](const StandardTensor& src, const detail::Dims5& ds, std::int64_t f0) {
    const std::int64_t ox = (ds.n[2] - o[0]) / 2, oy = (ds.n[3] - o[1]) / 2, oz = (ds.n[4] - o[2]) / 2;
    const auto S = src.data();
    for (std::int64_t bb = 0; bb < ds.n[0]; ++bb)
      for (std::int64_t f = 0; f < ds.n[1]; ++f)
        for (std::int64_t x = 0; x < o[0]; ++x)
          for (std::int64_t y = 0; y < o[1]; ++y)
            for (std::int64_t z = 0; z < o[2]; ++z)
              O[dout(bb, f0 + f, x, y, z)] = S[ds(bb, f, x + ox, y + oy, z + oz)];
  };
  copy(a, da, 0);
  copy(b, db, da.n[1]);
  return out;
}

inline StandardTensor ref_bn(const StandardTensor& in, std::span<const float> mean,
                             std::span<const float> var, double eps) {
  const detail::Dims5 d(in);
  StandardTensor out(in.dims());
  const auto I = in.data();
  auto O = out.data();
  for (std::int64_t b = 0; b < d.n[0]; ++b)
    for (std::int64_t f = 0; f < d.n[1]; ++f) {
      const double sd = std::sqrt(double{var[static_cast<std::size_t>(f)]} + eps);
      for (std::int64_t x = 0; x < d.n[2]; ++x)
        for (std::int64_t y = 0; y < d.n[3]; ++y)
          for (std::int64_t z = 0; z < d.n[4]; ++z) {
            const auto i = d(b, f, x, y, z);
            O[i] = static_cast<float>((I[i] - double{mean[static_cast<std::size_t>(f)]}) / sd);
          }
    }
  return out;
}

inline StandardTensor ref_scale(const StandardTensor& in, std::span<const float> gamma,
                                std::span<const float> beta) {
  const detail::Dims5 d(in);
  StandardTensor out(in.dims());
  const auto I = in.data();
  auto O = out.data();
  for (std::int64_t b = 0; b < d.n[0]; ++b)
    for (std::int64_t f = 0; f < d.n[1]; ++f)
      for (std::int64_t x = 0; x < d.n[2]; ++x)
        for (std::int64_t y = 0; y < d.n[3]; ++y)
          for (std::int64_t z = 0; z < d.n[4]; ++z) {
            const auto i = d(b, f, x, y, z);
            const double g = gamma[static_cast<std::size_t>(f)];
            const double bt = beta.empty() ? 0.0 : beta[static_cast<std::size_t>(f)];
            O[i] = static_cast<float>(I[i] * g + bt);
          }
  return out;
}

inline float ref_activation_value(OpKind kind, float x, float alpha = 1.0f) {
  switch (kind) {
    case OpKind::ReLU: return std::max(0.0f, x);
    case OpKind::ELU: return x > 0 ? x : static_cast<float>(alpha * (std::exp(double{x}) - 1.0));
    case OpKind::Sigmoid: return static_cast<float>(1.0 / (1.0 + std::exp(-double{x})));
    default: throw Error(ErrorKind::Internal, "not an activation");
  }
}

inline StandardTensor ref_activation(const StandardTensor& in, OpKind kind, float alpha = 1.0f) {
  StandardTensor out(in.dims());
  const auto I = in.data();
  auto O = out.data();
  for (std::size_t i = 0; i < I.size(); ++i) O[i] = ref_activation_value(kind, I[i], alpha);
  return out;
}

// Runs the network layer by layer; returns the tensors of all output blobs.
inline std::vector<StandardTensor> ref_run(const NetworkSpec& spec, const WeightStore& w,
                                           const std::vector<StandardTensor>& inputs) {
  const auto order = validate_graph(spec);
  std::map<std::string, StandardTensor> blobs;
  std::size_t next_input = 0;
  auto span_of = [&](const std::string& layer, std::string_view r) -> std::span<const float> {
    const auto* t = w.find(layer, r);
    return t ? t->data() : std::span<const float>{};
  };
  for (int li : order) {
    const auto& l = spec.layers[static_cast<std::size_t>(li)];
    const auto& p = l.params;
    auto arg = [&](std::size_t i) -> const StandardTensor& { return blobs.at(l.bottoms.at(i)); };
    StandardTensor out;
    switch (l.kind) {
      case OpKind::Input:
        if (next_input >= inputs.size()) throw Error(ErrorKind::Shape, "not enough inputs");
        out = inputs[next_input++];
        if (out.shape5() != p.input_shape)
          throw Error(ErrorKind::Shape, "input shape " + out.shape5().str() + " differs from declared " +
                                            p.input_shape.str());
        break;
      case OpKind::Convolution:
        out = ref_conv3d(arg(0), w.get(l.name, role::kKernel),
                         p.bias_term ? span_of(l.name, role::kBias) : std::span<const float>{},
                         p.stride, p.pad);
        break;
      case OpKind::Deconvolution:
        out = ref_deconv3d(arg(0), w.get(l.name, role::kKernel),
                           p.bias_term ? span_of(l.name, role::kBias) : std::span<const float>{},
                           p.stride, p.pad);
        break;
      case OpKind::BatchNorm: {
        double eps = p.bn_eps.value_or(1e-5f);
        if (const auto* e = w.find(l.name, role::kBnEps)) eps = e->data()[0];
        out = ref_bn(arg(0), w.get(l.name, role::kBnMean).data(), w.get(l.name, role::kBnVar).data(), eps);
        break;
      }
      case OpKind::Scale:
        out = ref_scale(arg(0), w.get(l.name, role::kScaleGamma).data(), span_of(l.name, role::kScaleBeta));
        break;
      case OpKind::ReLU:
      case OpKind::ELU:
      case OpKind::Sigmoid:
        out = ref_activation(arg(0), l.kind, p.elu_alpha);
        break;
      case OpKind::Eltwise:
        out = ref_eltwise(arg(0), arg(1), p.eltwise);
        break;
      case OpKind::MergeCrop:
        out = ref_mergecrop(arg(0), arg(1));
        break;
      case OpKind::Pooling:
        out = ref_pool(arg(0), p.kernel, p.stride, p.pool);
        break;
      case OpKind::Pad:
        out = zero_pad(arg(0), p.pad);
        break;
    }
    for (const auto& t : l.tops) blobs[t] = out;
  }
  std::vector<StandardTensor> outs;
  for (const auto& b : spec.output_blobs()) outs.push_back(blobs.at(b));
  return outs;
}

inline StandardTensor ref_run(const NetworkSpec& spec, const WeightStore& w, const StandardTensor& input) {
  return ref_run(spec, w, std::vector<StandardTensor>{input}).at(0);
}

}  // namespace voxfuse::reference
