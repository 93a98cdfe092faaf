#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "voxfuse/executor.hpp"

namespace voxfuse {

struct BenchProtocol {
  int warmup = 10;
  int iterations = 60;

  void check() const {
    if (warmup < 0) throw Error(ErrorKind::Config, "warmup must be non-negative");
    if (iterations < 1) throw Error(ErrorKind::Config, "need at least one timed iteration");
  }
};

struct BenchStats {
  int warmup = 0;
  int iterations = 0;
  double mean_ms = 0;
  double std_ms = 0;
  double min_ms = 0;
  double max_ms = 0;
  double voxels_per_s = 0;
  std::int64_t executions = 0;  // warmup and timed runs actually performed
  std::vector<double> samples_ms;
};

inline BenchStats summarize(std::vector<double> samples_ms, int warmup, std::int64_t voxels) {
  BenchStats s;
  s.warmup = warmup;
  s.iterations = static_cast<int>(samples_ms.size());
  const double n = static_cast<double>(samples_ms.size());
  s.mean_ms = std::accumulate(samples_ms.begin(), samples_ms.end(), 0.0) / n;
  double var = 0;
  for (double v : samples_ms) var += (v - s.mean_ms) * (v - s.mean_ms);
  s.std_ms = samples_ms.size() > 1 ? std::sqrt(var / (n - 1)) : 0.0;
  s.min_ms = *std::min_element(samples_ms.begin(), samples_ms.end());
  s.max_ms = *std::max_element(samples_ms.begin(), samples_ms.end());
  s.voxels_per_s = s.mean_ms > 0 ? static_cast<double>(voxels) / (s.mean_ms * 1e-3) : 0.0;
  s.samples_ms = std::move(samples_ms);
  return s;
}

inline std::vector<StandardTensor> synthetic_inputs(const ExecutionPlan& plan, std::uint32_t seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  std::vector<StandardTensor> inputs;
  for (std::size_t i = 0; i < plan.input_values.size(); ++i) {
    StandardTensor t(plan.input_shape(i));
    for (auto& v : t.data()) v = dist(rng);
    inputs.push_back(std::move(t));
  }
  return inputs;
}

inline std::int64_t output_voxels(const ExecutionPlan& plan) {
  const Shape5 s = plan.output_shape();
  return s.b * s.x * s.y * s.z;
}

inline double time_run_ms(Session& s, const std::vector<StandardTensor>& in) {
  const auto t0 = std::chrono::steady_clock::now();
  s.run(in);
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

inline BenchStats bench(const ExecutionPlan& plan, const BenchProtocol& proto = {},
                        std::uint32_t seed = 1) {
  proto.check();
  const auto in = synthetic_inputs(plan, seed);
  Session s(plan);
  for (int i = 0; i < proto.warmup; ++i) s.run(in);
  std::vector<double> samples;
  for (int i = 0; i < proto.iterations; ++i) samples.push_back(time_run_ms(s, in));
  auto stats = summarize(std::move(samples), proto.warmup, output_voxels(plan));
  stats.executions = s.runs();
  return stats;
}

// Runs both plans under the same protocol with their iterations interleaved,
// so that slow drifts of the machine affect both equally.
inline std::pair<BenchStats, BenchStats> bench_paired(const ExecutionPlan& a, const ExecutionPlan& b,
                                                      const BenchProtocol& proto = {},
                                                      std::uint32_t seed = 1) {
  proto.check();
  const auto in_a = synthetic_inputs(a, seed);
  const auto in_b = synthetic_inputs(b, seed);
  Session sa(a), sb(b);
  for (int i = 0; i < proto.warmup; ++i) {
    sa.run(in_a);
    sb.run(in_b);
  }
  std::vector<double> ta, tb;
  for (int i = 0; i < proto.iterations; ++i) {
    if (i % 2 == 0) {
      ta.push_back(time_run_ms(sa, in_a));
      tb.push_back(time_run_ms(sb, in_b));
    } else {
      tb.push_back(time_run_ms(sb, in_b));
      ta.push_back(time_run_ms(sa, in_a));
    }
  }
  std::pair<BenchStats, BenchStats> r{summarize(std::move(ta), proto.warmup, output_voxels(a)),
                                      summarize(std::move(tb), proto.warmup, output_voxels(b))};
  r.first.executions = sa.runs();
  r.second.executions = sb.runs();
  return r;
}

inline std::string format_bench(const BenchStats& s, const std::string& prefix = "") {
  std::ostringstream os;
  os.precision(6);
  os << prefix << "warmup: " << s.warmup << "\n"
     << prefix << "iterations: " << s.iterations << "\n"
     << prefix << "mean_ms: " << s.mean_ms << "\n"
     << prefix << "std_ms: " << s.std_ms << "\n"
     << prefix << "min_ms: " << s.min_ms << "\n"
     << prefix << "max_ms: " << s.max_ms << "\n"
     << prefix << "voxels_per_s: " << s.voxels_per_s << "\n";
  return os.str();
}

}  // namespace voxfuse
