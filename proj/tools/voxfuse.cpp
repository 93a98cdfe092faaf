#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <iostream>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "voxfuse/voxfuse.hpp"

using namespace voxfuse;

namespace {

Dim3 dim3_of(const std::vector<int>& v, const char* what) {
  if (v.size() == 1) return {v[0], v[0], v[0]};
  if (v.size() == 3) return {v[0], v[1], v[2]};
  throw Error(ErrorKind::Config, std::string(what) + " takes one value or three (X,Y,Z)");
}

int worker_threads() {
  int n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* env = std::getenv("VOXFUSE_THREADS")) {
    try {
      n = std::stoi(env);
    } catch (const std::exception&) {
      throw Error(ErrorKind::Config, std::string("VOXFUSE_THREADS is not a number: '") + env + "'");
    }
    if (n < 1) throw Error(ErrorKind::Config, "VOXFUSE_THREADS must be at least 1");
  }
  return n;
}

NetworkSpec read_model(const std::string& path) {
  const std::string text = io::read_text_file(path);
  try {
    std::vector<std::string> warnings;
    auto spec = parse_prototxt(text, &warnings);
    for (const auto& w : warnings) std::cerr << path << ": warning: " << w << "\n";
    return spec;
  } catch (const Error& e) {
    throw Error(e.kind(), path + ":" + (e.line() > 0 ? std::to_string(e.line()) + ":" +
                                                        std::to_string(e.column()) + ": "
                                                  : std::string(" ")) +
                              e.detail());
  }
}

std::string shape_string(const Shape5& s) {
  return std::to_string(s.b) + "x" + std::to_string(s.f) + "x" + std::to_string(s.x) + "x" +
         std::to_string(s.y) + "x" + std::to_string(s.z);
}

struct DiffStats {
  double max_abs = 0;
  double max_rel = 0;
  std::int64_t where = -1;
  std::int64_t non_finite = -1;
};

DiffStats compare(const StandardTensor& got, const StandardTensor& want) {
  DiffStats d;
  const auto g = got.data();
  const auto w = want.data();
  if (g.size() != w.size()) throw Error(ErrorKind::Shape, "engine and oracle shapes differ");
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!std::isfinite(g[i]) || !std::isfinite(w[i])) {
      if (d.non_finite < 0) d.non_finite = static_cast<std::int64_t>(i);
      continue;
    }
    const double a = std::abs(static_cast<double>(g[i]) - w[i]);
    if (d.where < 0 || a > d.max_abs) {
      d.max_abs = a;
      d.where = static_cast<std::int64_t>(i);
    }
    d.max_rel = std::max(d.max_rel, a / std::max(1e-6, std::abs(static_cast<double>(w[i]))));
  }
  return d;
}

std::string location(const Shape5& s, std::int64_t i) {
  const std::int64_t z = i % s.z, y = i / s.z % s.y, x = i / s.z / s.y % s.x;
  const std::int64_t f = i / s.z / s.y / s.x % s.f, b = i / s.z / s.y / s.x / s.f;
  return "(b=" + std::to_string(b) + ", f=" + std::to_string(f) + ", x=" + std::to_string(x) +
         ", y=" + std::to_string(y) + ", z=" + std::to_string(z) + ")";
}

int cmd_zoo(const std::string& variant, int levels, int base, const std::vector<int>& features,
            const std::vector<int>& input, int in_ch, int out_ch, std::uint32_t seed,
            const std::string& model_out, const std::string& weights_out) {
  ZooConfig cfg;
  cfg.variant = zoo_variant_from_string(variant);
  cfg.levels = levels;
  cfg.base_features = base;
  cfg.features = features;
  cfg.input = dim3_of(input, "--input");
  cfg.in_channels = in_ch;
  cfg.out_channels = out_ch;
  cfg.seed = seed;
  const ZooModel m = generate_zoo(cfg);
  const std::string text = print_prototxt(m.spec);
  io::write_file(model_out, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  save_weights_file(weights_out, m.weights);
  const ShapedNetwork shaped = validate_shapes(m.spec, m.weights);
  std::cout << "variant: " << to_string(cfg.variant) << "\n";
  std::cout << "features:";
  for (int f : zoo_features(cfg)) std::cout << " " << f;
  std::cout << "\nlayers: " << m.spec.layers.size() << "\n";
  for (const auto& blob : m.spec.output_blobs())
    std::cout << "output " << blob << ": " << shape_string(shaped.shapes.at(shaped.index_of_blob(blob)))
              << "\n";
  return 0;
}

int cmd_compile(const std::string& model, const std::string& weights, const std::string& out,
                const PassOptions& passes, int simd, const std::vector<int>& patch, bool report) {
  PlanOptions opts;
  if (simd > 0) opts.simd = SimdWidth(simd);
  if (!patch.empty()) opts.patch = dim3_of(patch, "--patch");
  const auto r = compile(read_model(model), load_weights_file(weights), passes, opts);
  save_plan_file(out, r.plan);
  if (report) std::cout << format_report(r.reports);
  std::cout << "steps: " << r.plan.steps.size() << "\n"
            << "buffers: " << r.plan.buffer_count() << "\n"
            << "arena_floats: " << r.plan.arena_floats << "\n"
            << "input: " << shape_string(r.plan.input_shape()) << "\n"
            << "output: " << shape_string(r.plan.output_shape()) << "\n";
  return 0;
}

int cmd_run(const std::string& plan_path, const std::string& in, const std::string& out,
            const std::vector<int>& tile, const std::vector<int>& overlap) {
  const ExecutionPlan p = load_plan_file(plan_path);
  const StandardTensor volume = load_volume(in);
  volume.require_rank(5);
  const Shape5 vs = volume.shape5();
  std::optional<Dim3> tiles, ov;
  if (!tile.empty()) tiles = dim3_of(tile, "--tile");
  if (!overlap.empty()) ov = dim3_of(overlap, "--overlap");
  const TilingPlan tp = plan_tiles(p, vs.spatial(), tiles, ov);
  if (!tp.exact())
    std::cerr << "warning: overlap is below the receptive-field margin; seams may differ from a "
                 "whole-volume run\n";
  const StandardTensor result = run_tiled(p, volume, tp, worker_threads());
  save_volume(out, result);
  std::cout << "tiles: " << tp.axes[0].origins.size() << "x" << tp.axes[1].origins.size() << "x"
            << tp.axes[2].origins.size() << "\n"
            << "overlap: " << tp.axes[0].overlap << "," << tp.axes[1].overlap << ","
            << tp.axes[2].overlap << "\n"
            << "output: " << shape_string(result.shape5()) << "\n";
  return 0;
}

int cmd_bench(const std::string& plan_path, const std::string& baseline, int warmup, int iters,
              std::uint32_t seed) {
  BenchProtocol proto{warmup, iters};
  const ExecutionPlan p = load_plan_file(plan_path);
  if (baseline.empty()) {
    std::cout << format_bench(bench(p, proto, seed));
    return 0;
  }
  const ExecutionPlan b = load_plan_file(baseline);
  const auto [sp, sb] = bench_paired(p, b, proto, seed);
  std::cout << format_bench(sp) << format_bench(sb, "baseline_");
  std::cout << "speedup: " << (sb.mean_ms / sp.mean_ms - 1.0) << "\n";
  return 0;
}

int cmd_verify(const std::string& model, const std::string& weights, std::uint32_t seed,
               double tolerance) {
  const NetworkSpec spec = read_model(model);
  const WeightStore w = load_weights_file(weights);
  const auto opt = compile(spec, w, PassOptions{});
  const auto raw = compile(spec, w, PassOptions::none());
  const auto inputs = synthetic_inputs(opt.plan, seed);
  const auto want = reference::ref_run(spec, w, inputs);
  bool ok = true;
  for (const auto* c : {&opt, &raw}) {
    const char* label = c == &opt ? "optimized" : "unoptimized";
    const auto got = execute(c->plan, inputs);
    for (std::size_t o = 0; o < got.size(); ++o) {
      const DiffStats d = compare(got[o], want[o]);
      const Shape5 s = want[o].shape5();
      std::cout << label << "[" << o << "] max_abs: " << d.max_abs << "\n"
                << label << "[" << o << "] max_rel: " << d.max_rel << "\n";
      if (d.non_finite >= 0) {
        std::cout << label << "[" << o << "] non-finite value at " << location(s, d.non_finite) << "\n";
        ok = false;
      } else if (d.max_abs > tolerance) {
        std::cout << label << "[" << o << "] worst voxel " << location(s, d.where) << "\n";
        ok = false;
      }
    }
  }
  std::cout << (ok ? "PASS" : "FAIL") << "\n";
  return ok ? 0 : 1;
}

int cmd_volume(const std::vector<int>& shape, std::uint32_t seed, const std::string& out) {
  if (shape.size() != 5) throw Error(ErrorKind::Config, "--shape takes B,F,X,Y,Z");
  StandardTensor t(Shape5{shape[0], shape[1], shape[2], shape[3], shape[4]});
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  for (auto& v : t.data()) v = dist(rng);
  save_volume(out, t);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"voxfuse: compile and run volumetric convolutional networks on the CPU"};
  app.require_subcommand(1);

  std::string variant = "residual", model_out = "model.prototxt", weights_out = "model.pznw";
  int levels = 4, base = 0, in_ch = 1, out_ch = 3;
  std::vector<int> features, input{32};
  std::uint32_t seed = 1;
  auto* zoo = app.add_subcommand("zoo", "Generate a 3D U-Net model and seeded weights");
  zoo->add_option("--variant", variant, "original | symmetric | residual")->capture_default_str();
  zoo->add_option("--levels", levels, "U-Net levels (levels - 1 downsamples)")->capture_default_str();
  zoo->add_option("--base-features", base, "features on the first level (0: variant default)");
  zoo->add_option("--features", features, "explicit per-level schedule")->delimiter(',');
  zoo->add_option("--input", input, "input patch X,Y,Z")->delimiter(',');
  zoo->add_option("--in-channels", in_ch)->capture_default_str();
  zoo->add_option("--out-channels", out_ch)->capture_default_str();
  zoo->add_option("--seed", seed)->capture_default_str();
  zoo->add_option("--model", model_out, "output prototxt")->capture_default_str();
  zoo->add_option("--weights", weights_out, "output weights")->capture_default_str();

  std::string model, weights, plan_out = "model.plan";
  bool no_add = false, no_fold = false, no_act = false, no_pad = false, report = false;
  int simd = 0;
  std::vector<int> patch;
  auto* comp = app.add_subcommand("compile", "Optimize a model and write an execution plan");
  comp->add_option("model", model, "model .prototxt")->required();
  comp->add_option("weights", weights, "weights .pznw")->required();
  comp->add_option("-o,--output", plan_out, "plan file")->capture_default_str();
  comp->add_flag("--no-fuse-add", no_add, "keep element-wise additions");
  comp->add_flag("--no-fold-linear", no_fold, "keep BatchNorm/Scale layers");
  comp->add_flag("--no-fuse-act", no_act, "keep standalone activations");
  comp->add_flag("--no-elide-pad", no_pad, "keep explicit padding copies");
  comp->add_flag("--report", report, "print per-pass rewrite counts");
  comp->add_option("--simd", simd, "lane width (default: native)");
  comp->add_option("--patch", patch, "sub-image patch X,Y,Z")->delimiter(',');

  std::string plan_in, vol_in, vol_out;
  std::vector<int> tile, overlap;
  auto* run = app.add_subcommand("run", "Run a plan over a volume, tiling it into patches");
  run->add_option("plan", plan_in)->required();
  run->add_option("input", vol_in, "input .pznv")->required();
  run->add_option("output", vol_out, "output .pznv")->required();
  run->add_option("--tile", tile, "tiles per axis X,Y,Z")->delimiter(',');
  run->add_option("--overlap", overlap, "minimum input overlap, one value or X,Y,Z")->delimiter(',');

  std::string baseline;
  int warmup = 10, iters = 60;
  auto* bnc = app.add_subcommand("bench", "Time a plan on synthetic input");
  bnc->add_option("plan", plan_in)->required();
  bnc->add_option("--warmup", warmup)->capture_default_str();
  bnc->add_option("--iters", iters)->capture_default_str();
  bnc->add_option("--seed", seed)->capture_default_str();
  bnc->add_option("--baseline", baseline, "second plan, timed interleaved with the first");

  double tolerance = 1e-4;
  std::string against = "oracle";
  auto* ver = app.add_subcommand("verify", "Compare engine output with the reference implementation");
  ver->add_option("model", model)->required();
  ver->add_option("weights", weights)->required();
  ver->add_option("--against", against)->check(CLI::IsMember({"oracle"}))->capture_default_str();
  ver->add_option("--seed", seed)->capture_default_str();
  ver->add_option("--tolerance", tolerance)->capture_default_str();

  std::vector<int> vshape;
  auto* vol = app.add_subcommand("volume", "Write a seeded random volume");
  vol->add_option("--shape", vshape, "B,F,X,Y,Z")->delimiter(',')->required();
  vol->add_option("--seed", seed)->capture_default_str();
  vol->add_option("-o,--output", vol_out)->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (zoo->parsed())
      return cmd_zoo(variant, levels, base, features, input, in_ch, out_ch, seed, model_out, weights_out);
    if (comp->parsed()) {
      PassOptions p;
      p.fuse_addition = !no_add;
      p.fold_linear = !no_fold;
      p.fuse_activation = !no_act;
      p.eliminate_padding = !no_pad;
      return cmd_compile(model, weights, plan_out, p, simd, patch, report);
    }
    if (run->parsed()) return cmd_run(plan_in, vol_in, vol_out, tile, overlap);
    if (bnc->parsed()) return cmd_bench(plan_in, baseline, warmup, iters, seed);
    if (ver->parsed()) return cmd_verify(model, weights, seed, tolerance);
    if (vol->parsed()) return cmd_volume(vshape, seed, vol_out);
  } catch (const std::exception& e) {
    std::cerr << "voxfuse: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
