#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "voxfuse/executor.hpp"

namespace voxfuse {

// Placement of tiles along one axis. Origins are in input voxels; the owned
// ranges are in whole-volume output voxels and partition [0, output).
struct TileAxis {
  std::int64_t patch_in = 0;
  std::int64_t patch_out = 0;
  std::int64_t scale = 1;       // input voxels per output voxel
  std::int64_t alignment = 1;   // tile origins are multiples of this
  std::int64_t margin_lo = 0;   // output voxels unreliable at a tile's inner edges
  std::int64_t margin_hi = 0;
  std::int64_t overlap = 0;     // requested minimum input overlap
  std::int64_t volume = 0;
  std::int64_t output = 0;
  std::vector<std::int64_t> origins;
  std::vector<std::int64_t> own_begin;
  std::vector<std::int64_t> own_end;
  bool exact = true;  // every owned voxel lies in its tile's reliable interior
};

struct TilingPlan {
  std::array<TileAxis, 3> axes;

  std::int64_t tile_count() const {
    return static_cast<std::int64_t>(axes[0].origins.size() * axes[1].origins.size() *
                                     axes[2].origins.size());
  }
  bool exact() const { return axes[0].exact && axes[1].exact && axes[2].exact; }
  Dim3 output() const {
    return {static_cast<int>(axes[0].output), static_cast<int>(axes[1].output),
            static_cast<int>(axes[2].output)};
  }
};

namespace detail {

inline std::int64_t as_int(double v, const char* what) {
  const double r = std::round(v);
  if (std::abs(r - v) > 1e-9) throw Error(ErrorKind::Tiling, std::string(what) + " is not integral");
  return static_cast<std::int64_t>(r);
}

inline TileAxis make_axis(const ExecutionPlan& plan, int d, std::int64_t volume) {
  const Footprint& fp = plan.footprint;
  TileAxis a;
  a.patch_in = plan.input_shape().spatial()[d];
  a.patch_out = plan.output_shape().spatial()[d];
  a.scale = as_int(fp.scale[d], "output scale");
  if (a.scale < 1) throw Error(ErrorKind::Tiling, "networks that upsample overall cannot be tiled");
  a.alignment = std::max<std::int64_t>(as_int(fp.alignment[d], "tile alignment"), a.scale);
  if (fp.padded) {
    a.margin_lo = static_cast<std::int64_t>(std::ceil(std::max(0.0, fp.lo[d]) / a.scale));
    const auto last_reliable = static_cast<std::int64_t>(
        std::floor((a.patch_in - std::max(0.0, fp.hi[d]) - a.scale) / a.scale));
    a.margin_hi = std::max<std::int64_t>(0, a.patch_out - 1 - last_reliable);
  }
  a.volume = volume;
  if (volume < a.patch_in)
    throw Error(ErrorKind::Tiling, "volume extent " + std::to_string(volume) + " along axis " +
                                       std::to_string(d) + " is smaller than the patch (" +
                                       std::to_string(a.patch_in) + ")");
  if ((volume - a.patch_in) % a.alignment != 0)
    throw Error(ErrorKind::Tiling, "volume extent " + std::to_string(volume) + " along axis " +
                                       std::to_string(d) + " must be the patch extent " +
                                       std::to_string(a.patch_in) + " plus a multiple of " +
                                       std::to_string(a.alignment));
  a.output = (volume - a.patch_in) / a.scale + a.patch_out;
  return a;
}

inline void place(TileAxis& a, std::optional<int> tiles, std::optional<int> overlap) {
  const std::int64_t span = a.volume - a.patch_in;  // multiple of alignment
  const std::int64_t units = span / a.alignment;
  a.overlap = overlap ? *overlap
                      : a.patch_in - (a.patch_out - a.margin_lo - a.margin_hi) * a.scale;
  std::int64_t count;
  if (tiles) {
    if (*tiles < 1) throw Error(ErrorKind::Tiling, "tile count must be positive");
    count = *tiles;
    if (count > 1 + units)
      throw Error(ErrorKind::Tiling, std::to_string(count) + " tiles of " + std::to_string(a.patch_in) +
                                         " do not fit a volume of " + std::to_string(a.volume));
    if (count == 1 && span != 0)
      throw Error(ErrorKind::Tiling, "one tile of " + std::to_string(a.patch_in) +
                                         " cannot cover a volume of " + std::to_string(a.volume));
  } else {
    const std::int64_t stride = (a.patch_in - a.overlap) / a.alignment;
    if (stride <= 0 && units > 0)
      throw Error(ErrorKind::Tiling, "overlap " + std::to_string(a.overlap) +
                                         " leaves no room to advance a patch of " +
                                         std::to_string(a.patch_in));
    count = units == 0 ? 1 : 1 + (units + stride - 1) / stride;
  }
  a.origins.clear();
  for (std::int64_t i = 0; i < count; ++i)
    a.origins.push_back(count == 1 ? 0 : (units * i / (count - 1)) * a.alignment);
  for (std::size_t i = 0; i + 1 < a.origins.size(); ++i) {
    const std::int64_t actual = a.patch_in - (a.origins[i + 1] - a.origins[i]);
    if (overlap && actual < *overlap)
      throw Error(ErrorKind::Tiling, "tiles overlap by " + std::to_string(actual) +
                                         " voxels, less than the requested " +
                                         std::to_string(*overlap));
  }

  a.own_begin.assign(a.origins.size(), 0);
  a.own_end.assign(a.origins.size(), a.output);
  a.exact = true;
  for (std::size_t i = 0; i + 1 < a.origins.size(); ++i) {
    const std::int64_t start_next = a.origins[i + 1] / a.scale;
    const std::int64_t end_this = a.origins[i] / a.scale + a.patch_out;
    if (start_next > end_this) throw Error(ErrorKind::Tiling, "gap between tiles");
    const std::int64_t lo = start_next + a.margin_lo;
    const std::int64_t hi = end_this - a.margin_hi;
    std::int64_t boundary;
    if (lo <= hi) {
      boundary = lo + (hi - lo) / 2;
    } else {
      a.exact = false;
      boundary = start_next + (end_this - start_next) / 2;
    }
    a.own_end[i] = boundary;
    a.own_begin[i + 1] = boundary;
  }
}

}  // namespace detail

// Places tiles of the plan's input patch over a volume. `tiles` fixes the
// tile count per axis; otherwise it follows from `overlap` (input voxels),
// which defaults to the smallest overlap that keeps the stitched result
// equal to a whole-volume run.
inline TilingPlan plan_tiles(const ExecutionPlan& plan, Dim3 volume,
                             std::optional<Dim3> tiles = std::nullopt,
                             std::optional<Dim3> overlap = std::nullopt) {
  TilingPlan t;
  for (int d = 0; d < 3; ++d) {
    t.axes[d] = detail::make_axis(plan, d, volume[d]);
    detail::place(t.axes[d], tiles ? std::optional<int>((*tiles)[d]) : std::nullopt,
                  overlap ? std::optional<int>((*overlap)[d]) : std::nullopt);
  }
  return t;
}

// Runs every tile and writes each whole-volume output voxel from exactly one
// tile. Tiles are spread over `threads` workers, each with its own arena.
inline StandardTensor run_tiled(const ExecutionPlan& plan, const StandardTensor& volume,
                                const TilingPlan& tp, int threads = 1) {
  volume.require_rank(5);
  const Shape5 vs = volume.shape5();
  const Shape5 pin = plan.input_shape();
  const Shape5 pout = plan.output_shape();
  if (plan.input_values.size() != 1 || plan.output_values.size() != 1)
    throw Error(ErrorKind::Tiling, "tiled runs need a single-input, single-output plan");
  if (vs.f != pin.f)
    throw Error(ErrorKind::Shape, "volume has " + std::to_string(vs.f) + " featuremaps, plan expects " +
                                      std::to_string(pin.f));
  if (pin.b != 1) throw Error(ErrorKind::Tiling, "tiled runs need a plan with batch 1");
  for (int d = 0; d < 3; ++d)
    if (tp.axes[d].volume != vs.spatial()[d])
      throw Error(ErrorKind::Tiling, "tiling was planned for a different volume");

  const Dim3 go = tp.output();
  StandardTensor out(Shape5{vs.b, pout.f, go.x, go.y, go.z});
  const auto& ax = tp.axes;
  const std::int64_t nx = static_cast<std::int64_t>(ax[0].origins.size());
  const std::int64_t ny = static_cast<std::int64_t>(ax[1].origins.size());
  const std::int64_t nz = static_cast<std::int64_t>(ax[2].origins.size());
  const std::int64_t jobs = vs.b * nx * ny * nz;

  std::atomic<std::int64_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    try {
      Session session(plan);
      StandardTensor patch(pin);
      for (std::int64_t job = next++; job < jobs; job = next++) {
        const std::int64_t iz = job % nz, iy = (job / nz) % ny, ix = (job / nz / ny) % nx;
        const std::int64_t b = job / (nz * ny * nx);
        const std::int64_t ox = ax[0].origins[ix], oy = ax[1].origins[iy], oz = ax[2].origins[iz];
        for (std::int64_t f = 0; f < pin.f; ++f)
          for (std::int64_t x = 0; x < pin.x; ++x)
            for (std::int64_t y = 0; y < pin.y; ++y)
              for (std::int64_t z = 0; z < pin.z; ++z)
                patch.at(0, f, x, y, z) = volume.at(b, f, ox + x, oy + y, oz + z);
        const StandardTensor r = session.run(patch);
        const std::int64_t gx0 = ox / ax[0].scale, gy0 = oy / ax[1].scale, gz0 = oz / ax[2].scale;
        for (std::int64_t f = 0; f < pout.f; ++f)
          for (std::int64_t gx = ax[0].own_begin[ix]; gx < ax[0].own_end[ix]; ++gx)
            for (std::int64_t gy = ax[1].own_begin[iy]; gy < ax[1].own_end[iy]; ++gy)
              for (std::int64_t gz = ax[2].own_begin[iz]; gz < ax[2].own_end[iz]; ++gz)
                out.at(b, f, gx, gy, gz) = r.at(0, f, gx - gx0, gy - gy0, gz - gz0);
      }
    } catch (...) {
      std::lock_guard lock(failure_mutex);
      if (!failure) failure = std::current_exception();
      next = jobs;
    }
  };
  const int n = static_cast<int>(std::clamp<std::int64_t>(threads, 1, std::max<std::int64_t>(jobs, 1)));
  std::vector<std::thread> pool;
  for (int i = 1; i < n; ++i) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
  return out;
}

}  // namespace voxfuse
