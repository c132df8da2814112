#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "microslice/common.hpp"
#include "microslice/exec_model.hpp"
#include "microslice/model.hpp"

namespace microslice {

struct GridBox {
  int ox = 0, oy = 0, oz = 0;
  int sx = 1, sy = 1, sz = 1;

  std::int64_t blocks() const {
    return static_cast<std::int64_t>(sx) * sy * sz;
  }
  bool operator==(const GridBox& o) const {
    return ox == o.ox && oy == o.oy && oz == o.oz && sx == o.sx &&
           sy == o.sy && sz == o.sz;
  }
};

// Per-kernel splitting log: the chosen slice size and the offset schedule.
struct SplitPlan {
  std::string kernel;
  std::int64_t blocks_per_slice = 1;
  std::vector<GridBox> slices;
  Ns predicted_slice_time = 0;
  Ns cap = us(400);
  bool memory_bound = false;
  bool uncappable = false;  // single-block time already exceeds the cap
};

namespace detail {

inline void linear_to_coord(std::int64_t p, const Grid& g, int& x, int& y,
                            int& z) {
  x = static_cast<int>(p % g.x);
  y = static_cast<int>((p / g.x) % g.y);
  z = static_cast<int>(p / (static_cast<std::int64_t>(g.x) * g.y));
}

// Largest row-major-contiguous box starting at linear index p covering at
// most `budget` blocks.
inline GridBox next_box(std::int64_t p, const Grid& g, std::int64_t budget) {
  int x, y, z;
  linear_to_coord(p, g, x, y, z);
  GridBox b;
  b.ox = x;
  b.oy = y;
  b.oz = z;
  if (x > 0) {
    b.sx = static_cast<int>(std::min<std::int64_t>(g.x - x, budget));
    b.sy = b.sz = 1;
    return b;
  }
  if (budget < g.x) {
    b.sx = static_cast<int>(budget);
    b.sy = b.sz = 1;
    return b;
  }
  std::int64_t plane = static_cast<std::int64_t>(g.x) * g.y;
  if (y > 0 || budget < plane) {
    std::int64_t rows = std::min<std::int64_t>(g.y - y, budget / g.x);
    b.sx = g.x;
    b.sy = static_cast<int>(rows);
    b.sz = 1;
    return b;
  }
  std::int64_t planes = std::min<std::int64_t>(g.z - z, budget / plane);
  b.sx = g.x;
  b.sy = g.y;
  b.sz = static_cast<int>(planes);
  return b;
}

}  // namespace detail

// Partition `grid` into row-major slices of at most `blocks_per_slice`
// blocks each. Every slice is a single rectangular sub-grid whose linear
// block range is contiguous. With `square_tiling` set and a slice size of
// exactly one quarter of an even square 2D grid, the four-quadrant tiling is
// emitted instead.
inline std::vector<GridBox> slice_boxes(const Grid& grid,
                                        std::int64_t blocks_per_slice,
                                        bool square_tiling = false) {
  if (blocks_per_slice < 1)
    throw ValidationError("splitter", "blocks_per_slice must be >= 1");
  std::vector<GridBox> out;
  std::int64_t total = grid.blocks();
  if (square_tiling && grid.z == 1 && grid.x == grid.y && grid.x % 2 == 0 &&
      blocks_per_slice ==
          static_cast<std::int64_t>(grid.x / 2) * (grid.y / 2)) {
    int h = grid.x / 2;
    out.push_back({0, 0, 0, h, h, 1});
    out.push_back({h, 0, 0, h, h, 1});
    out.push_back({0, h, 0, h, h, 1});
    out.push_back({h, h, 0, h, h, 1});
    return out;
  }
  std::int64_t p = 0;
  while (p < total) {
    GridBox b = detail::next_box(p, grid, std::min(blocks_per_slice, total - p));
    out.push_back(b);
    p += b.blocks();
  }
  return out;
}

// Instantiate the slice schedule of `plan` for `kernel`.
inline std::vector<GridBox> slice_schedule(const KernelSpec& kernel,
                                           const SplitPlan& plan,
                                           bool square_tiling = false) {
  if (plan.kernel != kernel.name)
    throw ValidationError("splitter",
                          "plan for '" + plan.kernel +
                              "' does not match kernel '" + kernel.name + "'");
  return slice_boxes(kernel.grid, plan.blocks_per_slice, square_tiling);
}

// Oracle: predicted execution time of launching n blocks of the kernel.
using ExecOracle = std::function<Ns(std::int64_t n_blocks)>;

struct SplitSearchOptions {
  double epsilon = 0.02;  // plateau tolerance
  Ns cap = us(400);
  bool square_tiling = false;
  CapacityRounding rounding = CapacityRounding::PerSmFloor;
};

// Two-step optimal-split search. Step 1 starts from the concurrency limit;
// step 2 halves the block count while that still shortens the predicted
// time by more than epsilon, then refines linearly upward to the largest
// count within (1+epsilon) of the observed minimum. The cap is enforced
// last by shrinking the slice until its predicted time fits.
inline SplitPlan find_optimal_split(const GpuConfig& gpu,
                                    const KernelSpec& kernel,
                                    const ExecOracle& oracle,
                                    const SplitSearchOptions& opts = {}) {
  if (!kernel.splittable)
    throw ValidationError("splitter",
                          "splitting disabled for kernel '" + kernel.name + "'");
  const std::int64_t n_block = concurrent_capacity(gpu, kernel, opts.rounding);
  const double eps = opts.epsilon;

  std::int64_t n = n_block;
  Ns t_n = oracle(n);
  Ns best = t_n;
  while (n > 1) {
    std::int64_t half = n / 2;
    Ns t_half = oracle(half);
    best = std::min(best, t_half);
    if (static_cast<double>(t_half) <
        (1.0 - eps) * static_cast<double>(t_n)) {
      n = half;
      t_n = t_half;
    } else {
      break;
    }
  }
  const bool memory_bound = n < n_block;

  const double thresh = (1.0 + eps) * static_cast<double>(best);
  std::int64_t m = n;
  if (static_cast<double>(t_n) > thresh && m > 1) m = n / 2;
  while (m + 1 <= n_block &&
         static_cast<double>(oracle(m + 1)) <= thresh) {
    ++m;
  }

  SplitPlan plan;
  plan.kernel = kernel.name;
  plan.cap = opts.cap;
  plan.memory_bound = memory_bound;
  plan.blocks_per_slice = m;
  plan.predicted_slice_time = oracle(m);

  if (plan.predicted_slice_time > opts.cap) {
    // Largest count whose predicted time fits the cap; the predicted time
    // is nondecreasing in the block count under the wave model.
    std::int64_t lo = 1, hi = m;
    if (oracle(1) > opts.cap) {
      plan.blocks_per_slice = 1;
      plan.predicted_slice_time = oracle(1);
      plan.uncappable = true;
    } else {
      while (lo < hi) {
        std::int64_t mid = lo + (hi - lo + 1) / 2;
        if (oracle(mid) <= opts.cap)
          lo = mid;
        else
          hi = mid - 1;
      }
      plan.blocks_per_slice = lo;
      plan.predicted_slice_time = oracle(lo);
    }
  }

  plan.slices =
      slice_boxes(kernel.grid, plan.blocks_per_slice, opts.square_tiling);
  return plan;
}

// Convenience wrapper using the analytic wave model as the oracle with no
// concurrent load (the profiling condition).
inline SplitPlan find_optimal_split(const GpuConfig& gpu,
                                    const KernelSpec& kernel,
                                    const SplitSearchOptions& opts = {}) {
  return find_optimal_split(
      gpu, kernel,
      [&](std::int64_t n) {
        return exec_time_model(gpu, kernel, n, 0.0, opts.rounding);
      },
      opts);
}

namespace detail {

struct LinRange {
  std::int64_t lo = 0, hi = 0;  // [lo, hi)
};

// Row-by-row linear ranges covered by a box.
inline void box_ranges(const GridBox& b, const Grid& g,
                       std::vector<LinRange>& out) {
  std::int64_t plane = static_cast<std::int64_t>(g.x) * g.y;
  for (int z = 0; z < b.sz; ++z) {
    for (int y = 0; y < b.sy; ++y) {
      std::int64_t base = (b.oz + z) * plane +
                          static_cast<std::int64_t>(b.oy + y) * g.x + b.ox;
      out.push_back({base, base + b.sx});
    }
  }
}

}  // namespace detail

// Merge a set of pending slices of one parent kernel back into the fewest
// rectangular launches covering exactly their union.
inline std::vector<GridBox> consolidate(const std::string& parent,
                                        const Grid& grid,
                                        const std::vector<std::string>& owners,
                                        const std::vector<GridBox>& pending) {
  for (const auto& o : owners)
    if (o != parent)
      throw ValidationError("splitter.consolidate",
                            "slice of '" + o + "' mixed into plan of '" +
                                parent + "'");
  std::vector<detail::LinRange> ranges;
  for (const auto& b : pending) detail::box_ranges(b, grid, ranges);
  if (ranges.empty()) return {};
  std::sort(ranges.begin(), ranges.end(),
            [](const detail::LinRange& a, const detail::LinRange& b) {
              return a.lo < b.lo;
            });
  std::vector<detail::LinRange> merged;
  for (const auto& r : ranges) {
    if (!merged.empty() && r.lo <= merged.back().hi)
      merged.back().hi = std::max(merged.back().hi, r.hi);
    else
      merged.push_back(r);
  }
  std::vector<GridBox> out;
  for (const auto& r : merged) {
    std::int64_t p = r.lo;
    while (p < r.hi) {
      GridBox b = detail::next_box(p, grid, r.hi - p);
      out.push_back(b);
      p += b.blocks();
    }
  }
  return out;
}

inline std::vector<GridBox> consolidate(const std::string& parent,
                                        const Grid& grid,
                                        const std::vector<GridBox>& pending) {
  return consolidate(parent, grid,
                     std::vector<std::string>(pending.size(), parent),
                     pending);
}

}  // namespace microslice
