#pragma once

#include <cmath>
#include <cstdint>

#include "microslice/common.hpp"
#include "microslice/model.hpp"

namespace microslice {

enum class CapacityRounding { PerSmFloor, GlobalFloor };

// Maximum number of thread blocks resident at once across the whole GPU:
//   n_sm * floor(occupancy * sm_max_threads / threads_per_block)
// The floor is applied per SM by default; GlobalFloor applies it once to the
// whole-GPU product instead (selectable knob, see docs).
inline std::int64_t concurrent_capacity(
    const GpuConfig& gpu, const KernelSpec& kernel,
    CapacityRounding rounding = CapacityRounding::PerSmFloor) {
  double per_sm_threads = kernel.occupancy * gpu.sm_max_threads;
  std::int64_t cap = 0;
  if (rounding == CapacityRounding::PerSmFloor) {
    std::int64_t per_sm =
        static_cast<std::int64_t>(per_sm_threads / kernel.threads_per_block);
    cap = static_cast<std::int64_t>(gpu.n_sm) * per_sm;
  } else {
    cap = static_cast<std::int64_t>(gpu.n_sm * per_sm_threads /
                                    kernel.threads_per_block);
  }
  if (cap <= 0)
    throw ValidationError("concurrent_capacity",
                          "block exceeds SM capacity for kernel '" +
                              kernel.name + "'");
  return cap;
}

// Predicted execution time for launching `n_blocks` of `kernel` while the
// rest of the GPU imposes `concurrent_bw_load` bytes/s of memory traffic.
//
// Wave model: blocks execute in ceil(n / capacity) waves of mean block time
// each; the resident wave's aggregate bandwidth demand past the HBM limit
// stretches every wave linearly.
inline Ns exec_time_model(const GpuConfig& gpu, const KernelSpec& kernel,
                          std::int64_t n_blocks, double concurrent_bw_load,
                          CapacityRounding rounding =
                              CapacityRounding::PerSmFloor) {
  if (n_blocks < 1)
    throw ValidationError("exec_time_model", "n_blocks must be >= 1");
  std::int64_t cap = concurrent_capacity(gpu, kernel, rounding);
  std::int64_t waves = (n_blocks + cap - 1) / cap;
  double resident = static_cast<double>(std::min(n_blocks, cap));
  double demand = resident * kernel.bw_demand_per_block + concurrent_bw_load;
  double stretch = std::max(1.0, demand / gpu.hbm_bandwidth);
  double t = static_cast<double>(waves) *
             static_cast<double>(kernel.block_time.mean()) * stretch;
  return static_cast<Ns>(std::llround(t));
}

// Stretch factor for a single wave of `resident_blocks` given everything
// else currently loading HBM. Used by the engine at dispatch time.
inline double bandwidth_stretch(const GpuConfig& gpu, const KernelSpec& kernel,
                                std::int64_t resident_blocks,
                                double other_bw_load) {
  double demand = static_cast<double>(resident_blocks) *
                      kernel.bw_demand_per_block +
                  other_bw_load;
  return std::max(1.0, demand / gpu.hbm_bandwidth);
}

}  // namespace microslice
