#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "microslice/common.hpp"
#include "microslice/distribution.hpp"

namespace microslice {

struct NvlinkPeer {
  int peer_id = 0;
  Ns baseline_latency = us(2);
  double bandwidth = 600.0e9;        // bytes/s
  double background_load = 0.0;      // bytes/s of unrelated traffic
};

struct GpuConfig {
  int n_sm = 108;
  int sm_max_threads = 2048;
  double hbm_bandwidth = 2.0e12;     // bytes/s
  Ns launch_overhead = us(7);
  Ns sync_overhead = us(5);
  std::vector<NvlinkPeer> nvlink_peers;
  double dram_latency_factor = 4.0;  // >= 1

  void validate() const {
    if (n_sm < 1) throw ValidationError("gpu.n_sm", "must be >= 1");
    if (sm_max_threads < 32)
      throw ValidationError("gpu.sm_max_threads", "must be >= 32");
    if (launch_overhead <= 0)
      throw ValidationError("gpu.launch_overhead", "must be > 0");
    if (sync_overhead <= 0)
      throw ValidationError("gpu.sync_overhead", "must be > 0");
    if (hbm_bandwidth <= 0)
      throw ValidationError("gpu.hbm_bandwidth", "must be > 0");
    if (dram_latency_factor < 1.0)
      throw ValidationError("gpu.dram_latency_factor", "must be >= 1");
  }
};

struct Grid {
  int x = 1, y = 1, z = 1;
  std::int64_t blocks() const {
    return static_cast<std::int64_t>(x) * y * z;
  }
};

struct KernelSpec {
  std::string name;
  Grid grid;
  int threads_per_block = 256;
  double occupancy = 1.0;            // (0, 1]
  DurationDist block_time = DurationDist::point(us(77));
  double bw_demand_per_block = 0.0;  // bytes/s while a block is resident
  bool splittable = true;
  // Optional measured (n_blocks, exec_time) samples; when present these
  // override the analytic wave model as the split-search oracle.
  std::vector<std::pair<std::int64_t, Ns>> measured_time;

  void validate(const GpuConfig& gpu) const {
    if (name.empty()) throw ValidationError("kernel.name", "must be nonempty");
    if (grid.blocks() < 1)
      throw ValidationError("kernel.grid", "grid must contain >= 1 block");
    if (threads_per_block < 1)
      throw ValidationError("kernel.threads_per_block", "must be >= 1");
    if (occupancy <= 0.0 || occupancy > 1.0)
      throw ValidationError("kernel.occupancy", "must be in (0, 1]");
    if (block_time.min_value() <= 0)
      throw ValidationError("kernel.block_time", "durations must be > 0");
    if (bw_demand_per_block < 0.0)
      throw ValidationError("kernel.bw_demand_per_block", "must be >= 0");
    if (occupancy * gpu.sm_max_threads < threads_per_block)
      throw ValidationError(
          "kernel." + name,
          "no block fits an SM: occupancy * sm_max_threads < threads_per_block");
  }
};

enum class Priority { High, Low };
enum class TaskKind { Serving, Batch };

enum class HintKind { MemSync, InterGpuComm, CpuBound };

// A host-side marker pattern delimiting an exploitable idle interval.
// `pattern` holds opaque API tag strings; the simulator only ever matches
// them, never interprets them. `contended` marks intervals that look idle
// but actually carry latency-critical traffic (they are not harvestable;
// filling them slows the owner down).
struct BubbleHint {
  HintKind kind = HintKind::MemSync;
  std::vector<std::string> pattern;
  DurationDist duration = DurationDist::uniform(us(500), us(1000));
  int position = -1;  // fire after this kernel index; -1 = end of iteration
  bool contended = false;

  void validate() const {
    if (pattern.empty())
      throw ValidationError("hint.pattern", "must be nonempty");
    if (duration.min_value() <= 0)
      throw ValidationError("hint.duration", "durations must be > 0");
  }

  std::string pattern_key() const {
    std::string k;
    for (const auto& p : pattern) {
      if (!k.empty()) k += "+";
      k += p;
    }
    return k;
  }
};

struct RequestTrace {
  std::string name;
  std::vector<Ns> arrivals;
  // Iterations per request, sampled per request index.
  DurationDist iterations = DurationDist::point(8);  // dimensionless count

  void validate() const {
    if (arrivals.empty())
      throw ValidationError("trace." + name, "arrivals must be nonempty");
    for (std::size_t i = 1; i < arrivals.size(); ++i)
      if (arrivals[i] <= arrivals[i - 1])
        throw ValidationError("trace." + name,
                              "arrivals must be strictly increasing");
  }

  int iterations_for(std::uint64_t seed, std::size_t request_idx) const {
    std::uint64_t key = hash_combine(hash_combine(seed, hash_str(name)),
                                     0x9000 + request_idx);
    auto v = iterations.sample_keyed(key);
    return static_cast<int>(std::max<Ns>(1, v));
  }
};

struct KernelRef {
  std::string kernel;
  int repeat = 1;
};

struct TaskSpec {
  std::string name;
  Priority priority = Priority::Low;
  TaskKind kind = TaskKind::Batch;
  std::vector<KernelRef> kernel_sequence;
  std::vector<BubbleHint> bubble_hints;
  std::int64_t memory_footprint = 0;  // bytes
  std::string trace;                  // serving tasks reference a RequestTrace

  void validate() const {
    if (name.empty()) throw ValidationError("task.name", "must be nonempty");
    if (kernel_sequence.empty())
      throw ValidationError("task." + name, "kernel_sequence must be nonempty");
    for (const auto& h : bubble_hints) h.validate();
    if (kind == TaskKind::Serving && trace.empty())
      throw ValidationError("task." + name,
                            "serving tasks must reference a trace");
    if (memory_footprint < 0)
      throw ValidationError("task." + name, "memory_footprint must be >= 0");
  }
};

// Scheduler knobs (splitkernel policy).
struct SchedParams {
  Ns large_bubble_threshold = ms(2);
  double ema_alpha = 0.3;
  int ema_k = 8;
  double safety_factor = 1.2;
  int resync_every = 64;
  Ns slice_cap = us(400);
  bool square_tiling = false;
  bool consolidation = true;

  void validate() const {
    if (large_bubble_threshold <= 0)
      throw ValidationError("scheduler.threshold_ms", "must be > 0");
    if (ema_alpha <= 0.0 || ema_alpha > 1.0)
      throw ValidationError("scheduler.ema_alpha", "must be in (0, 1]");
    if (ema_k < 1) throw ValidationError("scheduler.ema_k", "must be >= 1");
    if (safety_factor < 1.0)
      throw ValidationError("scheduler.safety_factor", "must be >= 1");
    if (resync_every < 1)
      throw ValidationError("scheduler.resync_every", "must be >= 1");
    if (slice_cap <= 0)
      throw ValidationError("scheduler.slice_cap_us", "must be > 0");
  }
};

struct ReefConfig {
  int queue_cap = 4;
  Ns evict_cost_per_kernel = us(1);

  void validate() const {
    if (queue_cap < 1) throw ValidationError("reef.queue_cap", "must be >= 1");
    if (evict_cost_per_kernel < 0)
      throw ValidationError("reef.evict_cost_us", "must be >= 0");
  }
};

enum class EvictionPolicy { ContentionFirst, RoundRobin };

struct MemParams {
  bool enabled = false;
  double hbm_gb = 80.0;
  std::vector<double> peer_free_gb;   // borrowable capacity per nvlink peer
  double dram_factor = 4.0;
  double probe_mb = 4.0;
  double score_threshold = 1.5;
  EvictionPolicy eviction = EvictionPolicy::ContentionFirst;
  int accesses_per_wave = 4;

  void validate() const {
    if (hbm_gb <= 0) throw ValidationError("memory.hbm_gb", "must be > 0");
    if (probe_mb <= 0) throw ValidationError("memory.probe_mb", "must be > 0");
    if (score_threshold <= 0)
      throw ValidationError("memory.score_threshold", "must be > 0");
    if (dram_factor < 1.0)
      throw ValidationError("memory.dram_factor", "must be >= 1");
    if (accesses_per_wave < 0)
      throw ValidationError("memory.accesses_per_wave", "must be >= 0");
  }
};

enum class Policy { Exclusive, Spatial, Reef, SplitKernel, ExclusiveLp };

inline std::string policy_name(Policy p) {
  switch (p) {
    case Policy::Exclusive:
      return "exclusive";
    case Policy::Spatial:
      return "spatial";
    case Policy::Reef:
      return "reef";
    case Policy::SplitKernel:
      return "splitkernel";
    case Policy::ExclusiveLp:
      return "exclusive_lp";
  }
  return "?";
}

inline std::optional<Policy> parse_policy(const std::string& s) {
  if (s == "exclusive") return Policy::Exclusive;
  if (s == "spatial") return Policy::Spatial;
  if (s == "reef") return Policy::Reef;
  if (s == "splitkernel") return Policy::SplitKernel;
  if (s == "exclusive_lp") return Policy::ExclusiveLp;
  return std::nullopt;
}

struct ScenarioSpec {
  std::string name;
  GpuConfig gpu;
  std::vector<KernelSpec> kernels;
  std::vector<TaskSpec> tasks;
  std::vector<RequestTrace> traces;
  std::uint64_t seed = 1;
  Ns horizon = seconds(30);
  SchedParams sched;
  ReefConfig reef;
  MemParams mem;

  const KernelSpec* find_kernel(const std::string& n) const {
    for (const auto& k : kernels)
      if (k.name == n) return &k;
    return nullptr;
  }

  const RequestTrace* find_trace(const std::string& n) const {
    for (const auto& t : traces)
      if (t.name == n) return &t;
    return nullptr;
  }

  void validate() const {
    gpu.validate();
    sched.validate();
    reef.validate();
    mem.validate();
    if (horizon <= 0) throw ValidationError("horizon", "must be > 0");
    for (const auto& k : kernels) k.validate(gpu);
    for (const auto& t : tasks) {
      t.validate();
      for (const auto& kr : t.kernel_sequence) {
        if (!find_kernel(kr.kernel))
          throw ValidationError("task." + t.name,
                                "references unknown kernel '" + kr.kernel + "'");
        if (kr.repeat < 1)
          throw ValidationError("task." + t.name, "repeat must be >= 1");
      }
      if (t.kind == TaskKind::Serving) {
        const RequestTrace* tr = find_trace(t.trace);
        if (!tr)
          throw ValidationError("task." + t.name,
                                "references unknown trace '" + t.trace + "'");
        tr->validate();
      }
    }
  }

  std::vector<const TaskSpec*> tasks_with(Priority p) const {
    std::vector<const TaskSpec*> out;
    for (const auto& t : tasks)
      if (t.priority == p) out.push_back(&t);
    return out;
  }
};

}  // namespace microslice
