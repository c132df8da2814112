#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "microslice/common.hpp"
#include "microslice/events.hpp"
#include "microslice/exec_model.hpp"
#include "microslice/memory.hpp"
#include "microslice/model.hpp"
#include "microslice/scheduler.hpp"
#include "microslice/splitter.hpp"

namespace microslice {

struct RequestStat {
  int task = -1;
  std::size_t index = 0;
  Ns arrival = 0;
  Ns first_token = -1;
  Ns done = -1;
  int iterations = 0;
  bool completed = false;

  Ns ttft() const { return first_token < 0 ? -1 : first_token - arrival; }
  Ns tpot() const {
    if (!completed) return -1;
    if (iterations > 1) return (done - first_token) / (iterations - 1);
    return done - arrival;
  }
};

struct PreemptionRecord {
  Ns begin = 0;
  Ns delay = 0;
  bool lp_in_flight = false;
  bool consolidated = false;
};

struct RunArtifacts {
  Policy policy = Policy::Exclusive;
  std::string scenario;
  std::uint64_t seed = 0;
  Ns horizon = 0;
  Timeline timeline;
  std::vector<ApiTraceRow> api_rows;
  std::vector<UtilSample> util_samples;
  std::vector<RequestStat> requests;
  std::vector<PreemptionRecord> preemptions;

  // block accounting: "launched" counts blocks actually dispatched to SMs
  std::int64_t lp_blocks_launched = 0;
  std::int64_t lp_blocks_done = 0;
  std::int64_t lp_waste_blocks = 0;
  std::int64_t lp_blocks_in_flight_at_cutoff = 0;
  std::int64_t hp_blocks_launched = 0;
  std::int64_t hp_blocks_done = 0;
  std::int64_t hp_blocks_in_flight_at_cutoff = 0;
  double lp_work_units = 0.0;  // blocks of fully completed parent kernels
  std::int64_t lp_parent_completions = 0;
  std::int64_t relaunch_count = 0;
  Ns sync_cost_total = 0;
  double sm_active_fraction = 0.0;
  Ns small_bubble_time = 0;
  double hp_stretch_sum = 0.0;
  std::int64_t hp_stretch_waves = 0;

  double lp_throughput_per_s() const {
    return horizon > 0 ? lp_work_units / to_sec(horizon) : 0.0;
  }
  double mean_hp_stretch() const {
    return hp_stretch_waves > 0 ? hp_stretch_sum / hp_stretch_waves : 1.0;
  }
};

struct EngineOptions {
  // When set, only bubble hints whose pattern key is in the set are
  // harvested by the splitkernel scheduler.
  std::optional<std::set<std::string>> hint_filter;
  CapacityRounding rounding = CapacityRounding::PerSmFloor;
  Ns util_sample_period = us(100);
};

class Engine {
 public:
  Engine(ScenarioSpec scenario, Policy policy, EngineOptions opts = {})
      : sc_(std::move(scenario)), policy_(policy), opts_(opts) {
    sc_.validate();
  }

  RunArtifacts run();

 private:
  enum class EvType {
    RequestArrival,
    BubbleOver,
    KernelArrive,
    WaveDone,
    TickLaunch,
    LargeBubbleCheck,
    Poke,
    ProbeTick,
    UtilTick,
  };

  struct Ev {
    Ns ts = 0;
    int prio = 2;  // 0 hp, 1 lp, 2 infra
    int stream = -1;
    long seq = 0;
    EvType type = EvType::UtilTick;
    int a = 0;
    long b = 0;
  };

  struct EvCmp {
    bool operator()(const Ev& x, const Ev& y) const {
      if (x.ts != y.ts) return x.ts > y.ts;
      if (x.prio != y.prio) return x.prio > y.prio;
      if (x.stream != y.stream) return x.stream > y.stream;
      return x.seq > y.seq;
    }
  };

  enum class InstState { Transit, Queued, Running, Finished, Evicted };

  struct Instance {
    int id = 0;
    int kernel_id = -1;
    int task = -1;
    Priority prio = Priority::Low;
    int stream = -1;
    GridBox box;
    std::int64_t blocks_total = 0;
    std::int64_t blocks_dispatched = 0;
    std::int64_t blocks_done = 0;
    int waves_in_flight = 0;
    Ns block_time = 0;
    Ns issue_ts = 0;
    Ns arrive_ts = 0;
    InstState state = InstState::Transit;
    std::uint64_t uid = 0;
    long parent_seq = -1;
    bool is_slice = false;
    bool is_consolidated = false;
    bool doomed = false;
  };

  struct Stream {
    int id = -1;
    int task = -1;
    Priority prio = Priority::Low;
    std::deque<int> queue;  // device-side, arrival order
  };

  struct TaskRt {
    const TaskSpec* spec = nullptr;
    int index = -1;
    int stream = -1;
    const RequestTrace* trace = nullptr;
    std::deque<std::size_t> pending_requests;
    bool busy = false;
    std::size_t cur_request = 0;
    int cur_iteration = 0;
    int n_iterations = 0;
    std::size_t segment_cursor = 0;
    int outstanding_kernels = 0;
    struct Segment {
      std::vector<int> kernel_ids;
      std::vector<int> hints;
    };
    std::vector<Segment> segments;
    std::size_t seq_cursor = 0;
    long local_parent_counter = 0;
    std::vector<std::int64_t> chunk_ids;
  };

  struct Parent {
    long seq = -1;
    int task = -1;
    int kernel_id = -1;
    std::uint64_t uid = 0;
    std::int64_t blocks_total = 0;
    std::int64_t blocks_done = 0;
    std::deque<GridBox> pending;
    int consolidated_boxes = 0;
  };

  // ---------------- state ----------------
  ScenarioSpec sc_;
  Policy policy_;
  EngineOptions opts_;

  std::priority_queue<Ev, std::vector<Ev>, EvCmp> eq_;
  long seq_counter_ = 0;
  Ns now_ = 0;

  std::vector<Instance> instances_;
  std::vector<Stream> streams_;
  std::vector<TaskRt> tasks_;
  std::vector<int> hp_tasks_, lp_tasks_;
  std::map<long, Parent> parents_;
  long global_parent_counter_ = 0;
  std::vector<int> lp_active_;  // lp instances on device/in transit, by id

  std::int64_t total_threads_ = 0;
  std::int64_t free_threads_ = 0;
  double wave_bw_sum_ = 0.0;
  std::priority_queue<std::pair<Ns, double>,
                      std::vector<std::pair<Ns, double>>, std::greater<>>
      transfer_heap_;
  double transfer_bw_sum_ = 0.0;

  int hp_active_ = 0;
  Ns last_hp_activity_ = 0;
  bool p_flag_ = false;

  long tick_generation_ = 0;
  int lp_outstanding_ = 0;
  bool tick_deferred_ = false;
  int tick_rr_cursor_ = 0;
  int slices_since_resync_ = 0;
  bool resync_pending_ = false;
  std::optional<IntervalPredictor> predictor_;
  Ns last_request_arrival_ = -1;

  int open_hint_task_ = -1;
  bool open_hint_contended_ = false;
  Ns contended_busy_ns_ = 0;

  std::deque<int> reef_evicted_;
  int reef_outstanding_ = 0;
  int reef_rr_cursor_ = 0;
  Ns reef_evict_gate_ = 0;

  std::optional<PreemptionRecord> pending_preempt_;
  std::optional<MemoryManager> mem_;
  std::map<int, SplitPlan> plans_;

  RunArtifacts art_;
  double sm_busy_integral_ = 0.0;
  Ns last_occ_change_ = 0;

  // ---------------- helpers ----------------
  void push_event(Ns ts, int prio, int stream, EvType type, int a = 0,
                  long b = 0) {
    eq_.push(Ev{ts, prio, stream, ++seq_counter_, type, a, b});
  }

  const KernelSpec& kspec(int id) const { return sc_.kernels[id]; }

  int kernel_index(const std::string& name) const {
    for (std::size_t i = 0; i < sc_.kernels.size(); ++i)
      if (sc_.kernels[i].name == name) return static_cast<int>(i);
    throw ValidationError("engine", "unknown kernel '" + name + "'");
  }

  double current_bw_demand(Ns now) {
    while (!transfer_heap_.empty() && transfer_heap_.top().first <= now) {
      transfer_bw_sum_ -= transfer_heap_.top().second;
      transfer_heap_.pop();
    }
    if (transfer_heap_.empty()) transfer_bw_sum_ = 0.0;
    return wave_bw_sum_ + transfer_bw_sum_;
  }

  void note_occupancy_change(Ns now) {
    sm_busy_integral_ += static_cast<double>(total_threads_ - free_threads_) *
                         static_cast<double>(now - last_occ_change_);
    last_occ_change_ = now;
  }

  std::int64_t thread_cost(const KernelSpec& k) const {
    return static_cast<std::int64_t>(
        std::max(1.0, static_cast<double>(k.threads_per_block) / k.occupancy));
  }

  void emit_api(Ns a, Ns b, const std::string& tag, long corr) {
    art_.api_rows.push_back({a, b, tag, corr});
  }

  void drop_lp_active(int id) {
    for (auto it = lp_active_.begin(); it != lp_active_.end(); ++it)
      if (*it == id) {
        lp_active_.erase(it);
        return;
      }
  }

  void remove_from_stream(Instance& inst) {
    Stream& s = streams_[inst.stream];
    for (auto it = s.queue.begin(); it != s.queue.end(); ++it)
      if (*it == inst.id) {
        s.queue.erase(it);
        return;
      }
  }

  void setup();
  void expand_segments(TaskRt& t);
  void build_plans();
  ExecOracle make_oracle(int kernel_id) const;

  void on_request_arrival(int task, std::size_t idx);
  void begin_request(TaskRt& t);
  void issue_segment(TaskRt& t);
  void on_segment_done(int task);
  void fire_hints(TaskRt& t, Ns from_ts);
  void on_bubble_over(int task, long payload);
  void finish_iteration(TaskRt& t);
  void issue_hp_kernel(TaskRt& t, int kernel_id, int rep_idx);

  int make_instance(int task, int kernel_id, const GridBox& box,
                    std::uint64_t uid, Priority prio, bool slice,
                    bool consolidated, long parent_seq);
  void issue_instance(int inst_id, Ns ts, bool relaunch = false);
  void on_kernel_arrive(int inst_id);

  void dispatch();
  bool hp_work_fits() const;
  void dispatch_wave(Instance& inst, std::int64_t n);
  void on_wave_done(int inst_id, long n_blocks);
  void on_kernel_done(int inst_id);
  void evict_instance(Instance& inst, Ns at);

  void on_hp_turned_active(Ns ts);
  void on_hp_drained();
  void on_large_bubble_check(long gen);

  Parent& next_parent(int task);
  void start_tick_launcher(Ns at);
  void tick_launch();
  void consolidate_large_bubble();
  Ns predicted_time_for(int kernel_id, std::int64_t blocks) const;

  void lp_free_run_issue(int task);
  void reef_refill(Ns at);
  void reef_on_flag();

  Ns wave_memory_extra(const Instance& inst, long wave_no);
};

// =============================== setup =====================================

inline void Engine::setup() {
  total_threads_ =
      static_cast<std::int64_t>(sc_.gpu.n_sm) * sc_.gpu.sm_max_threads;
  free_threads_ = total_threads_;
  art_.policy = policy_;
  art_.scenario = sc_.name;
  art_.seed = sc_.seed;
  art_.horizon = sc_.horizon;
  predictor_.emplace(sc_.sched.ema_alpha, sc_.sched.ema_k,
                     sc_.sched.large_bubble_threshold);

  bool want_hp = policy_ != Policy::ExclusiveLp;
  bool want_lp = policy_ != Policy::Exclusive;

  for (std::size_t i = 0; i < sc_.tasks.size(); ++i) {
    const TaskSpec& t = sc_.tasks[i];
    if (t.priority == Priority::High && !want_hp) continue;
    if (t.priority == Priority::Low && !want_lp) continue;
    TaskRt rt;
    rt.spec = &t;
    rt.index = static_cast<int>(tasks_.size());
    if (t.kind == TaskKind::Serving && t.priority == Priority::High)
      rt.trace = sc_.find_trace(t.trace);
    expand_segments(rt);
    tasks_.push_back(std::move(rt));
  }
  // hp streams first so the dispatcher walks them in priority order
  std::vector<int> order;
  for (const TaskRt& t : tasks_)
    if (t.spec->priority == Priority::High) order.push_back(t.index);
  for (const TaskRt& t : tasks_)
    if (t.spec->priority == Priority::Low) order.push_back(t.index);
  for (std::size_t sid = 0; sid < order.size(); ++sid) {
    Stream s;
    s.id = static_cast<int>(sid);
    s.task = order[sid];
    s.prio = tasks_[order[sid]].spec->priority;
    tasks_[order[sid]].stream = s.id;
    streams_.push_back(s);
    if (s.prio == Priority::High)
      hp_tasks_.push_back(order[sid]);
    else
      lp_tasks_.push_back(order[sid]);
  }

  if (sc_.mem.enabled) {
    mem_.emplace(sc_.gpu, sc_.mem);
    std::vector<ChunkRelocation> moves;
    for (int ti : hp_tasks_)
      tasks_[ti].chunk_ids = mem_->allocate(
          ti, Priority::High, tasks_[ti].spec->memory_footprint, 0, &moves);
    for (int ti : lp_tasks_)
      tasks_[ti].chunk_ids = mem_->allocate(
          ti, Priority::Low, tasks_[ti].spec->memory_footprint, 0, &moves);
    for (const auto& m : moves)
      art_.timeline.emit(0, EventKind::Evict, -1, "chunk",
                         "chunk=" + std::to_string(m.chunk_id));
    if (!sc_.gpu.nvlink_peers.empty()) push_event(0, 2, -1, EvType::ProbeTick);
  }

  if (policy_ == Policy::SplitKernel) build_plans();

  for (int ti : hp_tasks_) {
    TaskRt& t = tasks_[ti];
    if (!t.trace) continue;
    for (std::size_t r = 0; r < t.trace->arrivals.size(); ++r) {
      if (t.trace->arrivals[r] >= sc_.horizon) break;
      push_event(t.trace->arrivals[r], 0, t.stream, EvType::RequestArrival,
                 t.index, static_cast<long>(r));
    }
  }

  if (policy_ == Policy::Spatial || policy_ == Policy::ExclusiveLp) {
    for (int ti : lp_tasks_) lp_free_run_issue(ti);
  } else if (policy_ == Policy::Reef) {
    reef_refill(0);
  }

  push_event(0, 2, -1, EvType::UtilTick);
}

inline void Engine::expand_segments(TaskRt& t) {
  std::vector<int> kernel_ids;
  for (const auto& kr : t.spec->kernel_sequence) {
    int kid = kernel_index(kr.kernel);
    for (int r = 0; r < kr.repeat; ++r) kernel_ids.push_back(kid);
  }
  std::vector<std::vector<int>> hint_after(kernel_ids.size() + 1);
  for (std::size_t h = 0; h < t.spec->bubble_hints.size(); ++h) {
    int pos = t.spec->bubble_hints[h].position;
    std::size_t slot =
        pos < 0 ? kernel_ids.size()
                : std::min<std::size_t>(static_cast<std::size_t>(pos) + 1,
                                        kernel_ids.size());
    hint_after[slot].push_back(static_cast<int>(h));
  }
  TaskRt::Segment cur;
  for (std::size_t i = 0; i <= kernel_ids.size(); ++i) {
    if (i > 0) cur.kernel_ids.push_back(kernel_ids[i - 1]);
    if (!hint_after[i].empty()) {
      cur.hints = hint_after[i];
      t.segments.push_back(cur);
      cur = {};
    }
  }
  if (!cur.kernel_ids.empty()) t.segments.push_back(cur);
}

inline ExecOracle Engine::make_oracle(int kernel_id) const {
  const KernelSpec& k = kspec(kernel_id);
  if (!k.measured_time.empty()) {
    auto table = k.measured_time;
    std::sort(table.begin(), table.end());
    return [table](std::int64_t n) -> Ns {
      if (n <= table.front().first) return table.front().second;
      if (n >= table.back().first) return table.back().second;
      for (std::size_t i = 1; i < table.size(); ++i) {
        if (n <= table[i].first) {
          double f =
              static_cast<double>(n - table[i - 1].first) /
              static_cast<double>(table[i].first - table[i - 1].first);
          return table[i - 1].second +
                 static_cast<Ns>(f * static_cast<double>(table[i].second -
                                                         table[i - 1].second));
        }
      }
      return table.back().second;
    };
  }
  const GpuConfig* gpu = &sc_.gpu;
  const KernelSpec* kp = &k;
  CapacityRounding rounding = opts_.rounding;
  return [gpu, kp, rounding](std::int64_t n) {
    return exec_time_model(*gpu, *kp, n, 0.0, rounding);
  };
}

inline void Engine::build_plans() {
  SplitSearchOptions opts;
  opts.cap = sc_.sched.slice_cap;
  opts.square_tiling = sc_.sched.square_tiling;
  opts.rounding = opts_.rounding;
  for (int ti : lp_tasks_) {
    for (const auto& kr : tasks_[ti].spec->kernel_sequence) {
      int kid = kernel_index(kr.kernel);
      if (plans_.count(kid)) continue;
      const KernelSpec& k = kspec(kid);
      if (!k.splittable) continue;
      plans_.emplace(kid, find_optimal_split(sc_.gpu, k, make_oracle(kid), opts));
    }
  }
}

// ============================ hp serving driver ==============================

inline void Engine::on_request_arrival(int task, std::size_t idx) {
  TaskRt& t = tasks_[task];
  RequestStat rs;
  rs.task = task;
  rs.index = idx;
  rs.arrival = now_;
  rs.iterations = t.trace->iterations_for(sc_.seed, idx);
  art_.requests.push_back(rs);
  t.pending_requests.push_back(art_.requests.size() - 1);

  if (last_request_arrival_ >= 0)
    predictor_->observe_gap(now_ - last_request_arrival_);
  last_request_arrival_ = now_;

  if (!t.busy) {
    t.busy = true;
    begin_request(t);
  }
}

inline void Engine::begin_request(TaskRt& t) {
  t.cur_request = t.pending_requests.front();
  t.pending_requests.pop_front();
  t.cur_iteration = 0;
  t.n_iterations = art_.requests[t.cur_request].iterations;
  t.segment_cursor = 0;
  issue_segment(t);
}

inline void Engine::issue_segment(TaskRt& t) {
  const TaskRt::Segment& seg = t.segments[t.segment_cursor];
  if (seg.kernel_ids.empty()) {
    fire_hints(t, now_);
    return;
  }
  t.outstanding_kernels = static_cast<int>(seg.kernel_ids.size());
  int rep = 0;
  for (int kid : seg.kernel_ids) issue_hp_kernel(t, kid, rep++);
}

inline void Engine::issue_hp_kernel(TaskRt& t, int kernel_id, int rep_idx) {
  const KernelSpec& k = kspec(kernel_id);
  std::uint64_t uid = hash_combine(
      hash_combine(hash_combine(sc_.seed, hash_str(t.spec->name)),
                   hash_combine(art_.requests[t.cur_request].index * 131 + 7,
                                static_cast<std::uint64_t>(t.cur_iteration))),
      hash_combine(static_cast<std::uint64_t>(t.segment_cursor) * 31,
                   static_cast<std::uint64_t>(rep_idx)));
  GridBox full{0, 0, 0, k.grid.x, k.grid.y, k.grid.z};
  int id = make_instance(t.index, kernel_id, full, uid, Priority::High, false,
                         false, -1);
  issue_instance(id, now_);
}

inline void Engine::on_segment_done(int task) {
  TaskRt& t = tasks_[task];
  const TaskRt::Segment& seg = t.segments[t.segment_cursor];
  if (!seg.hints.empty()) {
    fire_hints(t, now_);
  } else {
    ++t.segment_cursor;
    if (t.segment_cursor < t.segments.size())
      issue_segment(t);
    else
      finish_iteration(t);
  }
}

inline void Engine::fire_hints(TaskRt& t, Ns from_ts) {
  const TaskRt::Segment& seg = t.segments[t.segment_cursor];
  Ns dur = 0;
  std::string key;
  bool contended = false;
  for (int h : seg.hints) {
    const BubbleHint& hint = t.spec->bubble_hints[h];
    std::uint64_t uid = hash_combine(
        hash_combine(hash_combine(sc_.seed, hash_str(t.spec->name + "#hint")),
                     art_.requests[t.cur_request].index * 17),
        hash_combine(static_cast<std::uint64_t>(t.cur_iteration),
                     static_cast<std::uint64_t>(h)));
    dur += hint.duration.sample_keyed(uid);
    if (hint.contended) contended = true;
    if (!key.empty()) key += "+";
    key += hint.pattern_key();
  }
  if (dur <= 0) dur = 1;

  art_.timeline.emit(from_ts, EventKind::BubbleBegin, t.stream, t.spec->name,
                     "hint=" + key);
  std::vector<std::string> tags;
  for (int h : seg.hints)
    for (const auto& p : t.spec->bubble_hints[h].pattern) tags.push_back(p);
  Ns per = dur / static_cast<Ns>(tags.size());
  Ns cursor = from_ts;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    Ns end = i + 1 == tags.size() ? from_ts + dur : cursor + per;
    emit_api(cursor, end, tags[i],
             static_cast<long>(t.cur_request) * 1000 + t.cur_iteration);
    cursor = end;
  }

  art_.small_bubble_time += dur;
  bool harvestable = true;
  if (opts_.hint_filter) {
    harvestable = false;
    for (int h : seg.hints)
      if (opts_.hint_filter->count(t.spec->bubble_hints[h].pattern_key()))
        harvestable = true;
  }
  if (policy_ == Policy::SplitKernel && harvestable && !lp_tasks_.empty()) {
    open_hint_task_ = t.index;
    open_hint_contended_ = contended;
    contended_busy_ns_ = 0;
    Ns start = from_ts + sc_.gpu.sync_overhead;
    art_.timeline.emit(from_ts, EventKind::SyncBegin, t.stream, t.spec->name,
                       "scheduler");
    art_.timeline.emit(start, EventKind::SyncEnd, t.stream, t.spec->name,
                       "scheduler");
    emit_api(from_ts, start, "cudaStreamSynchronize", -1);
    art_.sync_cost_total += sc_.gpu.sync_overhead;
    start_tick_launcher(start);
  }
  push_event(from_ts + dur, 0, t.stream, EvType::BubbleOver, t.index, 0);
}

inline void Engine::on_bubble_over(int task, long payload) {
  TaskRt& t = tasks_[task];
  if (payload == 0 && open_hint_task_ == task && open_hint_contended_ &&
      contended_busy_ns_ > 0) {
    // The marked interval was actually carrying latency-critical traffic;
    // co-scheduled low-priority time stretches it.
    Ns extra = contended_busy_ns_ / 2;
    contended_busy_ns_ = 0;
    open_hint_contended_ = false;
    push_event(now_ + extra, 0, t.stream, EvType::BubbleOver, task, 1);
    return;
  }
  art_.timeline.emit(now_, EventKind::BubbleEnd, t.stream, t.spec->name, "");
  if (open_hint_task_ == task) {
    open_hint_task_ = -1;
    open_hint_contended_ = false;
    // Bubble closed: pause the tick launcher until the next detected bubble.
    ++tick_generation_;
    tick_deferred_ = false;
    if (policy_ == Policy::SplitKernel && hp_active_ == 0)
      push_event(now_ + sc_.sched.large_bubble_threshold, 2, -1,
                 EvType::LargeBubbleCheck, 0, tick_generation_);
  }
  ++t.segment_cursor;
  if (t.segment_cursor < t.segments.size())
    issue_segment(t);
  else
    finish_iteration(t);
}

inline void Engine::finish_iteration(TaskRt& t) {
  RequestStat& rs = art_.requests[t.cur_request];
  ++t.cur_iteration;
  if (t.cur_iteration == 1) rs.first_token = now_;
  if (t.cur_iteration >= t.n_iterations) {
    rs.done = now_;
    rs.completed = true;
    if (!t.pending_requests.empty())
      begin_request(t);
    else
      t.busy = false;
  } else {
    t.segment_cursor = 0;
    issue_segment(t);
  }
}

// ============================ instance lifecycle =============================

inline int Engine::make_instance(int task, int kernel_id, const GridBox& box,
                                 std::uint64_t uid, Priority prio, bool slice,
                                 bool consolidated, long parent_seq) {
  Instance inst;
  inst.id = static_cast<int>(instances_.size());
  inst.kernel_id = kernel_id;
  inst.task = task;
  inst.prio = prio;
  inst.stream = tasks_[task].stream;
  inst.box = box;
  inst.blocks_total = box.blocks();
  inst.block_time = kspec(kernel_id).block_time.sample_keyed(uid);
  inst.uid = uid;
  inst.parent_seq = parent_seq;
  inst.is_slice = slice;
  inst.is_consolidated = consolidated;
  instances_.push_back(inst);
  return inst.id;
}

inline void Engine::issue_instance(int inst_id, Ns ts, bool relaunch) {
  Instance& inst = instances_[inst_id];
  inst.issue_ts = ts;
  inst.arrive_ts = ts + sc_.gpu.launch_overhead;
  inst.state = InstState::Transit;
  art_.timeline.emit(ts, relaunch ? EventKind::Relaunch : EventKind::Launch,
                     inst.stream, kspec(inst.kernel_id).name,
                     "inst=" + std::to_string(inst_id));
  if (relaunch) ++art_.relaunch_count;
  emit_api(ts, ts + us(1), "cuLaunchKernel", inst_id);
  if (inst.prio == Priority::High) {
    if (hp_active_ == 0) on_hp_turned_active(ts);
    ++hp_active_;
  } else {
    lp_active_.push_back(inst_id);
  }
  push_event(inst.arrive_ts, inst.prio == Priority::High ? 0 : 1, inst.stream,
             EvType::KernelArrive, inst_id);
}

inline void Engine::on_kernel_arrive(int inst_id) {
  Instance& inst = instances_[inst_id];
  if (inst.state == InstState::Evicted) return;
  inst.state = InstState::Queued;
  streams_[inst.stream].queue.push_back(inst_id);
  dispatch();
}

// ============================ device dispatch ================================

inline bool Engine::hp_work_fits() const {
  for (const Stream& s : streams_) {
    if (s.prio != Priority::High) break;  // hp streams sorted first
    if (s.queue.empty()) continue;
    const Instance& head = instances_[s.queue.front()];
    if (head.blocks_dispatched >= head.blocks_total) continue;
    const KernelSpec& k = kspec(head.kernel_id);
    std::int64_t cap = concurrent_capacity(sc_.gpu, k, opts_.rounding);
    std::int64_t resident = head.blocks_dispatched - head.blocks_done;
    if (resident >= cap) continue;
    if (free_threads_ >= thread_cost(k)) return true;
  }
  return false;
}

inline void Engine::dispatch() {
  bool progress = true;
  while (progress) {
    progress = false;
    for (Stream& s : streams_) {
      if (s.queue.empty()) continue;

      if (policy_ == Policy::Reef && s.prio == Priority::High) {
        bool lp_draining = false;
        for (int id : lp_active_)
          if (instances_[id].state == InstState::Running) lp_draining = true;
        if (lp_draining) continue;
        if (now_ < reef_evict_gate_) continue;
      }

      std::size_t max_cand =
          policy_ == Policy::Reef && s.prio == Priority::Low ? s.queue.size()
                                                             : 1;
      for (std::size_t ci = 0; ci < max_cand && ci < s.queue.size(); ++ci) {
        Instance& inst = instances_[s.queue[ci]];
        if (inst.state == InstState::Evicted) continue;
        std::int64_t remaining = inst.blocks_total - inst.blocks_dispatched;
        if (remaining <= 0) continue;  // tail draining; successor may start

        if (s.prio == Priority::Low) {
          if (hp_work_fits()) break;
          if (policy_ == Policy::Reef && inst.blocks_dispatched == 0 &&
              (p_flag_ || inst.doomed))
            break;  // flag checked before the first wave
        }

        const KernelSpec& k = kspec(inst.kernel_id);
        std::int64_t cap = concurrent_capacity(sc_.gpu, k, opts_.rounding);
        std::int64_t resident = inst.blocks_dispatched - inst.blocks_done;
        std::int64_t n = std::min({remaining, cap - resident,
                                   free_threads_ / thread_cost(k)});
        if (n <= 0) break;  // blocked; successors stay behind it
        dispatch_wave(inst, n);
        progress = true;
        if (inst.blocks_total - inst.blocks_dispatched > 0)
          break;  // still has undispatched blocks: successors wait
      }
    }
  }
}

inline void Engine::dispatch_wave(Instance& inst, std::int64_t n) {
  note_occupancy_change(now_);
  const KernelSpec& k = kspec(inst.kernel_id);
  double own_bw = static_cast<double>(n) * k.bw_demand_per_block;
  double stretch =
      std::max(1.0, (current_bw_demand(now_) + own_bw) / sc_.gpu.hbm_bandwidth);
  Ns extra = 0;
  if (inst.prio == Priority::Low && mem_)
    extra = wave_memory_extra(inst, inst.blocks_dispatched);
  Ns wave_time =
      static_cast<Ns>(static_cast<double>(inst.block_time) * stretch) + extra;
  if (wave_time < 1) wave_time = 1;

  if (inst.state == InstState::Queued) inst.state = InstState::Running;
  bool first_hp_wave =
      inst.prio == Priority::High && inst.blocks_dispatched == 0;
  inst.blocks_dispatched += n;
  ++inst.waves_in_flight;
  free_threads_ -= n * thread_cost(k);
  wave_bw_sum_ += own_bw;
  if (inst.prio == Priority::High)
    art_.hp_blocks_launched += n;
  else
    art_.lp_blocks_launched += n;

  std::ostringstream det;
  det << "inst=" << inst.id << ";n=" << n << ";stretch=" << stretch;
  art_.timeline.emit(now_, EventKind::DispatchWave, inst.stream, k.name,
                     det.str());

  if (inst.prio == Priority::High) {
    art_.hp_stretch_sum += stretch;
    ++art_.hp_stretch_waves;
    if (first_hp_wave && pending_preempt_) {
      PreemptionRecord rec = *pending_preempt_;
      rec.delay = now_ - rec.begin;
      art_.preemptions.push_back(rec);
      art_.timeline.emit(now_, EventKind::PreemptEnd, inst.stream, k.name,
                         "delay_ns=" + std::to_string(rec.delay) +
                             (rec.consolidated ? ";consolidated=1" : ""));
      pending_preempt_.reset();
    }
  } else if (open_hint_task_ >= 0 && open_hint_contended_) {
    contended_busy_ns_ += wave_time;
  }

  push_event(now_ + wave_time, inst.prio == Priority::High ? 0 : 1,
             inst.stream, EvType::WaveDone, inst.id, static_cast<long>(n));
}

inline void Engine::on_wave_done(int inst_id, long n_blocks) {
  Instance& inst = instances_[inst_id];
  note_occupancy_change(now_);
  std::int64_t n = static_cast<std::int64_t>(n_blocks);
  inst.blocks_done += n;
  --inst.waves_in_flight;
  free_threads_ += n * thread_cost(kspec(inst.kernel_id));
  wave_bw_sum_ -=
      static_cast<double>(n) * kspec(inst.kernel_id).bw_demand_per_block;
  if (wave_bw_sum_ < 1e-6) wave_bw_sum_ = 0;
  art_.timeline.emit(now_, EventKind::WaveDone, inst.stream,
                     kspec(inst.kernel_id).name,
                     "inst=" + std::to_string(inst_id) +
                         ";n=" + std::to_string(n));

  if (inst.state == InstState::Evicted) {
    // late wave of an already-evicted kernel: count it as waste
    art_.lp_waste_blocks += n;
  } else if (inst.doomed && inst.waves_in_flight == 0) {
    evict_instance(inst, now_);
  } else if (inst.blocks_done >= inst.blocks_total) {
    on_kernel_done(inst_id);
  }

  if (policy_ == Policy::Reef && p_flag_) reef_on_flag();
  dispatch();
}

inline void Engine::on_kernel_done(int inst_id) {
  Instance& inst = instances_[inst_id];
  inst.state = InstState::Finished;
  remove_from_stream(inst);
  art_.timeline.emit(now_, EventKind::KernelDone, inst.stream,
                     kspec(inst.kernel_id).name,
                     "inst=" + std::to_string(inst.id) +
                         ";blocks=" + std::to_string(inst.blocks_total));

  if (inst.prio == Priority::High) {
    art_.hp_blocks_done += inst.blocks_total;
    --hp_active_;
    last_hp_activity_ = now_;
    int task = inst.task;
    TaskRt& t = tasks_[task];
    --t.outstanding_kernels;
    if (hp_active_ == 0) on_hp_drained();
    if (t.outstanding_kernels == 0) on_segment_done(task);
    return;
  }

  art_.lp_blocks_done += inst.blocks_total;
  drop_lp_active(inst.id);
  if (inst.parent_seq >= 0) {
    auto pit = parents_.find(inst.parent_seq);
    if (pit != parents_.end()) {
      Parent& par = pit->second;
      par.blocks_done += inst.blocks_total;
      if (par.blocks_done >= par.blocks_total && par.pending.empty()) {
        art_.lp_work_units += static_cast<double>(par.blocks_total);
        ++art_.lp_parent_completions;
        parents_.erase(pit);
      }
    }
  }

  if (policy_ == Policy::Spatial || policy_ == Policy::ExclusiveLp) {
    lp_free_run_issue(inst.task);
  } else if (policy_ == Policy::Reef) {
    --reef_outstanding_;
    art_.sync_cost_total += sc_.gpu.sync_overhead;
    emit_api(now_, now_ + sc_.gpu.sync_overhead, "cudaStreamSynchronize", -2);
    if (!p_flag_) reef_refill(now_ + sc_.gpu.sync_overhead);
  } else if (policy_ == Policy::SplitKernel) {
    --lp_outstanding_;
    if (resync_pending_ && lp_outstanding_ == 0) {
      resync_pending_ = false;
      art_.sync_cost_total += sc_.gpu.sync_overhead;
      Ns resume = now_ + sc_.gpu.sync_overhead;
      art_.timeline.emit(now_, EventKind::SyncBegin, inst.stream, "", "resync");
      art_.timeline.emit(resume, EventKind::SyncEnd, inst.stream, "", "resync");
      emit_api(now_, resume, "cudaStreamSynchronize", -3);
      if (!p_flag_)
        push_event(resume, 1, -1, EvType::TickLaunch, 0, tick_generation_);
    } else if (tick_deferred_ && !p_flag_) {
      tick_deferred_ = false;
      push_event(now_, 1, -1, EvType::TickLaunch, 0, tick_generation_);
    }
  }
}

inline void Engine::evict_instance(Instance& inst, Ns at) {
  bool was_outstanding = inst.state != InstState::Evicted;
  inst.state = InstState::Evicted;
  inst.doomed = false;
  art_.lp_waste_blocks += inst.blocks_done;
  remove_from_stream(inst);
  drop_lp_active(inst.id);
  art_.timeline.emit(at, EventKind::Evict, inst.stream,
                     kspec(inst.kernel_id).name,
                     "inst=" + std::to_string(inst.id) +
                         ";wasted=" + std::to_string(inst.blocks_done));
  reef_evicted_.push_back(inst.id);
  if (was_outstanding) --reef_outstanding_;
}

// ============================ scheduler reactions ============================

inline void Engine::on_hp_turned_active(Ns ts) {
  if (policy_ == Policy::Exclusive || policy_ == Policy::ExclusiveLp) return;
  p_flag_ = true;
  PreemptionRecord rec;
  rec.begin = ts;
  for (int id : lp_active_) {
    const Instance& i = instances_[id];
    if (i.state == InstState::Running || i.state == InstState::Queued) {
      rec.lp_in_flight = true;
      if (i.is_consolidated) rec.consolidated = true;
    }
  }
  pending_preempt_ = rec;
  art_.timeline.emit(ts, EventKind::PreemptBegin, -1, "", "");
  if (policy_ == Policy::SplitKernel) {
    ++tick_generation_;
    tick_deferred_ = false;
  }
  if (policy_ == Policy::Reef) reef_on_flag();
}

inline void Engine::on_hp_drained() {
  if (policy_ == Policy::Exclusive || policy_ == Policy::ExclusiveLp) return;
  p_flag_ = false;
  if (policy_ == Policy::Reef) {
    art_.sync_cost_total += sc_.gpu.sync_overhead;
    reef_refill(now_ + sc_.gpu.sync_overhead);
    return;
  }
  if (policy_ == Policy::SplitKernel && open_hint_task_ < 0) {
    push_event(now_ + sc_.sched.large_bubble_threshold, 2, -1,
               EvType::LargeBubbleCheck, 0, ++tick_generation_);
  }
}

inline void Engine::on_large_bubble_check(long gen) {
  if (policy_ != Policy::SplitKernel) return;
  if (gen != tick_generation_) return;
  if (hp_active_ > 0) return;
  if (now_ - last_hp_activity_ < sc_.sched.large_bubble_threshold) return;
  if (lp_tasks_.empty()) return;
  if (sc_.sched.consolidation) consolidate_large_bubble();
  Ns start = now_ + sc_.gpu.sync_overhead;
  art_.sync_cost_total += sc_.gpu.sync_overhead;
  art_.timeline.emit(now_, EventKind::SyncBegin, -1, "", "scheduler");
  art_.timeline.emit(start, EventKind::SyncEnd, -1, "", "scheduler");
  emit_api(now_, start, "cudaStreamSynchronize", -1);
  start_tick_launcher(start);
}

// ============================ splitkernel lp =================================

inline Engine::Parent& Engine::next_parent(int task) {
  for (auto& [seq, par] : parents_)
    if (par.task == task && !par.pending.empty()) return par;

  TaskRt& t = tasks_[task];
  const auto& seq = t.spec->kernel_sequence;
  // walk the repeat-expanded sequence cyclically
  std::size_t expanded = 0;
  for (const auto& kr : seq) expanded += static_cast<std::size_t>(kr.repeat);
  std::size_t pos = t.seq_cursor % expanded;
  ++t.seq_cursor;
  int kid = -1;
  for (const auto& kr : seq) {
    if (pos < static_cast<std::size_t>(kr.repeat)) {
      kid = kernel_index(kr.kernel);
      break;
    }
    pos -= static_cast<std::size_t>(kr.repeat);
  }

  Parent par;
  par.seq = global_parent_counter_++;
  par.task = task;
  par.kernel_id = kid;
  par.uid = hash_combine(hash_combine(sc_.seed, hash_str(t.spec->name)),
                         0xabcd0000ull + t.local_parent_counter++);
  const KernelSpec& k = kspec(kid);
  par.blocks_total = k.grid.blocks();
  auto it = plans_.find(kid);
  if (it != plans_.end()) {
    for (const GridBox& b : it->second.slices) par.pending.push_back(b);
  } else {
    par.pending.push_back({0, 0, 0, k.grid.x, k.grid.y, k.grid.z});
  }
  auto [ins, ok] = parents_.emplace(par.seq, std::move(par));
  return ins->second;
}

inline Ns Engine::predicted_time_for(int kernel_id, std::int64_t blocks) const {
  auto pit = plans_.find(kernel_id);
  if (pit != plans_.end() && blocks == pit->second.blocks_per_slice)
    return pit->second.predicted_slice_time;
  return exec_time_model(sc_.gpu, kspec(kernel_id), blocks, 0.0,
                         opts_.rounding);
}

inline void Engine::start_tick_launcher(Ns at) {
  if (lp_tasks_.empty()) return;
  ++tick_generation_;
  slices_since_resync_ = 0;
  resync_pending_ = false;
  tick_deferred_ = false;
  push_event(at, 1, -1, EvType::TickLaunch, 0, tick_generation_);
}

inline void Engine::tick_launch() {
  if (p_flag_ || lp_tasks_.empty()) return;
  if (lp_outstanding_ >= 2) {
    tick_deferred_ = true;  // one running + one pending: wait for completion
    return;
  }
  int task = lp_tasks_[tick_rr_cursor_ % lp_tasks_.size()];
  tick_rr_cursor_ = (tick_rr_cursor_ + 1) % static_cast<int>(lp_tasks_.size());
  Parent& par = next_parent(task);
  if (par.pending.empty()) return;

  GridBox box = par.pending.front();
  par.pending.pop_front();
  bool consolidated = par.consolidated_boxes > 0;
  if (par.consolidated_boxes > 0) --par.consolidated_boxes;
  Ns predicted = predicted_time_for(par.kernel_id, box.blocks());

  int id = make_instance(par.task, par.kernel_id, box, par.uid, Priority::Low,
                         true, consolidated, par.seq);
  issue_instance(id, now_);
  ++lp_outstanding_;

  ++slices_since_resync_;
  if (slices_since_resync_ >= sc_.sched.resync_every) {
    slices_since_resync_ = 0;
    resync_pending_ = true;  // the next launch resumes from the drain sync
    return;
  }
  push_event(now_ + tick_interval(predicted, sc_.gpu.launch_overhead), 1, -1,
             EvType::TickLaunch, 0, tick_generation_);
}

inline void Engine::consolidate_large_bubble() {
  Ns interval = predictor_->predict();
  for (int ti : lp_tasks_) {
    Parent& par = next_parent(ti);
    if (par.pending.size() <= 1) continue;
    const KernelSpec& k = kspec(par.kernel_id);
    std::vector<GridBox> pending(par.pending.begin(), par.pending.end());
    ExecOracle oracle = make_oracle(par.kernel_id);
    std::int64_t take = consolidation_prefix(
        static_cast<std::int64_t>(pending.size()), interval,
        sc_.sched.safety_factor, [&](std::int64_t cnt) {
          std::int64_t blocks = 0;
          for (std::int64_t i = 0; i < cnt; ++i) blocks += pending[i].blocks();
          return oracle(blocks);
        });
    if (take <= 1) continue;
    std::vector<GridBox> head(pending.begin(), pending.begin() + take);
    std::vector<GridBox> merged = consolidate(k.name, k.grid, head);
    par.pending.clear();
    for (const GridBox& b : merged) par.pending.push_back(b);
    for (std::size_t i = static_cast<std::size_t>(take); i < pending.size(); ++i)
      par.pending.push_back(pending[i]);
    par.consolidated_boxes = static_cast<int>(merged.size());
    art_.timeline.emit(now_, EventKind::Launch, tasks_[ti].stream, k.name,
                       "consolidate=" + std::to_string(take) + "->" +
                           std::to_string(merged.size()));
  }
}

// ============================ spatial / reef lp ==============================

inline void Engine::lp_free_run_issue(int task) {
  Parent& par = next_parent(task);
  if (par.pending.empty()) return;
  GridBox box = par.pending.front();
  par.pending.pop_front();
  int id = make_instance(par.task, par.kernel_id, box, par.uid, Priority::Low,
                         false, false, par.seq);
  issue_instance(id, now_);
}

inline void Engine::reef_refill(Ns at) {
  if (policy_ != Policy::Reef || lp_tasks_.empty()) return;
  while (reef_outstanding_ < sc_.reef.queue_cap) {
    if (!reef_evicted_.empty()) {
      int old_id = reef_evicted_.front();
      reef_evicted_.pop_front();
      int task = instances_[old_id].task;
      int kid = instances_[old_id].kernel_id;
      GridBox box = instances_[old_id].box;
      std::uint64_t uid = instances_[old_id].uid;
      long pseq = instances_[old_id].parent_seq;
      int inst_id =
          make_instance(task, kid, box, uid, Priority::Low, false, false, pseq);
      issue_instance(inst_id, at, /*relaunch=*/true);
    } else {
      int task = lp_tasks_[reef_rr_cursor_ % lp_tasks_.size()];
      reef_rr_cursor_ =
          (reef_rr_cursor_ + 1) % static_cast<int>(lp_tasks_.size());
      Parent& par = next_parent(task);
      if (par.pending.empty()) return;
      GridBox box = par.pending.front();
      par.pending.pop_front();
      int inst_id = make_instance(task, par.kernel_id, box, par.uid,
                                  Priority::Low, false, false, par.seq);
      issue_instance(inst_id, at);
    }
    ++reef_outstanding_;
  }
}

inline void Engine::reef_on_flag() {
  // The oldest started kernel (the head) completes; everything else quits:
  // queued kernels at the flag check, tail-started kernels once their
  // in-flight waves drain (their progress is discarded).
  int head_id = -1;
  for (int id : lp_active_) {
    const Instance& i = instances_[id];
    if (i.state == InstState::Running && !i.doomed) {
      head_id = id;
      break;
    }
  }
  int evicted_now = 0;
  std::vector<int> snapshot = lp_active_;
  for (int id : snapshot) {
    Instance& i = instances_[id];
    if (i.id == head_id) continue;
    if (i.state == InstState::Queued || i.state == InstState::Transit) {
      evict_instance(i, now_);
      ++evicted_now;
    } else if (i.state == InstState::Running && !i.doomed) {
      i.doomed = true;
      if (i.waves_in_flight == 0) {
        evict_instance(i, now_);
        ++evicted_now;
      }
    }
  }
  if (evicted_now > 0) {
    Ns gate =
        now_ + static_cast<Ns>(evicted_now) * sc_.reef.evict_cost_per_kernel;
    if (gate > reef_evict_gate_) {
      reef_evict_gate_ = gate;
      push_event(gate, 2, -1, EvType::Poke);
    }
  }
}

// ============================ memory =========================================

inline Ns Engine::wave_memory_extra(const Instance& inst, long wave_no) {
  if (!mem_) return 0;
  TaskRt& t = tasks_[inst.task];
  if (t.chunk_ids.empty()) return 0;
  Ns worst = 0;
  for (int a = 0; a < sc_.mem.accesses_per_wave; ++a) {
    std::uint64_t key = hash_combine(
        hash_combine(inst.uid, static_cast<std::uint64_t>(wave_no) * 977),
        static_cast<std::uint64_t>(a));
    std::int64_t cid = t.chunk_ids[splitmix64(key) % t.chunk_ids.size()];
    AccessResult r = mem_->access(cid, now_);
    if (r.tier == Tier::Local) continue;
    art_.timeline.emit(now_, EventKind::MemFault, inst.stream,
                       kspec(inst.kernel_id).name,
                       std::string("tier=") +
                           (r.tier == Tier::Peer ? "peer" : "dram") +
                           ";chunk=" + std::to_string(cid));
    if (r.tier == Tier::Peer) {
      const NvlinkPeer& link = sc_.gpu.nvlink_peers[r.peer];
      Ns dur = std::max<Ns>(r.latency, 1);
      mem_->congestion().add_transfer(
          r.peer, static_cast<double>(kChunkBytes) / to_sec(dur), now_ + dur);
      // The DMA engine holds HBM bandwidth at the link's nominal rate for
      // the whole (congestion-extended) transfer.
      transfer_heap_.push({now_ + dur, link.bandwidth});
      transfer_bw_sum_ += link.bandwidth;
    }
    worst = std::max(worst, r.latency);
  }
  return worst;
}

// ============================ main loop ======================================

inline RunArtifacts Engine::run() {
  setup();

  while (!eq_.empty()) {
    Ev ev = eq_.top();
    if (ev.ts > sc_.horizon) break;
    eq_.pop();
    now_ = ev.ts;
    switch (ev.type) {
      case EvType::RequestArrival:
        on_request_arrival(ev.a, static_cast<std::size_t>(ev.b));
        break;
      case EvType::BubbleOver:
        on_bubble_over(ev.a, ev.b);
        break;
      case EvType::KernelArrive:
        on_kernel_arrive(ev.a);
        break;
      case EvType::WaveDone:
        on_wave_done(ev.a, ev.b);
        break;
      case EvType::TickLaunch:
        if (ev.b == tick_generation_) tick_launch();
        break;
      case EvType::LargeBubbleCheck:
        on_large_bubble_check(ev.b);
        break;
      case EvType::Poke:
        dispatch();
        break;
      case EvType::ProbeTick: {
        if (mem_ && !sc_.gpu.nvlink_peers.empty()) {
          for (std::size_t l = 0; l < sc_.gpu.nvlink_peers.size(); ++l) {
            double score = mem_->congestion().probe(static_cast<int>(l), now_);
            std::ostringstream det;
            det << "link=" << l << ";score=" << score;
            art_.timeline.emit(now_, EventKind::Probe, -1, "", det.str());
          }
          Ns period =
              mem_->congestion().any_score_above(1.2) ? ms(10) : ms(100);
          push_event(now_ + period, 2, -1, EvType::ProbeTick);
        }
        break;
      }
      case EvType::UtilTick: {
        UtilSample s;
        s.ts = now_;
        s.sm_active = static_cast<double>(total_threads_ - free_threads_) /
                      static_cast<double>(total_threads_);
        s.hbm_bw =
            std::min(1.0, current_bw_demand(now_) / sc_.gpu.hbm_bandwidth);
        art_.util_samples.push_back(s);
        push_event(now_ + opts_.util_sample_period, 2, -1, EvType::UtilTick);
        break;
      }
    }
  }

  // Deadlock check: the queue must only run dry when no serving task still
  // has work in hand.
  if (eq_.empty()) {
    for (const TaskRt& t : tasks_) {
      if (t.spec->priority == Priority::High && t.busy) {
        std::ostringstream dump;
        dump << "engine deadlock: task '" << t.spec->name
             << "' busy with request " << t.cur_request << " at t=" << now_
             << "; stream queues:";
        for (const Stream& s : streams_)
          dump << " s" << s.id << "=" << s.queue.size();
        throw EngineError(dump.str());
      }
    }
  }

  note_occupancy_change(sc_.horizon);
  for (const Instance& i : instances_) {
    if (i.state == InstState::Running || i.state == InstState::Queued ||
        i.state == InstState::Transit) {
      std::int64_t undone = i.blocks_dispatched - i.blocks_done;
      if (i.prio == Priority::High)
        art_.hp_blocks_in_flight_at_cutoff += undone;
      else
        art_.lp_blocks_in_flight_at_cutoff += undone;
    }
  }
  art_.sm_active_fraction =
      sm_busy_integral_ /
      (static_cast<double>(total_threads_) * static_cast<double>(sc_.horizon));
  art_.timeline.finalize();
  std::stable_sort(art_.api_rows.begin(), art_.api_rows.end(),
                   [](const ApiTraceRow& a, const ApiTraceRow& b) {
                     return a.ts_start < b.ts_start;
                   });
  return art_;
}

inline RunArtifacts run_scenario(const ScenarioSpec& sc, Policy policy,
                                 EngineOptions opts = {}) {
  Engine eng(sc, policy, opts);
  return eng.run();
}

}  // namespace microslice
