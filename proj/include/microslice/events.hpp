#pragma once

#include <algorithm>
#include <cstdint>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "microslice/common.hpp"

namespace microslice {

enum class EventKind {
  Launch,
  DispatchWave,
  WaveDone,
  KernelDone,
  SyncBegin,
  SyncEnd,
  PreemptBegin,
  PreemptEnd,
  Evict,
  Relaunch,
  BubbleBegin,
  BubbleEnd,
  MemFault,
  Probe,
};

inline const char* event_kind_name(EventKind k) {
  switch (k) {
    case EventKind::Launch: return "launch";
    case EventKind::DispatchWave: return "dispatch_wave";
    case EventKind::WaveDone: return "wave_done";
    case EventKind::KernelDone: return "kernel_done";
    case EventKind::SyncBegin: return "sync_begin";
    case EventKind::SyncEnd: return "sync_end";
    case EventKind::PreemptBegin: return "preempt_begin";
    case EventKind::PreemptEnd: return "preempt_end";
    case EventKind::Evict: return "evict";
    case EventKind::Relaunch: return "relaunch";
    case EventKind::BubbleBegin: return "bubble_begin";
    case EventKind::BubbleEnd: return "bubble_end";
    case EventKind::MemFault: return "mem_fault";
    case EventKind::Probe: return "probe";
  }
  return "?";
}

struct SimEvent {
  Ns ts = 0;
  EventKind kind = EventKind::Launch;
  int stream = -1;
  std::string kernel;   // kernel or task name, empty when not applicable
  std::string detail;   // kind-specific free-form payload
};

class Timeline {
 public:
  // Emission may be out of order while the engine interleaves host- and
  // device-side effects; finalize() puts the record into timestamp order
  // (stable, so same-timestamp events keep their causal emission order).
  void emit(Ns ts, EventKind kind, int stream, std::string kernel,
            std::string detail = {}) {
    events_.push_back({ts, kind, stream, std::move(kernel), std::move(detail)});
  }

  void finalize() {
    std::stable_sort(events_.begin(), events_.end(),
                     [](const SimEvent& a, const SimEvent& b) {
                       return a.ts < b.ts;
                     });
  }

  bool is_monotonic() const {
    for (std::size_t i = 1; i < events_.size(); ++i)
      if (events_[i].ts < events_[i - 1].ts) return false;
    return true;
  }

  const std::vector<SimEvent>& events() const { return events_; }
  std::size_t size() const { return events_.size(); }

  // Newline-delimited JSON, one event per line.
  void write_ndjson(std::ostream& os) const {
    for (const auto& e : events_) {
      os << "{\"ts_ns\":" << e.ts << ",\"kind\":\"" << event_kind_name(e.kind)
         << "\",\"stream\":" << e.stream << ",\"kernel\":\"" << e.kernel
         << "\",\"detail\":\"" << e.detail << "\"}\n";
    }
  }

  std::string to_ndjson() const {
    std::ostringstream os;
    write_ndjson(os);
    return os.str();
  }

  // Compact CSV: ts_ns,kind,stream,kernel,detail
  void write_csv(std::ostream& os) const {
    os << "ts_ns,kind,stream,kernel,detail\n";
    for (const auto& e : events_) {
      os << e.ts << ',' << event_kind_name(e.kind) << ',' << e.stream << ','
         << e.kernel << ',' << e.detail << '\n';
    }
  }

 private:
  std::vector<SimEvent> events_;
};

// Host-side API span, the shape a profiler trace row would have.
struct ApiTraceRow {
  Ns ts_start = 0;
  Ns ts_end = 0;
  std::string api_tag;
  std::int64_t correlation = 0;
};

// Periodic device utilization sample.
struct UtilSample {
  Ns ts = 0;
  double sm_active = 0.0;  // fraction of SM thread slots occupied
  double hbm_bw = 0.0;     // fraction of HBM bandwidth demanded
};

}  // namespace microslice
