#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "microslice/common.hpp"
#include "microslice/model.hpp"

namespace microslice {

constexpr std::int64_t kChunkBytes = 2ll * 1024 * 1024;  // 2 MB granularity

enum class Tier { Local, Peer, Dram };

struct Chunk {
  int owner_task = -1;
  Tier tier = Tier::Local;
  int peer = -1;  // valid when tier == Peer
  bool pinned = false;
};

struct ChunkRelocation {
  std::int64_t chunk_id = 0;
  Tier from = Tier::Local;
  int from_peer = -1;
  Tier to = Tier::Local;
  int to_peer = -1;
};

// Per-link congestion bookkeeping: a calibrated baseline latency and the
// load observed through registered transfers plus configured background
// traffic. score = T_curr / T_base.
class CongestionTable {
 public:
  struct Link {
    NvlinkPeer cfg;
    Ns t_base = 0;
    bool calibrated = false;
    std::deque<std::pair<Ns, double>> active;  // (end_ts, bytes/s)
  };

  CongestionTable() = default;

  void init(const std::vector<NvlinkPeer>& peers, double probe_bytes) {
    probe_bytes_ = probe_bytes;
    links_.clear();
    for (const auto& p : peers) {
      Link l;
      l.cfg = p;
      links_.push_back(l);
    }
  }

  std::size_t size() const { return links_.size(); }
  const Link& link(int i) const { return links_.at(i); }

  // Baseline transfer latency for the probe packet under zero load.
  void calibrate() {
    for (auto& l : links_) {
      l.t_base = l.cfg.baseline_latency +
                 static_cast<Ns>(probe_bytes_ / l.cfg.bandwidth * 1e9);
      l.calibrated = true;
    }
  }

  void add_transfer(int link, double rate, Ns end_ts) {
    links_.at(link).active.push_back({end_ts, rate});
  }

  double load(int link, Ns now) {
    Link& l = links_.at(link);
    double sum = l.cfg.background_load;
    for (auto it = l.active.begin(); it != l.active.end();) {
      if (it->first <= now)
        it = l.active.erase(it);
      else {
        sum += it->second;
        ++it;
      }
    }
    return sum;
  }

  // Latency of moving `bytes` over the link under its current load.
  Ns transfer_time(int link, std::int64_t bytes, Ns now) {
    Link& l = links_.at(link);
    double base = static_cast<double>(l.cfg.baseline_latency) +
                  static_cast<double>(bytes) / l.cfg.bandwidth * 1e9;
    double factor = 1.0 + load(link, now) / l.cfg.bandwidth;
    return static_cast<Ns>(base * factor);
  }

  double probe(int link, Ns now) {
    Link& l = links_.at(link);
    if (!l.calibrated)
      throw ValidationError("memory.probe",
                            "link " + std::to_string(link) +
                                " probed before baseline calibration");
    Ns t_curr = transfer_time(link, static_cast<std::int64_t>(probe_bytes_),
                              now);
    double score = static_cast<double>(t_curr) / static_cast<double>(l.t_base);
    scores_.resize(links_.size(), 1.0);
    scores_[link] = score;
    return score;
  }

  double last_score(int link) const {
    return link < static_cast<int>(scores_.size()) ? scores_[link] : 1.0;
  }

  bool any_score_above(double v) const {
    for (double s : scores_)
      if (s > v) return true;
    return false;
  }

 private:
  double probe_bytes_ = 4.0 * 1024 * 1024;
  std::vector<Link> links_;
  std::vector<double> scores_;
};

struct AccessResult {
  Tier tier = Tier::Local;
  int peer = -1;
  Ns latency = 0;     // extra time the access contributes
};

// Chunk placement across local HBM, NVLink-peer HBM and DRAM, with priority
// pinning and either contention-first or round-robin eviction.
class MemoryManager {
 public:
  MemoryManager(const GpuConfig& gpu, const MemParams& params)
      : gpu_(gpu), params_(params) {
    local_capacity_ = static_cast<std::int64_t>(params.hbm_gb * 1e9 / kChunkBytes);
    peer_capacity_.assign(gpu.nvlink_peers.size(), 0);
    for (std::size_t i = 0; i < gpu.nvlink_peers.size(); ++i) {
      double free_gb = i < params.peer_free_gb.size() ? params.peer_free_gb[i]
                                                      : 0.0;
      peer_capacity_[i] = static_cast<std::int64_t>(free_gb * 1e9 / kChunkBytes);
    }
    peer_used_.assign(gpu.nvlink_peers.size(), 0);
    congestion_.init(gpu.nvlink_peers, params.probe_mb * 1024 * 1024);
    congestion_.calibrate();
  }

  CongestionTable& congestion() { return congestion_; }
  const std::vector<Chunk>& chunks() const { return chunks_; }
  std::int64_t local_used() const { return local_used_; }
  std::int64_t local_capacity() const { return local_capacity_; }

  // Chunk ids owned by `task`.
  std::vector<std::int64_t> chunks_of(int task) const {
    std::vector<std::int64_t> out;
    for (std::size_t i = 0; i < chunks_.size(); ++i)
      if (chunks_[i].owner_task == task)
        out.push_back(static_cast<std::int64_t>(i));
    return out;
  }

  double off_device_fraction(int task) const {
    std::int64_t total = 0, off = 0;
    for (const auto& c : chunks_)
      if (c.owner_task == task) {
        ++total;
        if (c.tier != Tier::Local) ++off;
      }
    return total == 0 ? 0.0 : static_cast<double>(off) / total;
  }

  // Destination for the next evicted low-priority chunk.
  struct Destination {
    Tier tier = Tier::Dram;
    int peer = -1;
  };

  Destination evict_select(Ns now) {
    if (params_.eviction == EvictionPolicy::ContentionFirst) {
      int best = -1;
      double best_score = 0.0;
      for (std::size_t i = 0; i < peer_capacity_.size(); ++i) {
        if (peer_used_[i] >= peer_capacity_[i]) continue;
        double s = congestion_.probe(static_cast<int>(i), now);
        if (s >= params_.score_threshold) continue;
        if (best < 0 || s < best_score) {
          best = static_cast<int>(i);
          best_score = s;
        }
      }
      if (best >= 0) return {Tier::Peer, best};
      return {Tier::Dram, -1};
    }
    // Round-robin over peers with free space, ignoring congestion.
    for (std::size_t step = 0; step < peer_capacity_.size(); ++step) {
      int i = static_cast<int>((rr_cursor_ + step) % peer_capacity_.size());
      if (peer_used_[i] < peer_capacity_[i]) {
        rr_cursor_ = (i + 1) % static_cast<int>(peer_capacity_.size());
        return {Tier::Peer, i};
      }
    }
    return {Tier::Dram, -1};
  }

  // Allocate `bytes` for `task`. High-priority chunks are pinned local and
  // may displace unpinned low-priority chunks; low-priority chunks spill to
  // the eviction destination once local HBM fills up.
  std::vector<std::int64_t> allocate(int task, Priority prio,
                                     std::int64_t bytes, Ns now,
                                     std::vector<ChunkRelocation>* moves =
                                         nullptr) {
    std::int64_t need = (bytes + kChunkBytes - 1) / kChunkBytes;
    std::vector<std::int64_t> ids;
    ids.reserve(need);
    for (std::int64_t i = 0; i < need; ++i) {
      Chunk c;
      c.owner_task = task;
      c.pinned = prio == Priority::High;
      if (local_used_ < local_capacity_) {
        c.tier = Tier::Local;
        ++local_used_;
      } else if (prio == Priority::High) {
        std::int64_t victim = find_unpinned_local();
        if (victim < 0)
          throw ValidationError("memory.allocate",
                                "local HBM exhausted by pinned chunks");
        relocate(victim, now, moves);
        c.tier = Tier::Local;
        ++local_used_;
      } else {
        Destination d = evict_select(now);
        c.tier = d.tier;
        c.peer = d.peer;
        if (d.tier == Tier::Peer) ++peer_used_[d.peer];
      }
      check_exhaustion();
      chunks_.push_back(c);
      ids.push_back(static_cast<std::int64_t>(chunks_.size()) - 1);
    }
    return ids;
  }

  // Extra latency of touching `chunk_id` from a kernel of its owner, plus
  // the link the access landed on (for load registration by the caller).
  AccessResult access(std::int64_t chunk_id, Ns now) {
    const Chunk& c = chunks_.at(chunk_id);
    AccessResult r;
    r.tier = c.tier;
    r.peer = c.peer;
    switch (c.tier) {
      case Tier::Local:
        r.latency = 0;
        break;
      case Tier::Peer:
        r.latency = congestion_.transfer_time(c.peer, kChunkBytes, now);
        break;
      case Tier::Dram: {
        Ns peer_equiv = nominal_peer_chunk_time();
        r.latency = static_cast<Ns>(static_cast<double>(peer_equiv) *
                                    params_.dram_factor);
        break;
      }
    }
    return r;
  }

  bool chunk_pinned(std::int64_t id) const { return chunks_.at(id).pinned; }

 private:
  std::int64_t find_unpinned_local() const {
    for (std::size_t i = 0; i < chunks_.size(); ++i)
      if (chunks_[i].tier == Tier::Local && !chunks_[i].pinned)
        return static_cast<std::int64_t>(i);
    return -1;
  }

  void relocate(std::int64_t id, Ns now, std::vector<ChunkRelocation>* moves) {
    Chunk& c = chunks_[id];
    if (c.pinned)
      throw EngineError("memory: attempted to evict a pinned chunk");
    ChunkRelocation m;
    m.chunk_id = id;
    m.from = c.tier;
    m.from_peer = c.peer;
    Destination d = evict_select(now);
    if (c.tier == Tier::Local) --local_used_;
    c.tier = d.tier;
    c.peer = d.peer;
    if (d.tier == Tier::Peer) ++peer_used_[d.peer];
    m.to = c.tier;
    m.to_peer = c.peer;
    if (moves) moves->push_back(m);
  }

  void check_exhaustion() const {
    // DRAM is modeled as unbounded; this hook exists so configurations with
    // a finite dram ceiling could fail loudly. Nothing to do today.
  }

  Ns nominal_peer_chunk_time() const {
    if (!gpu_.nvlink_peers.empty()) {
      const auto& p = gpu_.nvlink_peers.front();
      return p.baseline_latency +
             static_cast<Ns>(static_cast<double>(kChunkBytes) / p.bandwidth *
                             1e9);
    }
    return us(2) + static_cast<Ns>(static_cast<double>(kChunkBytes) / 600e9 *
                                   1e9);
  }

  GpuConfig gpu_;
  MemParams params_;
  std::int64_t local_capacity_ = 0;
  std::int64_t local_used_ = 0;
  std::vector<std::int64_t> peer_capacity_;
  std::vector<std::int64_t> peer_used_;
  int rr_cursor_ = 0;
  std::vector<Chunk> chunks_;
  CongestionTable congestion_;
};

}  // namespace microslice
