#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "microslice/common.hpp"
#include "microslice/model.hpp"
#include "microslice/tracegen.hpp"

namespace microslice {

using nlohmann::json;

namespace detail {

inline const json& require(const json& obj, const std::string& key,
                           const std::string& path) {
  if (!obj.is_object() || !obj.contains(key))
    throw ValidationError(path + "/" + key, "missing required field");
  return obj.at(key);
}

inline Ns parse_duration(const json& j, const std::string& path) {
  if (!j.is_object() || !j.contains("value") || !j.contains("unit"))
    throw ValidationError(path, "duration must be {\"value\": n, \"unit\": \"ns|us|ms\"}");
  double v = j.at("value").get<double>();
  std::string unit = j.at("unit").get<std::string>();
  if (unit == "ns") return static_cast<Ns>(v);
  if (unit == "us") return static_cast<Ns>(v * 1000.0);
  if (unit == "ms") return static_cast<Ns>(v * 1.0e6);
  throw ValidationError(path + "/unit", "unknown unit '" + unit + "'");
}

inline json duration_json(Ns t) {
  if (t % kNsPerMs == 0 && t != 0)
    return json{{"value", t / kNsPerMs}, {"unit", "ms"}};
  if (t % kNsPerUs == 0 && t != 0)
    return json{{"value", t / kNsPerUs}, {"unit", "us"}};
  return json{{"value", t}, {"unit", "ns"}};
}

inline DurationDist parse_duration_dist(const json& j, const std::string& path) {
  std::string kind = require(j, "dist", path).get<std::string>();
  if (kind == "point")
    return DurationDist::point(parse_duration(require(j, "value", path), path + "/value"));
  if (kind == "uniform")
    return DurationDist::uniform(
        parse_duration(require(j, "lo", path), path + "/lo"),
        parse_duration(require(j, "hi", path), path + "/hi"));
  if (kind == "empirical") {
    std::vector<DurationDist::CdfPoint> pts;
    const json& arr = require(j, "points", path);
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const json& p = arr.at(i);
      std::string ppath = path + "/points/" + std::to_string(i);
      pts.push_back({parse_duration(require(p, "t", ppath), ppath + "/t"),
                     require(p, "cdf", ppath).get<double>()});
    }
    return DurationDist::empirical(std::move(pts));
  }
  if (kind == "default_cdf") return default_block_time_cdf();
  throw ValidationError(path + "/dist", "unknown distribution kind '" + kind + "'");
}

// Dimensionless count distribution (iterations per request): raw numbers.
inline DurationDist parse_count_dist(const json& j, const std::string& path) {
  std::string kind = require(j, "dist", path).get<std::string>();
  if (kind == "point")
    return DurationDist::point(require(j, "value", path).get<Ns>());
  if (kind == "uniform")
    return DurationDist::uniform(require(j, "lo", path).get<Ns>(),
                                 require(j, "hi", path).get<Ns>());
  throw ValidationError(path + "/dist", "count dist must be point or uniform");
}

inline json duration_dist_json(const DurationDist& d) {
  switch (d.kind()) {
    case DurationDist::Kind::Point:
      return json{{"dist", "point"}, {"value", duration_json(d.min_value())}};
    case DurationDist::Kind::Uniform:
      return json{{"dist", "uniform"},
                  {"lo", duration_json(d.min_value())},
                  {"hi", duration_json(d.max_value())}};
    case DurationDist::Kind::Empirical: {
      json pts = json::array();
      for (const auto& p : d.breakpoints())
        pts.push_back(json{{"t", duration_json(p.value)}, {"cdf", p.cum}});
      return json{{"dist", "empirical"}, {"points", pts}};
    }
  }
  return {};
}

inline json count_dist_json(const DurationDist& d) {
  if (d.kind() == DurationDist::Kind::Point)
    return json{{"dist", "point"}, {"value", d.min_value()}};
  return json{{"dist", "uniform"}, {"lo", d.min_value()}, {"hi", d.max_value()}};
}

}  // namespace detail

// ---- arrival trace CSV -----------------------------------------------------

inline std::vector<Ns> load_arrivals_csv(std::istream& is,
                                         const std::string& path = "csv") {
  std::string line;
  if (!std::getline(is, line) || line.substr(0, 10) != "arrival_ns")
    throw ValidationError(path, "expected header 'arrival_ns'");
  std::vector<Ns> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    out.push_back(static_cast<Ns>(std::stoll(line)));
  }
  return out;
}

inline void save_arrivals_csv(std::ostream& os, const std::vector<Ns>& arr) {
  os << "arrival_ns\n";
  for (Ns t : arr) os << t << "\n";
}

// ---- scenario JSON ----------------------------------------------------------

inline ScenarioSpec scenario_from_json(const json& root,
                                       std::uint64_t* seed_override = nullptr) {
  using detail::parse_duration;
  using detail::parse_duration_dist;
  using detail::require;

  ScenarioSpec s;
  s.name = root.value("name", "scenario");
  s.seed = root.value("seed", 1ull);
  if (seed_override) s.seed = *seed_override;
  if (root.contains("horizon"))
    s.horizon = parse_duration(root.at("horizon"), "/horizon");

  const json& g = require(root, "gpu", "");
  s.gpu.n_sm = require(g, "n_sm", "/gpu").get<int>();
  s.gpu.sm_max_threads = require(g, "sm_max_threads", "/gpu").get<int>();
  s.gpu.hbm_bandwidth = require(g, "hbm_bandwidth", "/gpu").get<double>();
  s.gpu.launch_overhead =
      parse_duration(require(g, "launch_overhead", "/gpu"), "/gpu/launch_overhead");
  s.gpu.sync_overhead =
      parse_duration(require(g, "sync_overhead", "/gpu"), "/gpu/sync_overhead");
  s.gpu.dram_latency_factor = g.value("dram_latency_factor", 4.0);
  if (g.contains("nvlink_peers")) {
    const json& peers = g.at("nvlink_peers");
    for (std::size_t i = 0; i < peers.size(); ++i) {
      const json& p = peers.at(i);
      std::string ppath = "/gpu/nvlink_peers/" + std::to_string(i);
      NvlinkPeer np;
      np.peer_id = require(p, "peer_id", ppath).get<int>();
      np.baseline_latency = parse_duration(require(p, "baseline_latency", ppath),
                                           ppath + "/baseline_latency");
      np.bandwidth = require(p, "bandwidth", ppath).get<double>();
      np.background_load = p.value("background_load", 0.0);
      s.gpu.nvlink_peers.push_back(np);
    }
  }

  const json& kernels = require(root, "kernels", "");
  for (std::size_t i = 0; i < kernels.size(); ++i) {
    const json& k = kernels.at(i);
    std::string kpath = "/kernels/" + std::to_string(i);
    KernelSpec ks;
    ks.name = require(k, "name", kpath).get<std::string>();
    const json& grid = require(k, "grid", kpath);
    if (!grid.is_array() || grid.size() != 3)
      throw ValidationError(kpath + "/grid", "grid must be [gx, gy, gz]");
    ks.grid = {grid.at(0).get<int>(), grid.at(1).get<int>(), grid.at(2).get<int>()};
    ks.threads_per_block = require(k, "threads_per_block", kpath).get<int>();
    ks.occupancy = k.value("occupancy", 1.0);
    ks.block_time = parse_duration_dist(require(k, "block_time", kpath),
                                        kpath + "/block_time");
    ks.bw_demand_per_block = k.value("bw_demand_per_block", 0.0);
    ks.splittable = k.value("splittable", true);
    if (k.contains("measured_time")) {
      const json& mt = k.at("measured_time");
      for (std::size_t r = 0; r < mt.size(); ++r) {
        const json& row = mt.at(r);
        std::string rpath = kpath + "/measured_time/" + std::to_string(r);
        ks.measured_time.push_back(
            {require(row, "n_blocks", rpath).get<std::int64_t>(),
             parse_duration(require(row, "time", rpath), rpath + "/time")});
      }
    }
    s.kernels.push_back(std::move(ks));
  }

  const json& tasks = require(root, "tasks", "");
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const json& t = tasks.at(i);
    std::string tpath = "/tasks/" + std::to_string(i);
    TaskSpec ts;
    ts.name = require(t, "name", tpath).get<std::string>();
    std::string prio = require(t, "priority", tpath).get<std::string>();
    if (prio == "high")
      ts.priority = Priority::High;
    else if (prio == "low")
      ts.priority = Priority::Low;
    else
      throw ValidationError(tpath + "/priority", "must be 'high' or 'low'");
    std::string kind = require(t, "kind", tpath).get<std::string>();
    if (kind == "serving")
      ts.kind = TaskKind::Serving;
    else if (kind == "batch")
      ts.kind = TaskKind::Batch;
    else
      throw ValidationError(tpath + "/kind", "must be 'serving' or 'batch'");
    const json& seq = require(t, "kernels", tpath);
    for (std::size_t ki = 0; ki < seq.size(); ++ki) {
      const json& kr = seq.at(ki);
      std::string kpath = tpath + "/kernels/" + std::to_string(ki);
      ts.kernel_sequence.push_back(
          {require(kr, "kernel", kpath).get<std::string>(), kr.value("repeat", 1)});
    }
    if (t.contains("bubble_hints")) {
      const json& hints = t.at("bubble_hints");
      for (std::size_t hi = 0; hi < hints.size(); ++hi) {
        const json& h = hints.at(hi);
        std::string hpath = tpath + "/bubble_hints/" + std::to_string(hi);
        BubbleHint bh;
        std::string hk = require(h, "kind", hpath).get<std::string>();
        if (hk == "mem_sync")
          bh.kind = HintKind::MemSync;
        else if (hk == "inter_gpu_comm")
          bh.kind = HintKind::InterGpuComm;
        else if (hk == "cpu_bound")
          bh.kind = HintKind::CpuBound;
        else
          throw ValidationError(hpath + "/kind", "unknown hint kind '" + hk + "'");
        for (const auto& p : require(h, "pattern", hpath))
          bh.pattern.push_back(p.get<std::string>());
        bh.duration = parse_duration_dist(require(h, "duration", hpath),
                                          hpath + "/duration");
        bh.position = h.value("position", -1);
        bh.contended = h.value("contended", false);
        ts.bubble_hints.push_back(std::move(bh));
      }
    }
    ts.memory_footprint =
        static_cast<std::int64_t>(t.value("memory_footprint_gb", 0.0) * 1e9);
    ts.trace = t.value("trace", std::string());
    s.tasks.push_back(std::move(ts));
  }

  if (root.contains("traces")) {
    const json& traces = root.at("traces");
    for (std::size_t i = 0; i < traces.size(); ++i) {
      const json& t = traces.at(i);
      std::string tpath = "/traces/" + std::to_string(i);
      RequestTrace rt;
      rt.name = require(t, "name", tpath).get<std::string>();
      if (t.contains("arrivals_ns")) {
        for (const auto& a : t.at("arrivals_ns"))
          rt.arrivals.push_back(a.get<Ns>());
      } else if (t.contains("csv")) {
        std::ifstream f(t.at("csv").get<std::string>());
        if (!f)
          throw ValidationError(tpath + "/csv", "cannot open file");
        rt.arrivals = load_arrivals_csv(f, tpath + "/csv");
      } else if (t.contains("bursty")) {
        const json& b = t.at("bursty");
        rt.arrivals = generate_bursty_arrivals(
            require(b, "rate", tpath + "/bursty").get<double>(),
            b.value("burstiness", 2.0), s.horizon,
            hash_combine(s.seed, hash_str(rt.name)));
      } else {
        throw ValidationError(tpath, "trace needs arrivals_ns, csv or bursty");
      }
      if (t.contains("iterations"))
        rt.iterations = detail::parse_count_dist(t.at("iterations"),
                                                 tpath + "/iterations");
      s.traces.push_back(std::move(rt));
    }
  }

  if (root.contains("scheduler")) {
    const json& sc = root.at("scheduler");
    if (sc.contains("threshold_ms"))
      s.sched.large_bubble_threshold =
          static_cast<Ns>(sc.at("threshold_ms").get<double>() * 1.0e6);
    s.sched.ema_alpha = sc.value("ema_alpha", s.sched.ema_alpha);
    s.sched.ema_k = sc.value("ema_k", s.sched.ema_k);
    s.sched.safety_factor = sc.value("safety_factor", s.sched.safety_factor);
    s.sched.resync_every = sc.value("resync_every", s.sched.resync_every);
    if (sc.contains("slice_cap_us"))
      s.sched.slice_cap =
          static_cast<Ns>(sc.at("slice_cap_us").get<double>() * 1000.0);
    s.sched.square_tiling = sc.value("square_tiling", s.sched.square_tiling);
    s.sched.consolidation = sc.value("consolidation", s.sched.consolidation);
  }

  if (root.contains("reef")) {
    const json& r = root.at("reef");
    s.reef.queue_cap = r.value("queue_cap", s.reef.queue_cap);
    if (r.contains("evict_cost_us"))
      s.reef.evict_cost_per_kernel =
          static_cast<Ns>(r.at("evict_cost_us").get<double>() * 1000.0);
  }

  if (root.contains("memory")) {
    const json& m = root.at("memory");
    s.mem.enabled = true;
    s.mem.hbm_gb = m.value("hbm_gb", s.mem.hbm_gb);
    if (m.contains("peer_links")) {
      for (const auto& pl : m.at("peer_links"))
        s.mem.peer_free_gb.push_back(pl.value("free_gb", 0.0));
    }
    s.mem.dram_factor = m.value("dram_factor", s.gpu.dram_latency_factor);
    s.mem.probe_mb = m.value("probe_mb", s.mem.probe_mb);
    s.mem.score_threshold = m.value("score_threshold", s.mem.score_threshold);
    std::string ev = m.value("eviction", std::string("contention_first"));
    if (ev == "contention_first")
      s.mem.eviction = EvictionPolicy::ContentionFirst;
    else if (ev == "round_robin")
      s.mem.eviction = EvictionPolicy::RoundRobin;
    else
      throw ValidationError("/memory/eviction", "unknown policy '" + ev + "'");
    s.mem.accesses_per_wave = m.value("accesses_per_wave", s.mem.accesses_per_wave);
  }

  s.validate();
  return s;
}

inline ScenarioSpec load_scenario(const std::string& path,
                                  std::uint64_t* seed_override = nullptr) {
  std::ifstream f(path);
  if (!f) throw ValidationError(path, "cannot open scenario file");
  json root;
  try {
    root = json::parse(f);
  } catch (const json::parse_error& e) {
    throw ValidationError(path, std::string("JSON parse error: ") + e.what());
  }
  return scenario_from_json(root, seed_override);
}

inline json scenario_to_json(const ScenarioSpec& s) {
  using detail::count_dist_json;
  using detail::duration_dist_json;
  using detail::duration_json;

  json root;
  root["name"] = s.name;
  root["seed"] = s.seed;
  root["horizon"] = duration_json(s.horizon);

  json g;
  g["n_sm"] = s.gpu.n_sm;
  g["sm_max_threads"] = s.gpu.sm_max_threads;
  g["hbm_bandwidth"] = s.gpu.hbm_bandwidth;
  g["launch_overhead"] = duration_json(s.gpu.launch_overhead);
  g["sync_overhead"] = duration_json(s.gpu.sync_overhead);
  g["dram_latency_factor"] = s.gpu.dram_latency_factor;
  if (!s.gpu.nvlink_peers.empty()) {
    json peers = json::array();
    for (const auto& p : s.gpu.nvlink_peers)
      peers.push_back(json{{"peer_id", p.peer_id},
                           {"baseline_latency", duration_json(p.baseline_latency)},
                           {"bandwidth", p.bandwidth},
                           {"background_load", p.background_load}});
    g["nvlink_peers"] = peers;
  }
  root["gpu"] = g;

  json kernels = json::array();
  for (const auto& k : s.kernels) {
    json kj;
    kj["name"] = k.name;
    kj["grid"] = {k.grid.x, k.grid.y, k.grid.z};
    kj["threads_per_block"] = k.threads_per_block;
    kj["occupancy"] = k.occupancy;
    kj["block_time"] = duration_dist_json(k.block_time);
    kj["bw_demand_per_block"] = k.bw_demand_per_block;
    kj["splittable"] = k.splittable;
    if (!k.measured_time.empty()) {
      json mt = json::array();
      for (const auto& [n, t] : k.measured_time)
        mt.push_back(json{{"n_blocks", n}, {"time", duration_json(t)}});
      kj["measured_time"] = mt;
    }
    kernels.push_back(kj);
  }
  root["kernels"] = kernels;

  json tasks = json::array();
  for (const auto& t : s.tasks) {
    json tj;
    tj["name"] = t.name;
    tj["priority"] = t.priority == Priority::High ? "high" : "low";
    tj["kind"] = t.kind == TaskKind::Serving ? "serving" : "batch";
    json seq = json::array();
    for (const auto& kr : t.kernel_sequence)
      seq.push_back(json{{"kernel", kr.kernel}, {"repeat", kr.repeat}});
    tj["kernels"] = seq;
    if (!t.bubble_hints.empty()) {
      json hints = json::array();
      for (const auto& h : t.bubble_hints) {
        json hj;
        hj["kind"] = h.kind == HintKind::MemSync        ? "mem_sync"
                     : h.kind == HintKind::InterGpuComm ? "inter_gpu_comm"
                                                        : "cpu_bound";
        hj["pattern"] = h.pattern;
        hj["duration"] = duration_dist_json(h.duration);
        hj["position"] = h.position;
        hj["contended"] = h.contended;
        hints.push_back(hj);
      }
      tj["bubble_hints"] = hints;
    }
    if (t.memory_footprint > 0)
      tj["memory_footprint_gb"] = static_cast<double>(t.memory_footprint) / 1e9;
    if (!t.trace.empty()) tj["trace"] = t.trace;
    tasks.push_back(tj);
  }
  root["tasks"] = tasks;

  json traces = json::array();
  for (const auto& t : s.traces) {
    json tj;
    tj["name"] = t.name;
    tj["arrivals_ns"] = t.arrivals;
    tj["iterations"] = count_dist_json(t.iterations);
    traces.push_back(tj);
  }
  root["traces"] = traces;

  root["scheduler"] = json{
      {"threshold_ms", to_ms(s.sched.large_bubble_threshold)},
      {"ema_alpha", s.sched.ema_alpha},
      {"ema_k", s.sched.ema_k},
      {"safety_factor", s.sched.safety_factor},
      {"resync_every", s.sched.resync_every},
      {"slice_cap_us", to_us(s.sched.slice_cap)},
      {"square_tiling", s.sched.square_tiling},
      {"consolidation", s.sched.consolidation}};
  root["reef"] = json{{"queue_cap", s.reef.queue_cap},
                      {"evict_cost_us", to_us(s.reef.evict_cost_per_kernel)}};
  if (s.mem.enabled) {
    json m;
    m["hbm_gb"] = s.mem.hbm_gb;
    json pls = json::array();
    for (double f : s.mem.peer_free_gb) pls.push_back(json{{"free_gb", f}});
    m["peer_links"] = pls;
    m["dram_factor"] = s.mem.dram_factor;
    m["probe_mb"] = s.mem.probe_mb;
    m["score_threshold"] = s.mem.score_threshold;
    m["eviction"] = s.mem.eviction == EvictionPolicy::ContentionFirst
                        ? "contention_first"
                        : "round_robin";
    m["accesses_per_wave"] = s.mem.accesses_per_wave;
    root["memory"] = m;
  }
  return root;
}

inline void save_scenario(const ScenarioSpec& s, std::ostream& os) {
  os << scenario_to_json(s).dump(2) << "\n";
}

}  // namespace microslice
