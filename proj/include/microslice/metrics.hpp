#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "microslice/common.hpp"
#include "microslice/engine.hpp"

namespace microslice {

// Nearest-rank percentile over raw samples: the value at 1-indexed rank
// floor(q*N)+1 (capped at N) of the ascending ordering. With N=100 and
// q=0.99 this selects the largest sample.
inline Ns percentile(std::vector<Ns> samples, double q) {
  if (samples.empty()) return 0;
  std::sort(samples.begin(), samples.end());
  std::size_t rank = static_cast<std::size_t>(
      std::floor(q * static_cast<double>(samples.size()))) + 1;
  if (rank > samples.size()) rank = samples.size();
  return samples[rank - 1];
}

struct SloThresholds {
  Ns ttft = 0;
  Ns tpot = 0;
};

struct DelaySummary {
  std::int64_t count = 0;
  Ns mean = 0;
  Ns p50 = 0;
  Ns p99 = 0;
  Ns max = 0;
};

inline DelaySummary summarize_delays(const std::vector<Ns>& delays) {
  DelaySummary s;
  s.count = static_cast<std::int64_t>(delays.size());
  if (delays.empty()) return s;
  double sum = 0;
  for (Ns d : delays) sum += static_cast<double>(d);
  s.mean = static_cast<Ns>(sum / static_cast<double>(delays.size()));
  s.p50 = percentile(delays, 0.50);
  s.p99 = percentile(delays, 0.99);
  s.max = *std::max_element(delays.begin(), delays.end());
  return s;
}

struct RunReport {
  std::string scenario;
  std::string policy;
  std::uint64_t seed = 0;
  // high priority
  int requests_total = 0;
  int requests_completed = 0;
  Ns ttft_p99 = 0;
  Ns tpot_p99 = 0;
  double slo_attainment = 0.0;
  DelaySummary preemption;
  // low priority
  double lp_throughput = 0.0;             // work units / s
  double lp_throughput_normalized = 0.0;  // vs exclusive-lp reference
  double waste_fraction = 0.0;
  double sync_overhead_fraction = 0.0;
  // gpu
  double sm_active_fraction = 0.0;
  double small_bubble_fraction = 0.0;
};

// P99 TTFT and TPOT of the exclusive run become the service objective.
inline SloThresholds compute_slo(const RunArtifacts& exclusive,
                                 int min_requests = 100) {
  std::vector<Ns> ttfts, tpots;
  for (const RequestStat& r : exclusive.requests) {
    if (!r.completed) continue;
    ttfts.push_back(r.ttft());
    tpots.push_back(r.tpot());
  }
  if (static_cast<int>(ttfts.size()) < min_requests)
    throw ValidationError("compute_slo",
                          "need >= " + std::to_string(min_requests) +
                              " completed requests, have " +
                              std::to_string(ttfts.size()));
  return {percentile(ttfts, 0.99), percentile(tpots, 0.99)};
}

// Fraction of requests meeting both thresholds. Requests that never
// completed count against attainment.
inline double slo_attainment(const std::vector<RequestStat>& requests,
                             const SloThresholds& slo) {
  if (requests.empty()) return 0.0;
  std::int64_t ok = 0;
  for (const RequestStat& r : requests) {
    if (!r.completed) continue;
    if (r.ttft() <= slo.ttft && r.tpot() <= slo.tpot) ++ok;
  }
  return static_cast<double>(ok) / static_cast<double>(requests.size());
}

inline RunReport build_report(const RunArtifacts& art,
                              const SloThresholds& slo,
                              double lp_reference_throughput = 0.0) {
  RunReport rep;
  rep.scenario = art.scenario;
  rep.policy = policy_name(art.policy);
  rep.seed = art.seed;
  rep.requests_total = static_cast<int>(art.requests.size());
  std::vector<Ns> ttfts, tpots, delays;
  for (const RequestStat& r : art.requests) {
    if (!r.completed) continue;
    ++rep.requests_completed;
    ttfts.push_back(r.ttft());
    tpots.push_back(r.tpot());
  }
  rep.ttft_p99 = percentile(ttfts, 0.99);
  rep.tpot_p99 = percentile(tpots, 0.99);
  rep.slo_attainment = slo_attainment(art.requests, slo);
  for (const PreemptionRecord& p : art.preemptions) delays.push_back(p.delay);
  rep.preemption = summarize_delays(delays);
  rep.lp_throughput = art.lp_throughput_per_s();
  rep.lp_throughput_normalized =
      lp_reference_throughput > 0.0 ? rep.lp_throughput / lp_reference_throughput
                                    : 0.0;
  std::int64_t denom = art.lp_blocks_done + art.lp_waste_blocks;
  rep.waste_fraction =
      denom > 0 ? static_cast<double>(art.lp_waste_blocks) /
                      static_cast<double>(denom)
                : 0.0;
  rep.sync_overhead_fraction =
      static_cast<double>(art.sync_cost_total) /
      static_cast<double>(art.horizon);
  rep.sm_active_fraction = art.sm_active_fraction;
  rep.small_bubble_fraction = static_cast<double>(art.small_bubble_time) /
                              static_cast<double>(art.horizon);
  return rep;
}

inline nlohmann::json report_to_json(const RunReport& r) {
  return nlohmann::json{
      {"scenario", r.scenario},
      {"policy", r.policy},
      {"seed", r.seed},
      {"hp",
       {{"requests_total", r.requests_total},
        {"requests_completed", r.requests_completed},
        {"ttft_p99_ns", r.ttft_p99},
        {"tpot_p99_ns", r.tpot_p99},
        {"slo_attainment", r.slo_attainment},
        {"preemption",
         {{"count", r.preemption.count},
          {"mean_ns", r.preemption.mean},
          {"p50_ns", r.preemption.p50},
          {"p99_ns", r.preemption.p99},
          {"max_ns", r.preemption.max}}}}},
      {"lp",
       {{"throughput", r.lp_throughput},
        {"throughput_normalized", r.lp_throughput_normalized},
        {"waste_fraction", r.waste_fraction},
        {"sync_overhead_fraction", r.sync_overhead_fraction}}},
      {"gpu",
       {{"sm_active_fraction", r.sm_active_fraction},
        {"small_bubble_fraction", r.small_bubble_fraction}}}};
}

inline RunReport report_from_json(const nlohmann::json& j) {
  RunReport r;
  r.scenario = j.at("scenario").get<std::string>();
  r.policy = j.at("policy").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  const auto& hp = j.at("hp");
  r.requests_total = hp.at("requests_total").get<int>();
  r.requests_completed = hp.at("requests_completed").get<int>();
  r.ttft_p99 = hp.at("ttft_p99_ns").get<Ns>();
  r.tpot_p99 = hp.at("tpot_p99_ns").get<Ns>();
  r.slo_attainment = hp.at("slo_attainment").get<double>();
  const auto& pre = hp.at("preemption");
  r.preemption.count = pre.at("count").get<std::int64_t>();
  r.preemption.mean = pre.at("mean_ns").get<Ns>();
  r.preemption.p50 = pre.at("p50_ns").get<Ns>();
  r.preemption.p99 = pre.at("p99_ns").get<Ns>();
  r.preemption.max = pre.at("max_ns").get<Ns>();
  const auto& lp = j.at("lp");
  r.lp_throughput = lp.at("throughput").get<double>();
  r.lp_throughput_normalized = lp.at("throughput_normalized").get<double>();
  r.waste_fraction = lp.at("waste_fraction").get<double>();
  r.sync_overhead_fraction = lp.at("sync_overhead_fraction").get<double>();
  const auto& gpu = j.at("gpu");
  r.sm_active_fraction = gpu.at("sm_active_fraction").get<double>();
  r.small_bubble_fraction = gpu.at("small_bubble_fraction").get<double>();
  return r;
}

inline const char* report_csv_header() {
  return "scenario,policy,seed,requests_total,requests_completed,"
         "ttft_p99_ns,tpot_p99_ns,slo_attainment,preempt_count,"
         "preempt_mean_ns,preempt_p50_ns,preempt_p99_ns,preempt_max_ns,"
         "lp_throughput,lp_throughput_normalized,waste_fraction,"
         "sync_overhead_fraction,sm_active_fraction,small_bubble_fraction";
}

inline std::string report_csv_row(const RunReport& r) {
  std::ostringstream os;
  os.precision(12);
  os << r.scenario << ',' << r.policy << ',' << r.seed << ','
     << r.requests_total << ',' << r.requests_completed << ',' << r.ttft_p99
     << ',' << r.tpot_p99 << ',' << r.slo_attainment << ','
     << r.preemption.count << ',' << r.preemption.mean << ','
     << r.preemption.p50 << ',' << r.preemption.p99 << ','
     << r.preemption.max << ',' << r.lp_throughput << ','
     << r.lp_throughput_normalized << ',' << r.waste_fraction << ','
     << r.sync_overhead_fraction << ',' << r.sm_active_fraction << ','
     << r.small_bubble_fraction;
  return os.str();
}

inline RunReport report_from_csv_row(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  cells.push_back(cur);
  if (cells.size() != 19)
    throw ValidationError("report_csv", "expected 19 columns, got " +
                                            std::to_string(cells.size()));
  RunReport r;
  std::size_t i = 0;
  r.scenario = cells[i++];
  r.policy = cells[i++];
  r.seed = std::stoull(cells[i++]);
  r.requests_total = std::stoi(cells[i++]);
  r.requests_completed = std::stoi(cells[i++]);
  r.ttft_p99 = std::stoll(cells[i++]);
  r.tpot_p99 = std::stoll(cells[i++]);
  r.slo_attainment = std::stod(cells[i++]);
  r.preemption.count = std::stoll(cells[i++]);
  r.preemption.mean = std::stoll(cells[i++]);
  r.preemption.p50 = std::stoll(cells[i++]);
  r.preemption.p99 = std::stoll(cells[i++]);
  r.preemption.max = std::stoll(cells[i++]);
  r.lp_throughput = std::stod(cells[i++]);
  r.lp_throughput_normalized = std::stod(cells[i++]);
  r.waste_fraction = std::stod(cells[i++]);
  r.sync_overhead_fraction = std::stod(cells[i++]);
  r.sm_active_fraction = std::stod(cells[i++]);
  r.small_bubble_fraction = std::stod(cells[i++]);
  return r;
}

}  // namespace microslice
