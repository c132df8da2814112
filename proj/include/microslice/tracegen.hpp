#pragma once

#include <cmath>
#include <vector>

#include "microslice/common.hpp"

namespace microslice {

// Bursty request arrivals from a two-state Markov-modulated Poisson process.
// State 0 emits at `rate`, state 1 at `burstiness * rate`; both states have
// mean dwell time `dwell`. burstiness = 1 degenerates to a plain Poisson
// process. Same (params, seed) always yields the identical trace.
inline std::vector<Ns> generate_bursty_arrivals(double rate, double burstiness,
                                                Ns horizon,
                                                std::uint64_t seed,
                                                Ns dwell = seconds(2)) {
  if (rate <= 0.0)
    throw ValidationError("tracegen.rate", "must be > 0");
  if (burstiness < 1.0)
    throw ValidationError("tracegen.burstiness", "must be >= 1");
  std::vector<Ns> arrivals;
  if (horizon <= 0) return arrivals;

  RngStream rng(hash_combine(seed, 0xb0b1));
  auto exp_draw = [&rng](double mean) {
    double u = rng.next_double();
    if (u <= 0.0) u = 1e-18;
    return -std::log(u) * mean;
  };

  // Effective rates chosen so the long-run average equals `rate`:
  // with equal dwell the average of the two state rates is `rate`.
  double lo_rate = 2.0 * rate / (1.0 + burstiness);
  double hi_rate = lo_rate * burstiness;

  int state = 0;
  double t = 0.0;
  double horizon_s = to_sec(horizon);
  double state_end = exp_draw(to_sec(dwell));
  while (true) {
    double r = state == 0 ? lo_rate : hi_rate;
    double gap = exp_draw(1.0 / r);
    double next = t + gap;
    while (next > state_end) {
      // Re-draw the residual gap at the new state's rate.
      double carried = (next - state_end) * r;
      state = 1 - state;
      t = state_end;
      state_end = t + exp_draw(to_sec(dwell));
      r = state == 0 ? lo_rate : hi_rate;
      next = t + carried / r;
    }
    if (next >= horizon_s) break;
    t = next;
    Ns ts = seconds(t);
    if (!arrivals.empty() && ts <= arrivals.back()) ts = arrivals.back() + 1;
    arrivals.push_back(ts);
  }
  return arrivals;
}

}  // namespace microslice
