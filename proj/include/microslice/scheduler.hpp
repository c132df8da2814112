#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <vector>

#include "microslice/common.hpp"
#include "microslice/model.hpp"

namespace microslice {

enum class BubbleState { None, Small, Large };

// Exponential moving average over the last k inter-request gaps. Folds the
// ring oldest-to-newest; an empty history falls back to the large-bubble
// threshold so consolidation stays conservative at startup.
class IntervalPredictor {
 public:
  IntervalPredictor(double alpha, int k, Ns fallback)
      : alpha_(alpha), k_(k), fallback_(fallback) {}

  void observe_gap(Ns gap) {
    ring_.push_back(gap);
    while (static_cast<int>(ring_.size()) > k_) ring_.pop_front();
  }

  Ns predict() const {
    if (ring_.empty()) return fallback_;
    double ema = static_cast<double>(ring_.front());
    for (std::size_t i = 1; i < ring_.size(); ++i)
      ema = alpha_ * static_cast<double>(ring_[i]) + (1.0 - alpha_) * ema;
    return static_cast<Ns>(ema);
  }

  std::size_t history_size() const { return ring_.size(); }

 private:
  double alpha_;
  int k_;
  Ns fallback_;
  std::deque<Ns> ring_;
};

inline Ns predict_interval(const std::vector<Ns>& gaps, double alpha = 0.3,
                           int k = 8, Ns fallback = ms(2)) {
  IntervalPredictor p(alpha, k, fallback);
  std::size_t start = gaps.size() > static_cast<std::size_t>(k)
                          ? gaps.size() - static_cast<std::size_t>(k)
                          : 0;
  for (std::size_t i = start; i < gaps.size(); ++i) p.observe_gap(gaps[i]);
  return p.predict();
}

// Launch pacing for the tick scheduler: the next slice is launched one
// launch-overhead before the current one is predicted to finish, so the
// device pipeline keeps exactly one pending slice and never idles.
inline Ns tick_interval(Ns predicted_slice_time, Ns launch_overhead) {
  return std::max<Ns>(1, predicted_slice_time - launch_overhead);
}

// How many pending slices a large-bubble consolidation may merge: the
// largest prefix whose predicted merged time still fits the predicted
// request interval divided by the safety factor. `merged_time(k)` must be
// nondecreasing in k.
template <typename MergedTimeFn>
std::int64_t consolidation_prefix(std::int64_t pending, Ns predicted_interval,
                                  double safety_factor,
                                  MergedTimeFn&& merged_time) {
  if (pending <= 1) return pending;
  Ns budget = static_cast<Ns>(static_cast<double>(predicted_interval) /
                              safety_factor);
  if (merged_time(pending) <= budget) return pending;
  std::int64_t lo = 1, hi = pending;
  // merged_time(1) is a single slice which always "fits" (it would be
  // launched anyway); find the largest prefix within budget.
  while (lo < hi) {
    std::int64_t mid = lo + (hi - lo + 1) / 2;
    if (merged_time(mid) <= budget)
      lo = mid;
    else
      hi = mid - 1;
  }
  return lo;
}

}  // namespace microslice
