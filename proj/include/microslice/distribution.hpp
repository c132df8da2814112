#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "microslice/common.hpp"

namespace microslice {

// Distribution over durations. Values are stored in nanoseconds.
// Kinds:
//   point     - a single value
//   uniform   - continuous uniform on [lo, hi]
//   empirical - piecewise-linear CDF given as sorted (value, cum_prob)
//               breakpoints; sampled by inverse transform.
class DurationDist {
 public:
  enum class Kind { Point, Uniform, Empirical };

  struct CdfPoint {
    Ns value = 0;
    double cum = 0.0;
  };

  static DurationDist point(Ns v) {
    DurationDist d;
    d.kind_ = Kind::Point;
    d.lo_ = d.hi_ = v;
    d.validate();
    return d;
  }

  static DurationDist uniform(Ns lo, Ns hi) {
    DurationDist d;
    d.kind_ = Kind::Uniform;
    d.lo_ = lo;
    d.hi_ = hi;
    d.validate();
    return d;
  }

  static DurationDist empirical(std::vector<CdfPoint> pts) {
    DurationDist d;
    d.kind_ = Kind::Empirical;
    d.cdf_ = std::move(pts);
    d.validate();
    return d;
  }

  Kind kind() const { return kind_; }

  Ns sample(double u) const {
    switch (kind_) {
      case Kind::Point:
        return lo_;
      case Kind::Uniform: {
        double v = static_cast<double>(lo_) +
                   u * static_cast<double>(hi_ - lo_);
        Ns r = static_cast<Ns>(std::llround(v));
        return std::clamp<Ns>(r, lo_, hi_);
      }
      case Kind::Empirical:
        return sample_empirical(u);
    }
    return lo_;
  }

  Ns sample(RngStream& rng) const { return sample(rng.next_double()); }

  Ns sample_keyed(std::uint64_t key) const { return sample(u01_from_key(key)); }

  // Exact mean of the distribution, rounded to whole nanoseconds.
  Ns mean() const {
    switch (kind_) {
      case Kind::Point:
        return lo_;
      case Kind::Uniform:
        return (lo_ + hi_) / 2;
      case Kind::Empirical: {
        double m = 0.0;
        for (std::size_t i = 1; i < cdf_.size(); ++i) {
          double p = cdf_[i].cum - cdf_[i - 1].cum;
          double mid = 0.5 * (static_cast<double>(cdf_[i].value) +
                              static_cast<double>(cdf_[i - 1].value));
          m += p * mid;
        }
        return static_cast<Ns>(std::llround(m));
      }
    }
    return lo_;
  }

  Ns min_value() const {
    return kind_ == Kind::Empirical ? cdf_.front().value : lo_;
  }
  Ns max_value() const {
    return kind_ == Kind::Empirical ? cdf_.back().value : hi_;
  }

  // P(X <= t).
  double cdf_at(Ns t) const {
    switch (kind_) {
      case Kind::Point:
        return t >= lo_ ? 1.0 : 0.0;
      case Kind::Uniform:
        if (t < lo_) return 0.0;
        if (t >= hi_) return 1.0;
        return static_cast<double>(t - lo_) / static_cast<double>(hi_ - lo_);
      case Kind::Empirical: {
        if (t < cdf_.front().value) return 0.0;
        if (t >= cdf_.back().value) return 1.0;
        for (std::size_t i = 1; i < cdf_.size(); ++i) {
          if (t < cdf_[i].value) {
            double span = static_cast<double>(cdf_[i].value - cdf_[i - 1].value);
            double frac =
                span == 0.0
                    ? 1.0
                    : static_cast<double>(t - cdf_[i - 1].value) / span;
            return cdf_[i - 1].cum + frac * (cdf_[i].cum - cdf_[i - 1].cum);
          }
        }
        return 1.0;
      }
    }
    return 0.0;
  }

  const std::vector<CdfPoint>& breakpoints() const { return cdf_; }

 private:
  void validate() const {
    if (kind_ == Kind::Empirical) {
      if (cdf_.size() < 2)
        throw ValidationError("distribution", "empirical CDF needs >= 2 points");
      if (cdf_.front().cum != 0.0 || cdf_.back().cum != 1.0)
        throw ValidationError("distribution",
                              "empirical CDF must span cum 0..1");
      for (std::size_t i = 1; i < cdf_.size(); ++i) {
        if (cdf_[i].value < cdf_[i - 1].value || cdf_[i].cum < cdf_[i - 1].cum)
          throw ValidationError("distribution",
                                "empirical CDF breakpoints must be sorted");
      }
      if (cdf_.front().value <= 0)
        throw ValidationError("distribution", "durations must be positive");
    } else {
      if (lo_ <= 0 || hi_ < lo_)
        throw ValidationError("distribution",
                              "duration bounds must be positive and ordered");
    }
  }

  Ns sample_empirical(double u) const {
    // Binary search for the bracketing segment, linear interpolation inside.
    auto it = std::lower_bound(
        cdf_.begin(), cdf_.end(), u,
        [](const CdfPoint& p, double val) { return p.cum < val; });
    if (it == cdf_.begin()) return cdf_.front().value;
    if (it == cdf_.end()) return cdf_.back().value;
    const CdfPoint& hi = *it;
    const CdfPoint& lo = *(it - 1);
    double dp = hi.cum - lo.cum;
    double frac = dp <= 0.0 ? 0.0 : (u - lo.cum) / dp;
    double v = static_cast<double>(lo.value) +
               frac * static_cast<double>(hi.value - lo.value);
    Ns r = static_cast<Ns>(std::llround(v));
    return std::clamp<Ns>(r, lo.value, hi.value);
  }

  Kind kind_ = Kind::Point;
  Ns lo_ = 1;
  Ns hi_ = 1;
  std::vector<CdfPoint> cdf_;
};

// The block-time CDF shipped with the default scenarios. Synthetic mixture:
// 90% of mass in [5, 100]us, 9.9% in (100, 300]us, nearly all of the rest
// within 400us, and a 5e-6 tail reaching 1ms. P(t <= 400us) = 0.999995.
inline DurationDist default_block_time_cdf() {
  return DurationDist::empirical({
      {us(5), 0.0},
      {us(100), 0.90},
      {us(300), 0.999},
      {us(400), 0.999995},
      {us(1000), 1.0},
  });
}

inline std::string kind_name(DurationDist::Kind k) {
  switch (k) {
    case DurationDist::Kind::Point:
      return "point";
    case DurationDist::Kind::Uniform:
      return "uniform";
    case DurationDist::Kind::Empirical:
      return "empirical";
  }
  return "?";
}

}  // namespace microslice
