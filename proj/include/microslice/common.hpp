#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace microslice {

// All simulation time is integer nanoseconds. Inputs given in microseconds
// convert exactly (x1000) so event ordering never depends on float rounding.
using Ns = std::int64_t;

constexpr Ns kNsPerUs = 1000;
constexpr Ns kNsPerMs = 1000 * 1000;
constexpr Ns kNsPerSec = 1000 * 1000 * 1000;

constexpr Ns us(double v) { return static_cast<Ns>(v * 1000.0 + 0.5); }
constexpr Ns ms(double v) { return static_cast<Ns>(v * 1.0e6 + 0.5); }
constexpr Ns seconds(double v) { return static_cast<Ns>(v * 1.0e9 + 0.5); }

inline double to_us(Ns t) { return static_cast<double>(t) / 1000.0; }
inline double to_ms(Ns t) { return static_cast<double>(t) / 1.0e6; }
inline double to_sec(Ns t) { return static_cast<double>(t) / 1.0e9; }

// A scenario or input file failed validation. `where` is a JSON-pointer-ish
// path or the name of the violated invariant.
class ValidationError : public std::runtime_error {
 public:
  ValidationError(std::string where, const std::string& what)
      : std::runtime_error(where + ": " + what), where_(std::move(where)) {}
  const std::string& where() const { return where_; }

 private:
  std::string where_;
};

// The simulation engine reached an inconsistent state (e.g. event-queue
// deadlock). Carries a diagnostic dump.
class EngineError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---- Deterministic counter-based randomness -------------------------------
//
// Every stochastic quantity is keyed by a stable identity (seed, tags,
// indices) instead of a shared stateful generator. This keeps draws
// identical across scheduling policies, which several cross-policy
// comparisons rely on.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) {
  return splitmix64(a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2)));
}

inline std::uint64_t hash_str(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Small stateful stream for places that want a sequence of draws. The state
// advance is splitmix64, so a stream is itself reproducible from its seed.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : state_(splitmix64(seed)) {}

  std::uint64_t next_u64() {
    state_ = splitmix64(state_);
    return state_;
  }

  // Uniform in [0, 1) with 53 usable bits.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n).
  std::uint64_t next_below(std::uint64_t n) {
    return n == 0 ? 0 : next_u64() % n;
  }

 private:
  std::uint64_t state_;
};

inline double u01_from_key(std::uint64_t key) {
  return static_cast<double>(splitmix64(key) >> 11) * 0x1.0p-53;
}

}  // namespace microslice
