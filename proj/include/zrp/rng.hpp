#pragma once

#include <cmath>
#include <cstdint>

namespace zrp {

// Counter-based random stream built on the splitmix64 output function.
// A stream is identified by (seed, stream_id); draws depend only on the
// counter, so replicas are reproducible regardless of thread schedule.
class Rng {
 public:
  explicit Rng(uint64_t seed, uint64_t stream = 0) {
    // Spread seed and stream through two rounds of mixing so that nearby
    // (seed, stream) pairs start in unrelated parts of the orbit.
    key_ = mix(seed + 0x9e3779b97f4a7c15ULL);
    key_ = mix(key_ ^ mix(stream + 0xbf58476d1ce4e5b9ULL));
    ctr_ = 0;
  }

  uint64_t next_u64() {
    uint64_t z = key_ + (++ctr_) * 0x9e3779b97f4a7c15ULL;
    return mix(z);
  }

  // Uniform on the open interval (0,1); never returns 0 or 1.
  double uniform() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

  // Exponential with mean 1.
  double exponential() { return -std::log(uniform()); }

  // Standard normal (Box-Muller, second value cached).
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1 = uniform(), u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double th = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(th);
    has_cached_ = true;
    return r * std::cos(th);
  }

  // Uniform integer in [0, n).
  uint64_t below(uint64_t n) { return next_u64() % n; }

 private:
  static uint64_t mix(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  uint64_t key_ = 0, ctr_ = 0;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace zrp
