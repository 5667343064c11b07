#pragma once

#include <cmath>
#include <cstdint>

namespace fluxcast {

/// Deterministic RNG with a portable bit stream (splitmix64) and explicit
/// Box-Muller normals. Standard-library distributions are implementation
/// defined, which would break bitwise checkpoint/run reproducibility.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  // Derive an independent stream, e.g. per epoch or per component.
  Rng fork(uint64_t salt) const { return Rng(mix(state_ + 0x9e3779b97f4a7c15ULL * (salt + 1))); }

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix(state_);
  }

  // Uniform in [0, 1).
  double next_uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_uniform(); }

  // Unbiased integer in [0, n).
  uint64_t next_below(uint64_t n) {
    uint64_t threshold = (0 - n) % n;
    for (;;) {
      uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  // Standard normal, Box-Muller; one value per call, cache holds the pair.
  double next_normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u1 = next_uniform();
    double u2 = next_uniform();
    while (u1 <= 1e-300) u1 = next_uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a);
  }

 private:
  static uint64_t mix(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  uint64_t state_;
  bool have_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace fluxcast
