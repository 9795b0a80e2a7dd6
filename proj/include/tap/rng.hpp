#pragma once

#include <cmath>
#include <cstdint>

#include "tap/common.hpp"

namespace tap {

// Counter-based pseudo-random generator: every draw hashes (key, counter)
// with a splitmix64-style finalizer, so streams can be split without
// sharing state and results do not depend on call interleaving elsewhere.
// There is deliberately no global instance; callers own their generators.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
      : key_(mix(seed ^ 0x9e3779b97f4a7c15ull, stream)) {}

  std::uint64_t next_u64() { return mix(key_, counter_++); }

  // Derives an independent generator; deterministic in (parent key, stream).
  Rng split(std::uint64_t stream) const {
    Rng child(0);
    child.key_ = mix(key_, 0xd1b54a32d192ed03ull ^ stream);
    return child;
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  float uniform_float() { return static_cast<float>(uniform()); }

  // Uniform integer in [0, n).
  int uniform_int(int n) {
    if (n <= 0) throw ArgumentError("Rng::uniform_int: n must be positive");
    return static_cast<int>(uniform() * static_cast<double>(n)) % n;
  }

  // Standard normal via Box-Muller; the second variate is cached.
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    cached_ = r * std::sin(theta);
    has_cached_ = true;
    return r * std::cos(theta);
  }

  float normal_float() { return static_cast<float>(normal()); }

 private:
  static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace tap
