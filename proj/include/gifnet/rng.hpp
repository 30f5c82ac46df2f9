// Copyright (c) 2026 gifnet-cpp authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace gifnet {

/// Seeded generator wrapping mt19937_64 with fixed derivations, so streams
/// are reproducible run-to-run on a given platform (distribution classes
/// from <random> are implementation-defined and avoided on purpose).
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next() { return gen_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller.
  double normal() {
    double u1 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  /// Normal(0, std) with samples beyond 2 std re-drawn.
  float truncated_normal(float stddev) {
    double z;
    do {
      z = normal();
    } while (std::fabs(z) > 2.0);
    return static_cast<float>(z) * stddev;
  }

 private:
  std::mt19937_64 gen_;
};

/// Decorrelates a base seed and a stream index (splitmix64 finalizer).
inline uint64_t mix_seed(uint64_t base, uint64_t index) {
  uint64_t z = base + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace gifnet
