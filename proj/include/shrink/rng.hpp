// Copyright 2026 The Shrink Authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace shrink {

/// Deterministic random stream. Conversions from raw engine output are done
/// here rather than through <random> distributions, whose output is
/// implementation-defined, so data and initial weights are byte-identical
/// across standard libraries.
class Rng {
public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(engine_() % span);
  }

  /// Standard normal via Box-Muller (one draw per call, no caching).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0)
      u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  bool bernoulli(double p) { return uniform() < p; }

private:
  std::mt19937_64 engine_;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent reproducible streams derived from one run seed.
struct SeedStreams {
  std::uint64_t seed = 0;
  Rng data;
  Rng init;
  Rng dropout;
  Rng augment;
};

inline SeedStreams set_global_seed(std::uint64_t seed) {
  return SeedStreams{seed, Rng(splitmix64(seed * 4 + 0)), Rng(splitmix64(seed * 4 + 1)),
                     Rng(splitmix64(seed * 4 + 2)), Rng(splitmix64(seed * 4 + 3))};
}

} // namespace shrink
