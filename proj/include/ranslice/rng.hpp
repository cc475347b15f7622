#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

#include "ranslice/errors.hpp"

namespace ranslice {

// Every random quantity in the artifact flows from a named stream derived
// from the scenario seed, so traffic, fading and placement are independently
// reproducible.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derives a child seed from a base seed, a stream label and up to two indices.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view label,
                                 std::uint64_t a = 0, std::uint64_t b = 0) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a over the label
  for (char c : label) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  h = splitmix64(base ^ h);
  h = splitmix64(h ^ a);
  h = splitmix64(h ^ b);
  return h;
}

/// Seeded random stream with hand-rolled transforms so draws are identical
/// across standard library implementations.
class DeterministicStream {
 public:
  explicit DeterministicStream(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform double in [0, 1) with 53 bits of precision.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Exponentially distributed duration via inverse CDF.
  double exponential(double mean) {
    if (mean <= 0.0) {
      throw DomainError("exponential sample requires mean > 0");
    }
    return -mean * std::log1p(-uniform01());
  }

  /// Gaussian draw via Box-Muller (two uniforms per call, no cached state).
  double normal(double mu, double sigma) {
    double u1 = uniform01();
    double u2 = uniform01();
    double r = std::sqrt(-2.0 * std::log1p(-u1));
    return mu + sigma * r * std::cos(2.0 * M_PI * u2);
  }

 private:
  std::mt19937_64 engine_;
};

/// On-off phase duration draw. Exposed separately because trace generation
/// and tests both need it.
inline double sample_onoff(DeterministicStream& stream, double mean_seconds) {
  if (mean_seconds <= 0.0) {
    throw DomainError("on-off duration mean must be > 0");
  }
  return stream.exponential(mean_seconds);
}

}  // namespace ranslice
