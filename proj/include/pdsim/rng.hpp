#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include "pdsim/errors.hpp"

namespace pdsim {

// Samplers built on raw mt19937_64 output. std::gamma_distribution and
// friends differ across standard libraries, which would break bitwise trace
// reproducibility, so the transforms live here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform in (0, 1); rejects exact zeros so log() is safe.
  double uniform_open01() {
    for (;;) {
      double u = uniform01();
      if (u > 0.0) return u;
    }
  }

  std::uint64_t uniform_index(std::uint64_t n) {
    // Rejection sampling over the top range keeps the draw unbiased.
    if (n == 0) throw ParameterError("uniform_index: empty range");
    std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    for (;;) {
      std::uint64_t x = engine_();
      if (x < limit) return x % n;
    }
  }

  double normal() {
    // Box-Muller, one value per call (spare discarded for simplicity).
    double u1 = uniform_open01();
    double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // Marsaglia-Tsang; shape < 1 handled via the gamma(shape+1) boost.
  double gamma(double shape, double scale) {
    if (shape <= 0.0 || scale <= 0.0) throw ParameterError("gamma: shape and scale must be > 0");
    if (shape < 1.0) {
      double u = uniform_open01();
      return gamma(shape + 1.0, scale) * std::pow(u, 1.0 / shape);
    }
    double d = shape - 1.0 / 3.0;
    double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      double u = uniform_open01();
      if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) {
        return d * v * scale;
      }
    }
  }

  double lognormal(double mu, double sigma) { return std::exp(mu + sigma * normal()); }

 private:
  std::mt19937_64 engine_;
};

// FNV-1a, used for cache keys and output manifests.
inline std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t seed = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s, std::uint64_t seed = 0xcbf29ce484222325ull) {
  return fnv1a64(s.data(), s.size(), seed);
}

// String literals would otherwise decay to the void* overload, hashing
// `seed` bytes of garbage.
inline std::uint64_t fnv1a64(const char* s, std::uint64_t seed = 0xcbf29ce484222325ull) {
  return fnv1a64(s, std::char_traits<char>::length(s), seed);
}

}  // namespace pdsim
