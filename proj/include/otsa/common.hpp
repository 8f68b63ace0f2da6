/**
 * @file common.hpp
 * @brief Shared error types, seeded RNG, and formatting helpers.
 */

#ifndef OTSA_COMMON_HPP
#define OTSA_COMMON_HPP

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace otsa {

/// Invalid argument supplied by the caller (bad dimensions, marginals off
/// the simplex, non-positive counts, ...). The message names the offender.
class ParameterError : public std::invalid_argument {
 public:
  explicit ParameterError(const std::string& msg) : std::invalid_argument(msg) {}
};

/// Shape or dimension mismatch between operands; message carries both dims.
class DimensionError : public ParameterError {
 public:
  explicit DimensionError(const std::string& msg) : ParameterError(msg) {}
};

/// A state that valid inputs should never reach (solver failure, index out
/// of range after validation, non-finite loss).
class InternalError : public std::runtime_error {
 public:
  explicit InternalError(const std::string& msg) : std::runtime_error(msg) {}
};

/// splitmix64 step; used to derive independent streams from one base seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/**
 * @brief Seeded 64-bit generator with explicit uniform/normal draws.
 *
 * Wraps std::mt19937_64 but samples normals via Box-Muller so the draw
 * sequence does not depend on the standard library implementation. Two
 * runs with the same seed produce bit-identical streams.
 */
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform double in [0, 1).
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; pairs are cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double two_pi = 6.283185307179586476925286766559;
    spare_ = r * std::sin(two_pi * u2);
    has_spare_ = true;
    return r * std::cos(two_pi * u2);
  }

  /// Uniform integer in [0, n).
  std::uint64_t uniform_int(std::uint64_t n) {
    // rejection sampling keeps the draw unbiased
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return x % n;
  }

  /// Fisher-Yates shuffle, deterministic under the seed.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[static_cast<std::size_t>(uniform_int(i))]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Formats with 9 significant digits; the CSV interchange precision.
inline std::string fmt_g9(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", x);
  return buf;
}

/// Formats with full double precision; used where round-trips must be lossless.
inline std::string fmt_g17(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

}  // namespace otsa

#endif  // OTSA_COMMON_HPP
