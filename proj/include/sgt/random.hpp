#pragma once

// Seeded sampling helpers. Only the raw engine output of std::mt19937_64 is
// used; the std:: distributions are implementation-defined and are not.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <utility>
#include <vector>

namespace sgt {

using Rng = std::mt19937_64;

/// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform double in (0, 1]; safe to take the log of.
inline double uniform01_open_low(Rng& rng) {
  return (static_cast<double>(rng() >> 11) + 1.0) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

/// Uniform integer in [0, n) by rejection, unbiased.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

/// Standard normal via Box-Muller (one draw per call, the sine branch is dropped).
inline double standard_normal(Rng& rng) {
  const double u1 = uniform01_open_low(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

inline double standard_exponential(Rng& rng) { return -std::log(uniform01_open_low(rng)); }

/// Fisher-Yates.
template <typename T>
void shuffle(std::span<T> items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_index(rng, i));
    std::swap(items[i - 1], items[j]);
  }
}

/// Point drawn uniformly from the open probability simplex with `classes`
/// entries (normalized i.i.d. exponentials, i.e. Dirichlet(1,...,1)).
inline std::vector<double> random_simplex(Rng& rng, std::size_t classes) {
  std::vector<double> v(classes);
  double total = 0.0;
  for (auto& x : v) {
    x = standard_exponential(rng);
    total += x;
  }
  for (auto& x : v) x /= total;
  return v;
}

}  // namespace sgt
