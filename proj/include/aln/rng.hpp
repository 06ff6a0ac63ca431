// SPDX-License-Identifier: Apache-2.0
/**
 * @file   rng.hpp
 * @brief  Splittable deterministic random streams.
 *
 * Every stream is a SplitMix64 generator whose state is derived from a key
 * tuple (seed, tag, index...) by chaining the SplitMix64 finalizer. Samples
 * drawn for one key never depend on how many values other keys consumed.
 *
 *  - uniform():  top 53 bits of the next output times 2^-53, in [0, 1)
 *  - normal():   Box-Muller, cosine branch only, two uniforms per sample;
 *                u1 is taken as 1 - uniform() so it lies in (0, 1]
 */
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace aln {

inline constexpr std::uint64_t splitmix_finalize(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// FNV-1a, used to turn tags and parameter names into stream keys.
inline constexpr std::uint64_t fnv1a(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Stream {
 public:
  explicit Stream(std::uint64_t state) noexcept : state_(state) {}

  /// Stream for the key (seed, k1, k2, ...).
  template <typename... Keys>
  static Stream keyed(std::uint64_t seed, Keys... keys) noexcept {
    std::uint64_t s = splitmix_finalize(seed + 0x9e3779b97f4a7c15ULL);
    ((s = splitmix_finalize(s ^ (static_cast<std::uint64_t>(keys) + 0x9e3779b97f4a7c15ULL))),
     ...);
    return Stream(s);
  }

  std::uint64_t next() noexcept {
    state_ += 0x9e3779b97f4a7c15ULL;
    return splitmix_finalize(state_);
  }

  double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [lo, hi].
  std::uint64_t uniform_int(std::uint64_t lo, std::uint64_t hi) noexcept {
    const double span = static_cast<double>(hi - lo + 1);
    auto k = static_cast<std::uint64_t>(uniform() * span);
    if (k > hi - lo) k = hi - lo;
    return lo + k;
  }

  double normal() noexcept {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::uint64_t state_;
};

}  // namespace aln
