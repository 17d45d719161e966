#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "kgforge/errors.hpp"

namespace kgforge {

// SplitMix64. All randomness in the project flows through this generator so
// that runs are reproducible from seeds alone, independent of the standard
// library's distribution implementations.
class SplitMix64 {
 public:
  explicit SplitMix64(u64 seed) : state_(seed) {}

  u64 next_u64() {
    u64 z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in (0, 1]; safe as a log() argument.
  double next_double_pos() {
    return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  }

  // Uniform integer in [0, n). Rejection keeps it unbiased.
  u64 next_below(u64 n) {
    if (n == 0) throw ContractViolation("next_below: n must be positive");
    const u64 threshold = (~n + 1) % n;  // 2^64 mod n
    for (;;) {
      u64 r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  bool next_coin(double p) { return next_double() < p; }

  // Standard normal via Box-Muller; the paired value is cached.
  double next_gaussian() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u1 = next_double_pos();
    double u2 = next_double();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * std::numbers::pi * u2;
    cached_ = r * std::sin(theta);
    have_cached_ = true;
    return r * std::cos(theta);
  }

 private:
  u64 state_;
  double cached_ = 0.0;
  bool have_cached_ = false;
};

// Derives an independent stream key from a seed plus tags. Pure function, so
// the same (seed, tags...) always names the same stream.
inline u64 mix_key(u64 seed) {
  SplitMix64 g(seed);
  return g.next_u64();
}

template <typename... Rest>
inline u64 mix_key(u64 seed, u64 first, Rest... rest) {
  SplitMix64 g(seed ^ (first + 0x9e3779b97f4a7c15ull));
  return mix_key(g.next_u64(), rest...);
}

inline u64 mix_key_str(u64 seed, const std::string& tag) {
  return mix_key(seed, fnv1a64(tag));
}

// Fisher-Yates; hand-rolled so the permutation does not depend on the
// standard library's std::shuffle algorithm choice.
template <typename T>
void shuffle(std::vector<T>& v, SplitMix64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng.next_below(i));
    std::swap(v[i - 1], v[j]);
  }
}

inline std::vector<std::size_t> random_permutation(std::size_t n, SplitMix64& rng) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  shuffle(p, rng);
  return p;
}

}  // namespace kgforge
