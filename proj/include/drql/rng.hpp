#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <span>

namespace drql {

/// Deterministic counter-based random stream (splitmix64 core).
///
/// Every random quantity in the library flows through a stream keyed by an
/// explicit (seed, path...) tuple — no OS entropy, no global state — so runs
/// are reproducible bit-for-bit and distinct (iteration, state, action, term)
/// tuples can be sampled in parallel without coordination.
class Rng {
 public:
  explicit Rng(std::uint64_t state) : state_(state) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1), 53-bit resolution.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform in (0, 1); safe as a log() argument.
  double next_double_open() {
    return (static_cast<double>(next_u64() >> 12) + 0.5) * 0x1.0p-52;
  }

  /// Uniform in [lo, hi).
  double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  /// Standard normal (Box-Muller, one value per call).
  double next_normal() {
    const double u1 = next_double_open();
    const double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::uint64_t state_;
};

namespace detail {

inline std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

}  // namespace detail

/// Derives an independent stream from a seed and a key path, e.g.
/// `stream(seed, {t, s, a, term})`.
inline Rng stream(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
  std::uint64_t h = detail::mix64(seed ^ 0x6a09e667f3bcc909ULL);
  for (std::uint64_t p : path) {
    h = detail::mix64(h ^ detail::mix64(p + 0x9e3779b97f4a7c15ULL));
  }
  return Rng(h);
}

/// Stable 64-bit seed derivation, e.g. one seed per replication run.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
  return detail::mix64(detail::mix64(seed ^ 0x243f6a8885a308d3ULL) ^
                       detail::mix64(salt + 0x452821e638d01377ULL));
}

/// Samples an index from a probability row by inverse CDF. Zero-probability
/// entries are never returned, even under cumulative rounding near u ~ 1.
inline int sample_index(Rng& rng, std::span<const double> probs) {
  const double u = rng.next_double();
  double acc = 0.0;
  int last = 0;
  for (int i = 0; i < static_cast<int>(probs.size()); ++i) {
    if (probs[i] <= 0.0) continue;
    acc += probs[i];
    last = i;
    if (u < acc) return i;
  }
  return last;
}

}  // namespace drql
