#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace mvp {

// SplitMix64 stream. Chosen over std engines because the full draw pipeline
// (state transition, bounded ints, reals, sampling without replacement) must be
// reproducible across implementations and platforms; every primitive below is
// specified in terms of exact 64-bit integer arithmetic.
//
// Splitting: SplitRng(seed).split(k) yields an independent stream keyed by
// (seed, k). Nested splits give (seed, k0, k1, ...) hierarchies, e.g. one
// substream per image index inside a batch.
class SplitRng {
 public:
  explicit SplitRng(std::uint64_t seed) : state_(mix(seed)) {}

  SplitRng split(std::uint64_t key) const {
    SplitRng r(0);
    r.state_ = mix(state_ + 0x9e3779b97f4a7c15ull * (key + 1));
    return r;
  }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    return mix(state_);
  }

  // Uniform over [0, n). Fixed-point multiply of a 64-bit draw; bias < 2^-64.
  std::uint64_t uniform_below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("uniform_below: n must be positive");
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform_real() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [-b, b].
  double uniform_symmetric(double b) { return (2.0 * uniform_real() - 1.0) * b; }

  // Standard normal via Box-Muller; consumes exactly two draws.
  double normal() {
    double u1 = uniform_real();
    double u2 = uniform_real();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  // k of n without replacement, in selection order (partial Fisher-Yates).
  // Consumes exactly k draws; part of the portable-stream contract relied on
  // by the patch-recombination oracle.
  std::vector<int> sample_without_replacement(int n, int k) {
    if (k < 0 || k > n) throw std::invalid_argument("sample_without_replacement: k out of range");
    std::vector<int> idx(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    for (int t = 0; t < k; ++t) {
      int j = t + static_cast<int>(uniform_below(static_cast<std::uint64_t>(n - t)));
      std::swap(idx[static_cast<std::size_t>(t)], idx[static_cast<std::size_t>(j)]);
    }
    idx.resize(static_cast<std::size_t>(k));
    return idx;
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::uint64_t state_;
};

// Deterministic seed derivation for independent substreams:
// derive(seed, a [, b]) == derive(seed, a [, b]) always, and distinct keys give
// unrelated streams. Used to key per-episode / per-candidate / per-task RNGs.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  SplitRng r = SplitRng(seed).split(a).split(b);
  return r.next_u64();
}

}  // namespace mvp
