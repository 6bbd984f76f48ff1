#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace permtour {

/// SplitMix64 finalizer. Used to derive independent stream keys.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derive a child seed from a root seed and a path of indices, e.g.
/// derive_seed(seed, {kComponentTrain, epoch, step, slot}). The result depends
/// only on the arguments, never on call order, so parallel consumers agree.
inline std::uint64_t derive_seed(std::uint64_t root,
                                 std::initializer_list<std::uint64_t> path) {
  std::uint64_t h = mix64(root);
  for (auto p : path) h = mix64(h ^ mix64(p + 0x632be59bd9b4e019ULL));
  return h;
}

// Component tags used for seed derivation.
inline constexpr std::uint64_t kStreamInstances = 1;
inline constexpr std::uint64_t kStreamGumbel = 2;
inline constexpr std::uint64_t kStreamDropout = 3;
inline constexpr std::uint64_t kStreamInit = 4;
inline constexpr std::uint64_t kStreamShuffle = 5;
inline constexpr std::uint64_t kStreamMc = 6;
inline constexpr std::uint64_t kStreamBaseline = 7;

/// Deterministic generator with a portable uniform mapping. std distributions
/// are implementation-defined, so doubles are built from the top 53 bits.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(mix64(seed)) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, bound). Lemire-style rejection keeps it unbiased.
  std::uint64_t below(std::uint64_t bound) {
    if (bound <= 1) return 0;
    const std::uint64_t limit = (~std::uint64_t{0}) - (~std::uint64_t{0}) % bound;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % bound;
  }

  template <class It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      const auto j = below(i);
      std::swap(first[i - 1], first[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace permtour
