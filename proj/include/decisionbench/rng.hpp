#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace decisionbench {

// Portable randomness. std::mt19937_64 output is fixed by the standard, but
// the std distributions are not, so every conversion below is hand-rolled
// from raw 64-bit draws and is bit-identical across platforms.

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// FNV-1a, 64-bit.
inline constexpr std::uint64_t fnv1a64(std::string_view s,
                                       std::uint64_t h = 0xcbf29ce484222325ULL) noexcept {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Derives an independent stream seed from a root seed and a key.
inline constexpr std::uint64_t substream_seed(std::uint64_t root, std::uint64_t key) noexcept {
  return splitmix64(splitmix64(root) ^ splitmix64(key + 0x632be59bd9b4e019ULL));
}

inline constexpr std::uint64_t substream_seed(std::uint64_t root, std::string_view key) noexcept {
  return substream_seed(root, fnv1a64(key));
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Rejection sampling keeps it unbiased.
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = (~std::uint64_t{0}) - ((~std::uint64_t{0}) % n);
    std::uint64_t v;
    do {
      v = engine_();
    } while (v >= limit);
    return v % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Irwin-Hall(12) approximation of a standard normal: exact arithmetic,
  // so portable, with support [-6, 6].
  double normal_ih() {
    double s = 0.0;
    for (int i = 0; i < 12; ++i) s += uniform();
    return s - 6.0;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace decisionbench
