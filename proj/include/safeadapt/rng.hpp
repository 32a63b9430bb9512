#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace safeadapt {

/// 64-bit FNV-1a, used for naming RNG streams and for file checksums.
constexpr std::uint64_t fnv1a64(std::string_view bytes) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seeded random stream. Each (master seed, stage name) pair maps to an
/// independent stream: seed = splitmix64(splitmix64(master) ^ fnv1a(name)).
/// Uniform doubles are built from the top 53 bits so the sequence does not
/// depend on the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

  static Rng stream(std::uint64_t master_seed, std::string_view name) {
    return Rng(splitmix64(master_seed) ^ fnv1a64(name));
  }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // Lemire-style rejection keeps the draw unbiased.
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  /// Standard normal via Box-Muller (no cached second value, deterministic).
  double normal();

  /// Child stream, used when a stage needs several independent substreams.
  Rng split(std::string_view name) { return Rng(next_u64() ^ fnv1a64(name)); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace safeadapt
