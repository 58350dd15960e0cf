#pragma once

#include <cstdint>
#include <cstring>
#include <random>
#include <string_view>

namespace unitext {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// FNV-1a, used for content hashes and per-sample seed derivation.
inline std::uint64_t fnv1a64(const void* bytes, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a64(std::string_view s,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a64(s.data(), s.size(), h);
}

inline std::uint64_t hash_u64(std::uint64_t h, std::uint64_t v) {
  unsigned char b[8];
  std::memcpy(b, &v, 8);
  return fnv1a64(b, 8, h);
}

// Deterministic RNG with portable derived distributions. The engine is
// std::mt19937_64 (bit-stable across platforms); the uniform/normal/below
// helpers are hand-rolled because the std distributions are
// implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(splitmix64(seed)) {}
  Rng(std::uint64_t seed, std::string_view stream)
      : eng_(splitmix64(seed ^ fnv1a64(stream))) {}

  std::uint64_t next_u64() { return eng_(); }

  // [0, 1)
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; consumes exactly two uniforms per sample.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  // Uniform integer in [0, n), n > 0. Lemire's multiply-shift, no modulo bias
  // worth caring about at our ranges.
  int below(int n) {
    return static_cast<int>(
        (static_cast<unsigned __int128>(next_u64()) *
         static_cast<unsigned __int128>(static_cast<std::uint64_t>(n))) >>
        64);
  }

  bool coin(double p) { return uniform() < p; }

 private:
  std::mt19937_64 eng_;
};

}  // namespace unitext
