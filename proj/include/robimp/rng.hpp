#pragma once

// Deterministic hashing and counter-mode random streams.  Every random
// quantity in the library is a pure function of (seed, stream, counter),
// so results never depend on evaluation order or thread scheduling.

#include <cstdint>
#include <cmath>

namespace robimp {

// SplitMix64 finalizer, the basis for all hashing below.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t hash_combine(std::uint64_t h, std::uint64_t v) {
  return mix64(h ^ (v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2)));
}

inline std::uint64_t hash_bytes(std::uint64_t h, const char* data, std::size_t len) {
  std::uint64_t acc = h;
  std::size_t i = 0;
  for (; i + 8 <= len; i += 8) {
    std::uint64_t w = 0;
    for (int j = 0; j < 8; ++j) w |= (std::uint64_t)(unsigned char)data[i + j] << (8 * j);
    acc = hash_combine(acc, w);
  }
  std::uint64_t tail = 0;
  for (int j = 0; i < len; ++i, ++j) tail |= (std::uint64_t)(unsigned char)data[i] << (8 * j);
  return hash_combine(acc, tail ^ (std::uint64_t)len);
}

// Uniform in (0,1) from 64 random bits; never returns an endpoint.
inline double bits_to_unit(std::uint64_t bits) {
  return (double)((bits >> 11) | 1ULL) * 0x1.0p-53;
}

// Counter-mode generator: draw k at counter c of stream s under seed is
// mix64 applied to a fixed combination of the four values.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream)
      : base_(hash_combine(mix64(seed ^ 0x243f6a8885a308d3ULL), stream)) {}

  std::uint64_t bits(std::uint64_t counter, std::uint64_t draw = 0) const {
    return mix64(base_ ^ mix64(counter * 0x100000001b3ULL + draw));
  }

  double uniform(std::uint64_t counter, std::uint64_t draw = 0) const {
    return bits_to_unit(bits(counter, draw));
  }

  // Box-Muller; one normal per (counter, draw) pair, two uniforms consumed.
  double normal(std::uint64_t counter, std::uint64_t draw = 0) const {
    double u1 = uniform(counter, 2 * draw);
    double u2 = uniform(counter, 2 * draw + 1);
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(6.28318530717958647692528676655900577 * u2);
  }

 private:
  std::uint64_t base_;
};

}  // namespace robimp
