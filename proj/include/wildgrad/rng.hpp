#pragma once

#include <cstdint>

#include "wildgrad/common.hpp"

namespace wildgrad {

// Hand-rolled generators so that streams are identical across platforms and
// standard-library versions. xoshiro256** seeded through splitmix64.

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

/// Deterministic per-task seed from (run seed, stream id, task index).
inline uint64_t mix_seed(uint64_t seed, uint64_t stream, uint64_t task) {
  uint64_t s = seed;
  uint64_t a = splitmix64(s);
  s ^= stream * 0x9e3779b97f4a7c15ull;
  uint64_t b = splitmix64(s);
  s ^= task * 0xd1b54a32d192ed03ull;
  uint64_t c = splitmix64(s);
  return a ^ (b << 1) ^ c;
}

struct Rng {
  uint64_t s[4];

  explicit Rng(uint64_t seed) {
    uint64_t sm = seed;
    for (auto& w : s) w = splitmix64(sm);
  }

  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  uint64_t next() {
    uint64_t result = rotl(s[1] * 5, 7) * 9;
    uint64_t t = s[1] << 17;
    s[2] ^= s[0];
    s[3] ^= s[1];
    s[1] ^= s[2];
    s[0] ^= s[3];
    s[2] ^= t;
    s[3] = rotl(s[3], 45);
    return result;
  }

  /// Uniform in [0,1), 53-bit resolution.
  double uniform() { return (next() >> 11) * 0x1.0p-53; }
  double uniform(double a, double b) { return a + (b - a) * uniform(); }
  /// Uniform integer in [0, n).
  uint64_t below(uint64_t n) { return next() % n; }

  Vec point_in(const Box& b) {
    Vec x(b.dim());
    for (int i = 0; i < b.dim(); ++i)
      x[i] = b.center[i] + (2 * uniform() - 1) * b.half[i];
    return x;
  }
  /// Uniform point of the closed ball of radius r in dimension d (rejection).
  Vec point_in_ball(int d, double r) {
    for (;;) {
      Vec x(d);
      double n2 = 0;
      for (int i = 0; i < d; ++i) {
        x[i] = 2 * uniform() - 1;
        n2 += x[i] * x[i];
      }
      if (n2 <= 1) return r * x;
    }
  }
};

}  // namespace wildgrad
