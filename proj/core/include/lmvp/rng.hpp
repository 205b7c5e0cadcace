#pragma once

#include <cstdint>

namespace lmvp {

// SplitMix64. Small, fast, and bit-reproducible on every platform, which is
// what the determinism contracts need. Distribution helpers are hand-rolled
// because the <random> distributions are not specified bit-exactly.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double next_unit() { return double(next_u64() >> 11) * 0x1.0p-53; }
  float next_unit_f() { return float(next_u64() >> 40) * 0x1.0p-24f; }

  // Uniform in [-1, 1).
  double next_sym() { return next_unit() * 2.0 - 1.0; }

  // Uniform integer in [lo, hi], inclusive. Unbiased via rejection.
  int64_t next_int(int64_t lo, int64_t hi) {
    uint64_t span = uint64_t(hi - lo) + 1;
    uint64_t limit = ~uint64_t(0) - (~uint64_t(0) % span + 1) % span;
    uint64_t x;
    do {
      x = next_u64();
    } while (x > limit);
    return lo + int64_t(x % span);
  }

  // +1 or -1.
  int next_sign() { return (next_u64() & 1) ? 1 : -1; }

 private:
  uint64_t state_;
};

// Derives an independent stream from a base seed and an index/salt.
inline uint64_t mix_seed(uint64_t seed, uint64_t salt) {
  uint64_t z = seed + 0x9e3779b97f4a7c15ull * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// FNV-1a, used to derive per-tensor init streams from names.
inline uint64_t hash_str(const char* s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (; *s; ++s) {
    h ^= uint64_t(uint8_t(*s));
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace lmvp
