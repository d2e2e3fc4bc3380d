// Copyright 2026 The stau Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Deterministic PRNG: SplitMix64 used to seed xoshiro256++. All draws are
// built from explicit 64-bit integer arithmetic so that identically seeded
// streams are bitwise reproducible across platforms.

#pragma once

#include <cmath>
#include <cstdint>

namespace stau {

struct SplitMix64 {
  uint64_t state;

  explicit SplitMix64(uint64_t seed) : state(seed) {}

  uint64_t next() {
    uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }
};

class Xoshiro256pp {
 public:
  explicit Xoshiro256pp(uint64_t seed) {
    SplitMix64 sm(seed);
    for (auto& w : s_) w = sm.next();
  }

  // Stream derived from (seed, index): independent per-sequence generators.
  static Xoshiro256pp stream(uint64_t seed, uint64_t index) {
    SplitMix64 sm(seed);
    uint64_t base = sm.next();
    SplitMix64 ix(index * 0x9E3779B97F4A7C15ULL + 0x632BE59BD9B4E019ULL);
    return Xoshiro256pp(base ^ ix.next());
  }

  uint64_t next() {
    uint64_t r = rotl(s_[0] + s_[3], 23) + s_[0];
    uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return r;
  }

  // Uniform double in [0, 1).
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n]. Modulo reduction: the bias is negligible for
  // the ranges used here and the result is platform-independent.
  uint64_t below(uint64_t n_inclusive) {
    return next() % (n_inclusive + 1);
  }

  bool coin() { return (next() >> 63) != 0; }

  void save(uint64_t out[4]) const {
    for (int i = 0; i < 4; ++i) out[i] = s_[i];
  }
  void restore(const uint64_t in[4]) {
    for (int i = 0; i < 4; ++i) s_[i] = in[i];
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  uint64_t s_[4];
};

}  // namespace stau
