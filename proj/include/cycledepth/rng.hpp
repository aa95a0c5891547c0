#pragma once

#include <random>

#include "cycledepth/common.hpp"

namespace cycledepth {

inline u64 splitmix64(u64& state) {
  state += 0x9e3779b97f4a7c15ULL;
  u64 z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Derives an independent stream seed from a base seed and a tag.
inline u64 derive_seed(u64 base, u64 tag) {
  u64 s = base;
  u64 a = splitmix64(s);
  s ^= tag * 0xd1342543de82ef95ULL + 0x2545f4914f6cdd1dULL;
  return a ^ splitmix64(s);
}

inline u64 hash_str(const std::string& s) {
  u64 h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Deterministic RNG with hand-rolled conversions so streams do not depend
// on standard-library distribution internals.
class Rng {
 public:
  explicit Rng(u64 seed) : gen_(seed) {}

  u64 raw() { return gen_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi] inclusive.
  i64 uniform_int(i64 lo, i64 hi) {
    if (hi < lo) throw ValueError("uniform_int: empty range");
    u64 span = static_cast<u64>(hi - lo) + 1;
    return lo + static_cast<i64>(gen_() % span);
  }

  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 gen_;
};

}  // namespace cycledepth
