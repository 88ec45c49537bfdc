#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace vitcap {

// splitmix64 step; the backbone of seed derivation and the generator below.
inline uint64_t splitmix64(uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Derives a child seed from a parent seed and a list of stream labels.
// Used everywhere a reproducible independent stream is needed:
// per-trial, per-(h,t) config, per-(epoch,batch) augmentation.
inline uint64_t seed_mix(uint64_t seed, std::initializer_list<uint64_t> labels) {
  uint64_t s = seed ^ 0xa02899c1e96e3db3ULL;
  for (uint64_t l : labels) {
    s ^= splitmix64(s) ^ (l + 0x9e3779b97f4a7c15ULL);
    (void)splitmix64(s);
  }
  return splitmix64(s);
}

inline uint64_t seed_mix(uint64_t seed, uint64_t a) { return seed_mix(seed, {a}); }
inline uint64_t seed_mix(uint64_t seed, uint64_t a, uint64_t b) { return seed_mix(seed, {a, b}); }
inline uint64_t seed_mix(uint64_t seed, uint64_t a, uint64_t b, uint64_t c) {
  return seed_mix(seed, {a, b, c});
}

// Deterministic RNG with a platform-independent stream: the same seed gives
// the same draws on every standard library and compiler. std::mt19937 plus
// std::*_distribution would not (distributions are implementation-defined).
class DetRng {
 public:
  explicit DetRng(uint64_t seed) : state_(seed) {
    // warm up so that small seeds do not yield correlated first draws
    (void)splitmix64(state_);
    (void)splitmix64(state_);
  }

  uint64_t next_u64() { return splitmix64(state_); }

  // uniform in [0, 1), 53-bit resolution
  double uniform01() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + uniform01() * (hi - lo); }

  // uniform integer in [0, n), rejection-free via 128-bit multiply
  uint64_t below(uint64_t n) {
    return uint64_t((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // standard normal, Box-Muller with a cached spare
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform01(), u2 = uniform01();
    // avoid log(0)
    while (u1 <= 0.0) u1 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace vitcap
