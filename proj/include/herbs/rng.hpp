#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace herbs {

// Deterministic RNG used everywhere randomness is needed (parameter init,
// data synthesis, augmentation, shuffling). Hand-rolled so results are
// identical across platforms and standard-library versions.
class Rng {
public:
  explicit Rng(uint64_t seed) {
    // splitmix64 seeding of the xoshiro256++ state
    uint64_t x = seed;
    for (auto& w : s_) w = splitmix64(x);
  }

  // Derive an independent stream from a base seed and up to three tags.
  // Pure function of its arguments, so draws never depend on call order
  // elsewhere in the program.
  static Rng stream(uint64_t seed, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
    uint64_t x = seed;
    uint64_t h = splitmix64(x);
    x = h ^ (a + 0x9e3779b97f4a7c15ULL);
    h = splitmix64(x);
    x = h ^ (b + 0xbf58476d1ce4e5b9ULL);
    h = splitmix64(x);
    x = h ^ (c + 0x94d049bb133111ebULL);
    return Rng(splitmix64(x));
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // uniform in [0, 1)
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // standard normal via Box-Muller (no cached spare: keeps the stream a pure
  // function of draw count)
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // integer in [0, n)
  uint64_t below(uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

  int range_int(int lo, int hi_inclusive) {
    return lo + int(below(uint64_t(hi_inclusive - lo + 1)));
  }

  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = size_t(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

private:
  static uint64_t splitmix64(uint64_t& x) {
    uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  uint64_t s_[4];
};

}  // namespace herbs
