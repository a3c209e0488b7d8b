#pragma once

#include <cstdint>
#include <cmath>

namespace uet {

// Counter-based deterministic generator: sample i is a pure function of
// (seed, i), so streams are reproducible independent of platform and of
// how many values other code has drawn from sibling streams.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed) {}

  uint64_t next_u64() { return mix(seed_, counter_++); }

  // uniform in [0, 1)
  double next_uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // standard normal via Box-Muller (always consumes two uniforms)
  double next_normal() {
    double u1 = next_uniform();
    double u2 = next_uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  // integer in [0, n)
  uint64_t next_below(uint64_t n) { return next_u64() % n; }

  // derive an independent stream; fork(a) and fork(b) never collide for a != b
  Rng fork(uint64_t stream) const { return Rng(mix(seed_, 0x5eed0000u + stream)); }

  uint64_t seed() const { return seed_; }

  static uint64_t mix(uint64_t seed, uint64_t counter) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ull * (counter + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

 private:
  uint64_t seed_;
  uint64_t counter_ = 0;
};

}  // namespace uet
