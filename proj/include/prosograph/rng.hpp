#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace prosograph {

// Splittable counter-style RNG built on splitmix64. A single root seed plus
// deterministic split() labels fix every random draw in a run.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // inclusive bounds
  int uniform_int(int lo, int hi) {
    return lo + static_cast<int>(next_u64() % static_cast<uint64_t>(hi - lo + 1));
  }

  double normal(double mean = 0.0, double stddev = 1.0) {
    constexpr double kTwoPi = 6.283185307179586476925286766559;
    double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
    double u2 = uniform();
    return mean + stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
  }

  // Independent child stream, deterministic in (state, label).
  Rng split(std::string_view label) const {
    uint64_t h = 0xcbf29ce484222325ull;
    for (char c : label) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ull;
    }
    Rng child(state_ ^ h);
    child.next_u64();
    return child;
  }

  Rng split(uint64_t salt) const {
    Rng child(state_ ^ (0x9e3779b97f4a7c15ull * (salt + 1)));
    child.next_u64();
    return child;
  }

 private:
  uint64_t state_;
};

}  // namespace prosograph
