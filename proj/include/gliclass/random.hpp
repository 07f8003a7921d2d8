#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace gliclass {

// Seeded RNG with self-contained gaussian sampling so that results do not
// depend on the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  // Uniform double in [0, 1).
  double uniform() {
    return (eng_() >> 11) * (1.0 / 9007199254740992.0);  // 53-bit mantissa
  }

  // Standard normal via Box-Muller, two uniforms per sample.
  double gaussian() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 5.0e-324;  // avoid log(0)
    constexpr double two_pi = 6.283185307179586476925286766559;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
  }

  // Uniform integer in [0, n).
  uint64_t below(uint64_t n) {
    return n == 0 ? 0 : eng_() % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  uint64_t raw() { return eng_(); }

 private:
  std::mt19937_64 eng_;
};

}  // namespace gliclass
