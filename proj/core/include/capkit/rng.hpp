#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace capkit {

// Deterministic RNG used for every stochastic choice in the toolkit.
// std::mt19937_64 output is pinned by the standard; the helpers below avoid
// std::uniform_*_distribution and std::shuffle, whose mappings are
// implementation-defined, so identical seeds give identical streams on any
// platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // Unbiased draw from [0, n). n must be > 0.
  std::size_t uniform_index(std::size_t n) {
    const std::uint64_t nn = static_cast<std::uint64_t>(n);
    const std::uint64_t reject_below = (0 - nn) % nn;  // 2^64 mod n
    std::uint64_t x = eng_();
    while (x < reject_below) x = eng_();
    return static_cast<std::size_t>(x % nn);
  }

  // [0, 1) with 53 random bits.
  double uniform_real() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform_range(double lo, double hi) { return lo + (hi - lo) * uniform_real(); }

  double normal() {
    constexpr double two_pi = 6.283185307179586476925287;
    double u1 = uniform_real();
    while (u1 <= 0.0) u1 = uniform_real();
    const double u2 = uniform_real();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
  }

  // Fisher-Yates with our own index draws.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[uniform_index(i)]);
    }
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace capkit
