#pragma once

#include <complex>
#include <cstdint>
#include <random>

namespace beamsel {

// splitmix64 step, used to derive independent seeds for sub-streams.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Seed for the sub-stream `index` of a parent stream.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t s = seed ^ (0xa076'1d64'78bd'642fULL + index);
  std::uint64_t a = splitmix64(s);
  return splitmix64(s) ^ a;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(gen_);
  }

  double gaussian(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(gen_);
  }

  // Circularly-symmetric complex Gaussian with total variance `variance`.
  std::complex<double> complex_gaussian(double variance = 1.0) {
    const double s = std::sqrt(variance / 2.0);
    const double re = gaussian(0.0, 1.0);
    const double im = gaussian(0.0, 1.0);
    return {s * re, s * im};
  }

  // Uniform integer in [0, bound).
  std::uint64_t integer(std::uint64_t bound) {
    return std::uniform_int_distribution<std::uint64_t>(0, bound - 1)(gen_);
  }

  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
};

}  // namespace beamsel
