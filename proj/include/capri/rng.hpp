#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace capri {

// splitmix64 generator. Chosen over std::mt19937 because the standard does
// not pin down distribution algorithms, and query sets / fits must reproduce
// bit-exactly from a seed regardless of the standard library in use.
class Rng {
 public:
  static constexpr const char* kAlgorithm = "splitmix64";

  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 bits of precision.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n) {
    // Rejection-free modulo is fine here: n is tiny relative to 2^64 for all
    // uses in this project, so the bias is far below reproducibility concerns.
    return next_u64() % n;
  }

  // Standard normal via Box-Muller (deterministic, no cached spare).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_index(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Independent stream for a sub-task, decorrelated from this one.
  Rng fork(std::uint64_t stream_id) {
    return Rng(next_u64() ^ (0x9E3779B97F4A7C15ULL * (stream_id + 1)));
  }

 private:
  std::uint64_t state_;
};

}  // namespace capri
