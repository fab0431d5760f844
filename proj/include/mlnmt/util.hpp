#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace mlnmt {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Portable seeded generator. Only the raw mt19937_64 stream is used, so draws
// are identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t next() { return engine_(); }

  // Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);

  // Uniform double in [0, 1).
  double uniform();

  // Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace mlnmt
