#pragma once

#include <cstdint>
#include <random>

#include "projlens/tensor.hpp"

namespace projlens {

// Seeded generator with distribution code written out here rather than taken
// from <random>, whose distributions differ between standard libraries. The
// engine itself (mt19937_64) is fully specified by the standard.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Independent stream for a named purpose; the parent is not advanced.
  static Rng derive(std::uint64_t seed, std::uint64_t stream);

  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();  // Box-Muller, one value per call

  Tensor normal_tensor(Shape shape, double stddev);

  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) std::swap(first[i - 1], first[below(i)]);
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace projlens
