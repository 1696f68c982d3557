#pragma once

#include <cstdint>
#include <string_view>

#include "icl/tensor.hpp"

namespace icl {

// Counter-based generator: draw k is a pure function of (seed, k), so streams
// are reproducible across runs and platforms. Single owner; split with
// substream() for independent consumers.
class RngState {
 public:
  explicit RngState(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();
  // uniform in (0, 1), 53-bit resolution
  double next_uniform();
  double next_gaussian();

  // Independent stream derived from this seed and a name ("init", "train-tasks", ...).
  RngState substream(std::string_view name) const;

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view bytes);

// i.i.d. standard normal entries, filled row-major.
Matrix gaussian(RngState& rng, std::size_t rows, std::size_t cols);

}  // namespace icl
