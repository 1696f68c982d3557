#include "icl/rng.hpp"

#include <cmath>

namespace icl {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

std::uint64_t RngState::next_u64() {
  const std::uint64_t k = counter_++;
  return splitmix64(splitmix64(seed_) ^ (k * 0xD1B54A32D192ED03ULL));
}

double RngState::next_uniform() {
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double RngState::next_gaussian() {
  // Box-Muller, cosine branch only; each draw consumes exactly two words.
  const double u1 = next_uniform();
  const double u2 = next_uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

RngState RngState::substream(std::string_view name) const {
  return RngState(splitmix64(seed_ ^ fnv1a64(name)));
}

Matrix gaussian(RngState& rng, std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0) throw DimensionError("gaussian: rows and cols must be >= 1");
  Matrix m(rows, cols);
  for (double& v : m.data()) v = rng.next_gaussian();
  return m;
}

}  // namespace icl
