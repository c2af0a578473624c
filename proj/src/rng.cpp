#include "psynorm/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace psynorm {

std::uint64_t bounded(std::mt19937_64& gen, std::uint64_t bound) {
  if (bound == 0) throw std::invalid_argument("bounded: zero bound");
  // Largest multiple of bound representable; draws above it are rejected.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x = gen();
  while (x >= limit) x = gen();
  return x % bound;
}

std::vector<std::string> shuffled_keys(std::vector<std::string> keys, std::uint64_t seed) {
  std::sort(keys.begin(), keys.end());
  seeded_shuffle(keys, seed);
  return keys;
}

std::size_t train_count(std::size_t n, double train_fraction) {
  // The epsilon keeps products like 0.7 * 10 from flooring to 6.
  return static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(n) + 1e-9));
}

}  // namespace psynorm
