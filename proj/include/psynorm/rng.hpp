#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace psynorm {

/// splitmix64 finalizer; used to derive independent per-split seeds.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Uniform integer in [0, bound) by rejection on the top of the 64-bit range.
/// Bit-exact across platforms because std::mt19937_64 output is standardized.
std::uint64_t bounded(std::mt19937_64& gen, std::uint64_t bound);

/// Fisher-Yates from the back: for i = n-1 .. 1, swap(v[i], v[bounded(i+1)]).
template <typename T>
void seeded_shuffle(std::vector<T>& v, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  for (std::size_t i = v.size(); i > 1; --i) {
    auto j = static_cast<std::size_t>(bounded(gen, i));
    std::swap(v[i - 1], v[j]);
  }
}

/// The shared split rule: sort keys bytewise, shuffle with `seed`, return the
/// permuted keys. Callers take the first floor(fraction * n) as the train side.
std::vector<std::string> shuffled_keys(std::vector<std::string> keys, std::uint64_t seed);

std::size_t train_count(std::size_t n, double train_fraction);

}  // namespace psynorm
