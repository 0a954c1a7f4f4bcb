#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace adareg {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Sub-seed for one purpose ("init", "sampler", "augment", ...) of a run,
/// optionally keyed by up to two indices.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose, std::uint64_t a = 0,
                                 std::uint64_t b = 0) {
  std::uint64_t h = splitmix64(seed);
  for (char ch : purpose) h = splitmix64(h ^ static_cast<unsigned char>(ch));
  h = splitmix64(h ^ a);
  return splitmix64(h ^ (b + 0x632be59bd9b4e019ULL));
}

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

}  // namespace adareg
