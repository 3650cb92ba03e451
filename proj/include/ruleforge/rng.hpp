#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace ruleforge {

using Rng = std::mt19937_64;

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

// One root seed fans out into independent named streams ("world", "init",
// "batch", "dropout", ...). An optional counter splits a stream further.
constexpr std::uint64_t stream_seed(std::uint64_t root, std::string_view name,
                                    std::uint64_t counter = 0) {
  return mix64(mix64(root ^ fnv1a(name)) + counter);
}

inline Rng make_rng(std::uint64_t root, std::string_view name, std::uint64_t counter = 0) {
  return Rng(stream_seed(root, name, counter));
}

inline double uniform01(Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

inline double gaussian(Rng& rng, double stddev = 1.0) {
  return std::normal_distribution<double>(0.0, stddev)(rng);
}

}  // namespace ruleforge
