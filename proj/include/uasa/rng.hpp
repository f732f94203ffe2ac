#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace uasa {

// All randomness descends from one experiment seed. Each consumer draws from a
// named stream (and optionally a counter such as the epoch), so changing how
// one component consumes randomness never perturbs another.
inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream,
                                 std::uint64_t counter = 0) noexcept {
  return splitmix64(splitmix64(seed ^ fnv1a(stream)) + counter);
}

inline std::mt19937_64 make_rng(std::uint64_t seed, std::string_view stream,
                                std::uint64_t counter = 0) {
  return std::mt19937_64(derive_seed(seed, stream, counter));
}

}  // namespace uasa
