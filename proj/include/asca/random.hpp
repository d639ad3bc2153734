#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <random>
#include <vector>

namespace asca {

/// SplitMix64 finalizer; used to derive independent stream keys.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Key derived from a master seed and a tuple of counters. The stream for
/// (seed, i, j, ...) never depends on which other streams were drawn, so
/// work can be split over threads without changing results.
inline std::uint64_t stream_key(std::uint64_t seed, std::initializer_list<std::uint64_t> counters) {
  std::uint64_t key = mix64(seed);
  for (std::uint64_t c : counters) key = mix64(key ^ mix64(c + 0x632be59bd9b4e019ULL));
  return key;
}

inline std::mt19937_64 keyed_engine(std::uint64_t seed, std::initializer_list<std::uint64_t> counters) {
  return std::mt19937_64(stream_key(seed, counters));
}

/// Unbiased integer in [0, bound) using Lemire's multiply-shift rejection.
inline std::uint64_t bounded(std::mt19937_64& engine, std::uint64_t bound) {
  __uint128_t m = static_cast<__uint128_t>(engine()) * bound;
  auto low = static_cast<std::uint64_t>(m);
  if (low < bound) {
    const std::uint64_t threshold = (0 - bound) % bound;
    while (low < threshold) {
      m = static_cast<__uint128_t>(engine()) * bound;
      low = static_cast<std::uint64_t>(m);
    }
  }
  return static_cast<std::uint64_t>(m >> 64);
}

/// Fisher-Yates permutation of 0..n-1, reproducible across standard libraries.
inline std::vector<std::size_t> random_permutation(std::size_t n, std::mt19937_64& engine) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(bounded(engine, i));
    std::swap(perm[i - 1], perm[j]);
  }
  return perm;
}

}  // namespace asca
