#pragma once

#include <cstdint>
#include <initializer_list>

namespace cyclecl {

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Derives an independent stream seed from a base seed and a path of ids, so
// every random decision is a pure function of (seed, ids).
constexpr std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> ids) {
  std::uint64_t s = mix64(base);
  for (auto id : ids) s = mix64(s ^ mix64(id + 0x632BE59BD9B4E019ULL));
  return s;
}

// Stream tags for derive_seed.
enum SeedStream : std::uint64_t {
  kStreamVideo = 1,
  kStreamBatch = 2,
  kStreamAugment = 3,
  kStreamNeighbors = 4,
  kStreamInit = 5,
  kStreamLabels = 6,
};

}  // namespace cyclecl
