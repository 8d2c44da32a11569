#pragma once

#include <cstdint>
#include <random>

namespace impose {

/// splitmix64 mix step; used to derive independent sub-seeds from a master
/// seed so per-query / per-epoch streams stay decoupled and reproducible.
inline uint64_t mix_seed(uint64_t seed) {
  uint64_t z = seed + 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline uint64_t derive_seed(uint64_t seed, uint64_t stream, uint64_t index = 0) {
  return mix_seed(mix_seed(seed ^ (stream * 0xd1342543de82ef95ULL)) + index);
}

using Rng = std::mt19937_64;

inline Rng make_rng(uint64_t seed) { return Rng(seed); }

}  // namespace impose
