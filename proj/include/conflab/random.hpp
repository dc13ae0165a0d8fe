#pragma once

#include <cstdint>

namespace conflab {

/// splitmix64 finalizer over (base, stream); gives independent RNG seeds for
/// the separate random streams of a run.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) noexcept {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Stream ids used by the trainers and generators.
inline constexpr std::uint64_t kInitStream = 1;
inline constexpr std::uint64_t kShuffleStream = 2;
inline constexpr std::uint64_t kMixStream = 3;

} // namespace conflab
