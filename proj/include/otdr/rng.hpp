#pragma once

#include <cstdint>
#include <random>

namespace otdr {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer. Used to derive independent per-item streams from a
/// base seed so that batch generation is order- and thread-independent.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index,
                                    std::uint64_t stream = 0) noexcept {
  return mix64(mix64(base ^ mix64(stream + 0x5851f42d4c957f2dULL)) + index);
}

// Well-known stream tags so different consumers of one seed never collide.
namespace stream {
inline constexpr std::uint64_t kTraceParams = 1;
inline constexpr std::uint64_t kTraceNoise = 2;
inline constexpr std::uint64_t kExtract = 3;
inline constexpr std::uint64_t kSplit = 4;
inline constexpr std::uint64_t kInit = 5;
inline constexpr std::uint64_t kShuffle = 6;
inline constexpr std::uint64_t kDropout = 7;
inline constexpr std::uint64_t kMonteCarlo = 8;
inline constexpr std::uint64_t kEvalVariants = 9;
}  // namespace stream

}  // namespace otdr
