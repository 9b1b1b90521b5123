#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace fedmp {

using Rng = std::mt19937_64;

// Mixes a base seed with a list of stream tags (round, client id, ...)
// into an independent 64-bit seed. Used everywhere a sub-stream is needed
// so that no two call sites share a generator.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags);

inline Rng make_rng(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
    return Rng(derive_seed(base, tags));
}

// Stable tags for the different random streams of a run.
namespace stream {
inline constexpr std::uint64_t kInit = 0x11;
inline constexpr std::uint64_t kReinit = 0x12;
inline constexpr std::uint64_t kShuffle = 0x21;
inline constexpr std::uint64_t kCenters = 0x31;
inline constexpr std::uint64_t kSamples = 0x32;
inline constexpr std::uint64_t kOutliers = 0x33;
inline constexpr std::uint64_t kHoldout = 0x34;
inline constexpr std::uint64_t kPartition = 0x41;
inline constexpr std::uint64_t kEnsemble = 0x51;
inline constexpr std::uint64_t kFinetune = 0x61;
}  // namespace stream

}  // namespace fedmp
