#pragma once

#include <cstdint>
#include <random>

namespace ct {

// splitmix64 finalizer; used to derive independent stream seeds from a
// master seed without correlated low bits.
inline std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Named purposes keep RNG streams independent: a method variant that skips
// one branch must not shift the draws seen by another branch.
enum class RngStream : std::uint64_t {
    kGlyphBank = 1,
    kPretrainData = 2,
    kDownstreamData = 3,
    kParamInit = 4,
    kBatchOrder = 5,
    kQueueInit = 6,
    kQueueSampleImage = 7,
    kQueueSamplePatch = 8,
    kHeadNoise = 9,
};

inline std::mt19937_64 make_rng(std::uint64_t seed, RngStream stream,
                                std::uint64_t index = 0) {
    std::uint64_t s = mix_seed(seed);
    s = mix_seed(s ^ static_cast<std::uint64_t>(stream) * 0x9e3779b97f4a7c15ULL);
    s = mix_seed(s ^ index);
    return std::mt19937_64(s);
}

}  // namespace ct
