#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace fedsa {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> tags)
{
    std::uint64_t h = splitmix64(seed);
    for (auto t : tags) h = splitmix64(h ^ splitmix64(t + 0x632BE59BD9B4E019ULL));
    return h;
}

// Independent stream keyed by a seed plus any number of tags, e.g.
// (seed, client id, round). Reordering or skipping other streams never
// changes the values drawn from this one.
inline Rng make_stream(std::uint64_t seed, std::initializer_list<std::uint64_t> tags)
{
    return Rng(derive_seed(seed, tags));
}

// Stream tags for the different consumers of randomness.
namespace stream {
inline constexpr std::uint64_t kData = 1;
inline constexpr std::uint64_t kPartition = 2;
inline constexpr std::uint64_t kSplit = 3;
inline constexpr std::uint64_t kInit = 4;
inline constexpr std::uint64_t kAnchors = 5;
inline constexpr std::uint64_t kSampling = 6;
inline constexpr std::uint64_t kLocalTrain = 7;
inline constexpr std::uint64_t kZoo = 8;
}  // namespace stream

}  // namespace fedsa
