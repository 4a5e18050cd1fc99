#pragma once

#include <cstdint>
#include <random>

namespace flfl {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Independent random streams, keyed so that results do not depend on
// scheduling order (e.g. one stream per (round, client)).
enum class Stream : std::uint64_t {
    Blobs = 1,
    TestSet,
    LabelSplit,
    Partition,
    InitParams,
    ClientSampling,
    ServerFinetune,
    PseudoLabels,
    ClientTrain,
};

inline std::uint64_t derive_seed(std::uint64_t base, Stream stream,
                                 std::uint64_t a = 0, std::uint64_t b = 0) {
    std::uint64_t h = splitmix64(base);
    h = splitmix64(h ^ static_cast<std::uint64_t>(stream));
    h = splitmix64(h ^ a);
    h = splitmix64(h ^ b);
    return h;
}

inline std::mt19937_64 make_rng(std::uint64_t seed) {
    return std::mt19937_64(seed);
}

}  // namespace flfl
