#pragma once

// Seed derivation and a platform-independent shuffle. Randomized pipeline
// stages each consume an independently derived stream, so reordering or
// parallelizing one stage cannot disturb the draws of another.

#include <cstdint>
#include <numeric>
#include <vector>

namespace penc {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Independent sub-stream seed for (seed, stream, index).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0) {
    return splitmix64(splitmix64(seed ^ splitmix64(stream)) + index);
}

/// Fisher-Yates permutation of 0..n-1 driven by splitmix64 directly, so the
/// result does not depend on the standard library's distribution internals.
inline std::vector<int> shuffled_indices(int n, std::uint64_t seed) {
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    std::uint64_t state = seed;
    for (int i = n - 1; i > 0; --i) {
        state = splitmix64(state);
        const int j = static_cast<int>(state % static_cast<std::uint64_t>(i + 1));
        std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    }
    return idx;
}

} // namespace penc
