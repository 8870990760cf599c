#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace causalnet {

// Counter-based seed splitting: every random stream in the library is derived
// from a single master seed plus a path of integer ids. Work scheduled in any
// order (or in parallel) therefore sees identical streams.

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base,
                                 std::initializer_list<std::uint64_t> ids = {}) {
    std::uint64_t h = splitmix64(base);
    for (std::uint64_t id : ids)
        h = splitmix64(h ^ splitmix64(id));
    return h;
}

inline std::mt19937_64 make_rng(std::uint64_t base,
                                std::initializer_list<std::uint64_t> ids = {}) {
    return std::mt19937_64(derive_seed(base, ids));
}

} // namespace causalnet
