#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace diffrec {

using Rng = std::mt19937_64;

// splitmix64; used to derive independent stream seeds from (seed, salt...) so
// that reordering unrelated RNG consumers cannot perturb each other.
inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t mix_seed(uint64_t seed, std::initializer_list<uint64_t> salts) {
    uint64_t s = splitmix64(seed);
    for (uint64_t v : salts) {
        s = splitmix64(s ^ v);
    }
    return s;
}

inline Rng make_rng(uint64_t seed, std::initializer_list<uint64_t> salts = {}) {
    return Rng(mix_seed(seed, salts));
}

}  // namespace diffrec
