#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace logeiv {

using Rng = std::mt19937_64;

// splitmix64 finalizer
inline std::uint64_t mix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Derives an independent stream seed from a master seed and a path of
// integer coordinates (cell, replicate, fold, ...). Order-sensitive.
inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path)
{
    std::uint64_t h = mix64(master);
    for (auto v : path) {
        h = mix64(h ^ mix64(v + 0x632be59bd9b4e019ULL));
    }
    return h;
}

inline Rng make_rng(std::uint64_t master, std::initializer_list<std::uint64_t> path = {})
{
    return Rng(derive_seed(master, path));
}

} // namespace logeiv
