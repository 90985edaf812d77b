#pragma once

#include <cstdint>
#include <random>

namespace ddpmlab {

using Rng = std::mt19937_64;

// Independent substream for (root seed, stream index). Every chain / sample / block
// draws from its own substream so results never depend on scheduling order.
inline Rng make_stream(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                      0x9E3779B9u};
    return Rng(seq);
}

// Stream ids for distinct purposes under one root seed.
enum class StreamTag : std::uint64_t {
    chain = 0,
    forward = 1ull << 40,
    perturbation = 2ull << 40,
    generator = 3ull << 40,
    permutation = 4ull << 40,
};

inline Rng make_stream(std::uint64_t seed, StreamTag tag, std::uint64_t index) {
    return make_stream(seed, static_cast<std::uint64_t>(tag) + index);
}

// Child seed j of a root seed (splitmix64), used where whole experiments or grid
// points need their own independent root.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t j) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (j + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

}  // namespace ddpmlab
