#pragma once

#include <cstdint>
#include <string_view>

namespace card {

// 64-bit FNV-1a over raw bytes; the optional seed is folded in as eight
// little-endian bytes before the payload so distinct seeds give independent
// hash families.
inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    constexpr std::uint64_t prime = 0x100000001b3ULL;
    for (int i = 0; i < 8; ++i) {
        h ^= (seed >> (8 * i)) & 0xffULL;
        h *= prime;
    }
    for (unsigned char c : bytes) {
        h ^= c;
        h *= prime;
    }
    return h;
}

// splitmix64: standard finalizer-quality mixer, used to derive independent
// RNG streams from composite keys.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Uniform double in [0,1) from the top 53 bits. Used instead of
// std::uniform_real_distribution, whose output sequence is
// implementation-defined and would break cross-platform determinism.
inline double unit_double(std::uint64_t bits) {
    return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

// Tiny counter-based RNG: the stream is a pure function of the key, so any
// (seed, task, agent, round) tuple can be replayed independently of global
// state.
class CounterRng {
public:
    explicit CounterRng(std::uint64_t key) : state_(splitmix64(key)) {}

    std::uint64_t next_bits() {
        state_ += 0x9e3779b97f4a7c15ULL;
        std::uint64_t x = state_;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

    double next_unit() { return unit_double(next_bits()); }

private:
    std::uint64_t state_;
};

// Combine multiple 64-bit key parts into one stream key.
inline std::uint64_t combine_keys(std::uint64_t a, std::uint64_t b) {
    return splitmix64(a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2)));
}

}  // namespace card
