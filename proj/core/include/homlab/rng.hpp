#pragma once

#include <cstdint>

namespace homlab {

// Counter-based randomness: every random quantity is a pure function of a
// 64-bit key assembled from (seed, salts, lattice indices). No generator
// state exists anywhere, so evaluation order and worker count cannot change
// results.

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t hash_mix(std::uint64_t h, std::uint64_t v) {
    return splitmix64(h ^ (v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2)));
}

inline std::uint64_t hash_key(std::uint64_t seed, std::uint64_t salt,
                              std::int64_t i0, std::int64_t i1 = 0) {
    std::uint64_t h = splitmix64(seed);
    h = hash_mix(h, salt);
    h = hash_mix(h, static_cast<std::uint64_t>(i0));
    h = hash_mix(h, static_cast<std::uint64_t>(i1));
    return h;
}

// Uniform double in [0, 1) from the top 53 bits.
inline double u01(std::uint64_t h) {
    return static_cast<double>(h >> 11) * (1.0 / 9007199254740992.0);
}

// Salts for the independent per-purpose streams.
namespace salt {
constexpr std::uint64_t checker_amplitude = 0x6368656b72626f61ULL;
constexpr std::uint64_t shot_presence = 0x73686f7470726573ULL;
constexpr std::uint64_t shot_jitter0 = 0x73686f746a697430ULL;
constexpr std::uint64_t shot_jitter1 = 0x73686f746a697431ULL;
constexpr std::uint64_t shot_amplitude = 0x73686f74616d70ULL;
constexpr std::uint64_t spatial_mean = 0x6d65616e73747264ULL;
constexpr std::uint64_t sample_plan = 0x73616d706c706c6eULL;
}  // namespace salt

// FNV-1a over bytes; used for content hashes in manifests and metadata.
inline std::uint64_t fnv1a64(const void* data, std::size_t len,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace homlab
