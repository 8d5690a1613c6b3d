#pragma once

#include <cstdint>
#include <string_view>

namespace mpu {

// FNV-1a, the hash behind TRACEHASH / NETHASH / REPORTHASH lines.
// Incremental form so whole documents can be hashed as they stream out.

inline constexpr std::uint64_t kFnv64Offset = 0xcbf29ce484222325ull;
inline constexpr std::uint64_t kFnv64Prime = 0x100000001b3ull;

constexpr std::uint64_t fnv1a64(std::string_view bytes,
                                std::uint64_t seed = kFnv64Offset) {
    std::uint64_t h = seed;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= kFnv64Prime;
    }
    return h;
}

constexpr std::uint32_t fnv1a32(std::string_view bytes) {
    std::uint32_t h = 0x811c9dc5u;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x01000193u;
    }
    return h;
}

// Mixes one 32-bit value into a running 64-bit FNV state, big-endian byte
// order so the result is platform independent.
constexpr std::uint64_t fnv1a64_u32(std::uint32_t v, std::uint64_t seed) {
    char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                 static_cast<char>(v >> 8), static_cast<char>(v)};
    return fnv1a64(std::string_view(b, 4), seed);
}

}  // namespace mpu
