#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace idc {

// FNV-1a 64-bit. Used for config digests, stage-record input hashes and
// output manifests; stable across platforms, not cryptographic.
inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ull) {
    std::uint64_t h = seed;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string hex_digest(std::uint64_t h) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[h & 0xf];
        h >>= 4;
    }
    return out;
}

inline std::string digest_string(std::string_view bytes) {
    return hex_digest(fnv1a64(bytes));
}

}  // namespace idc
