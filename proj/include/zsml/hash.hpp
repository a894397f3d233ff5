#pragma once

#include "json.hpp"

#include <cstdint>
#include <string>
#include <string_view>

namespace zsml {

constexpr std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// 16-hex-digit FNV-1a hash of the compact JSON dump (object keys are sorted).
inline std::string config_hash(const nlohmann::json& j) {
    const std::uint64_t h = fnv1a64(j.dump());
    static constexpr char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 0; i < 16; ++i) out[static_cast<std::size_t>(15 - i)] = digits[(h >> (4 * i)) & 0xF];
    return out;
}

} // namespace zsml
