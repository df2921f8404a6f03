#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace sklaw {

inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 1469598103934665603ull) {
    for (const char c : bytes) {
        h ^= static_cast<std::uint8_t>(c);
        h *= 1099511628211ull;
    }
    return h;
}

std::string hash_hex(std::uint64_t h);

// FNV-1a over a file's raw bytes, rendered as 16 hex digits. Used to stamp
// artifacts with the identity of the dataset that produced them.
std::string file_hash_hex(const std::string& path);

std::string string_hash_hex(std::string_view bytes);

}  // namespace sklaw
