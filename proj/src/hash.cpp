#include "sklaw/core/hash.hpp"

#include <fstream>
#include <sstream>

#include "sklaw/core/error.hpp"

namespace sklaw {

std::string hash_hex(std::uint64_t h) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[i] = digits[h & 0xf];
        h >>= 4;
    }
    return out;
}

std::string string_hash_hex(std::string_view bytes) { return hash_hex(fnv1a64(bytes)); }

std::string file_hash_hex(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open file for hashing: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return string_hash_hex(buf.str());
}

}  // namespace sklaw
