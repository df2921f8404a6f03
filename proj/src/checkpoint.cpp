#include "sklaw/nn/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "sklaw/core/error.hpp"

namespace sklaw {

namespace {

constexpr char kMagic[8] = {'S', 'K', 'L', 'W', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& out, std::uint32_t v) {
    char buf[4];
    for (int i = 0; i < 4; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(buf, 4);
}

void write_u64(std::ostream& out, std::uint64_t v) {
    char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(buf, 8);
}

std::uint32_t read_u32(std::istream& in) {
    char buf[4];
    in.read(buf, 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[i])) << (8 * i);
    return v;
}

std::uint64_t read_u64(std::istream& in) {
    char buf[8];
    in.read(buf, 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[i])) << (8 * i);
    return v;
}

}  // namespace

void Checkpoint::add(const std::string& name, const Eigen::MatrixXd& mat) {
    for (const auto& [existing, unused] : arrays)
        if (existing == name) throw Error("duplicate checkpoint array: " + name);
    arrays.emplace_back(name, mat);
}

bool Checkpoint::has(const std::string& name) const {
    for (const auto& [n, unused] : arrays)
        if (n == name) return true;
    return false;
}

const Eigen::MatrixXd& Checkpoint::get(const std::string& name) const {
    for (const auto& [n, mat] : arrays)
        if (n == name) return mat;
    throw ValidationError("checkpoint array not found: " + name);
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot open file for writing: " + path);
    out.write(kMagic, sizeof(kMagic));
    write_u32(out, kVersion);
    const std::string meta = ckpt.meta.dump();
    write_u64(out, meta.size());
    out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    write_u32(out, static_cast<std::uint32_t>(ckpt.arrays.size()));
    for (const auto& [name, mat] : ckpt.arrays) {
        write_u32(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u64(out, static_cast<std::uint64_t>(mat.rows()));
        write_u64(out, static_cast<std::uint64_t>(mat.cols()));
        static_assert(sizeof(double) == 8);
        out.write(reinterpret_cast<const char*>(mat.data()),
                  static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(mat.size())));
    }
    if (!out) throw Error("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open file: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw ValidationError("not a checkpoint file: " + path);
    const std::uint32_t version = read_u32(in);
    if (version != kVersion)
        throw ValidationError("unsupported checkpoint version " + std::to_string(version));
    Checkpoint ckpt;
    const std::uint64_t meta_len = read_u64(in);
    std::string meta(meta_len, '\0');
    in.read(meta.data(), static_cast<std::streamsize>(meta_len));
    if (!in) throw ValidationError("truncated checkpoint: " + path);
    try {
        ckpt.meta = nlohmann::json::parse(meta);
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(std::string("corrupt checkpoint metadata: ") + e.what());
    }
    const std::uint32_t count = read_u32(in);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = read_u32(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const std::uint64_t rows = read_u64(in);
        const std::uint64_t cols = read_u64(in);
        Eigen::MatrixXd mat(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
        in.read(reinterpret_cast<char*>(mat.data()),
                static_cast<std::streamsize>(sizeof(double) * rows * cols));
        if (!in) throw ValidationError("truncated checkpoint: " + path);
        ckpt.arrays.emplace_back(std::move(name), std::move(mat));
    }
    return ckpt;
}

}  // namespace sklaw
