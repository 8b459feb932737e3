#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "sat/common.hpp"
#include "sat/tensor.hpp"

namespace sat {

// Parameter container file, little-endian throughout:
//   magic "SATCKPT1"
//   u32 parameter count
//   per parameter: u32 name length, name bytes, u32 rank, u64 extents[rank],
//                  f32 values in row-major order
struct CheckpointEntry {
    std::string name;
    std::vector<int64_t> shape;
    std::vector<float> values;
};

namespace detail {

inline void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& os, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline void put_f32(std::ostream& os, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(os, bits);
}

inline uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw ParseError("checkpoint: truncated file");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

inline uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw ParseError("checkpoint: truncated file");
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

inline float get_f32(std::istream& is) {
    const uint32_t bits = get_u32(is);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

}  // namespace detail

constexpr char kCheckpointMagic[] = "SATCKPT1";

template <typename T>
void save_checkpoint(const std::string& path, const std::vector<std::pair<std::string, Tensor<T>>>& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open checkpoint for writing: " + path);
    os.write(kCheckpointMagic, 8);
    detail::put_u32(os, static_cast<uint32_t>(params.size()));
    for (const auto& [name, tensor] : params) {
        detail::put_u32(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::put_u32(os, static_cast<uint32_t>(tensor.shape().size()));
        for (const int64_t e : tensor.shape()) detail::put_u64(os, static_cast<uint64_t>(e));
        for (const T v : tensor.values()) detail::put_f32(os, static_cast<float>(v));
    }
    if (!os) throw IoError("checkpoint write failed: " + path);
}

inline std::vector<CheckpointEntry> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw ParseError("checkpoint: bad magic in " + path);
    const uint32_t count = detail::get_u32(is);
    std::vector<CheckpointEntry> entries(count);
    for (auto& e : entries) {
        const uint32_t name_len = detail::get_u32(is);
        e.name.resize(name_len);
        is.read(e.name.data(), name_len);
        if (!is) throw ParseError("checkpoint: truncated name");
        const uint32_t rank = detail::get_u32(is);
        int64_t n = 1;
        e.shape.resize(rank);
        for (uint32_t i = 0; i < rank; ++i) {
            e.shape[i] = static_cast<int64_t>(detail::get_u64(is));
            n *= e.shape[i];
        }
        e.values.resize(static_cast<size_t>(n));
        for (auto& v : e.values) v = detail::get_f32(is);
    }
    return entries;
}

// Copy checkpoint values into named parameters; names and shapes must match
// one-to-one.
template <typename T>
void apply_checkpoint(const std::vector<CheckpointEntry>& entries,
                      std::vector<std::pair<std::string, Tensor<T>>> params) {
    if (entries.size() != params.size())
        throw ConfigError("checkpoint holds " + std::to_string(entries.size()) + " parameters, model has " +
                          std::to_string(params.size()));
    for (size_t i = 0; i < entries.size(); ++i) {
        const auto& e = entries[i];
        auto& [name, tensor] = params[i];
        if (e.name != name) throw ConfigError("checkpoint parameter '" + e.name + "' does not match model '" + name + "'");
        if (e.shape != tensor.shape()) throw ConfigError("checkpoint shape mismatch for '" + name + "'");
        auto dst = tensor.values();
        for (size_t j = 0; j < e.values.size(); ++j) dst[j] = static_cast<T>(e.values[j]);
    }
}

}  // namespace sat
