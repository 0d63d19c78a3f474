#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "flowscene/grids.hpp"

namespace flowscene {

// Raw tensor container: magic "FSGR", u32 rank, u32 dims[rank], u8 dtype tag,
// then packed 32-bit floats. All fields little-endian. Tag 0 = float32.
namespace fsgr {

constexpr uint8_t kDtypeF32 = 0;

struct Tensor {
    std::vector<uint32_t> dims;
    std::vector<float> data;

    size_t element_count() const {
        size_t n = 1;
        for (uint32_t d : dims) n *= d;
        return n;
    }
};

namespace detail {

inline void write_u32le(std::ostream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t read_u32le(std::istream& in, const std::string& path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw std::runtime_error("fsgr: truncated file: " + path);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

inline void write_f32le(std::ostream& out, const float* values, size_t n) {
    static_assert(sizeof(float) == 4, "float must be 32-bit");
    // Host is little-endian on every supported target; floats go out verbatim.
    out.write(reinterpret_cast<const char*>(values), static_cast<std::streamsize>(n * 4));
}

inline void read_f32le(std::istream& in, float* values, size_t n, const std::string& path) {
    if (!in.read(reinterpret_cast<char*>(values), static_cast<std::streamsize>(n * 4)))
        throw std::runtime_error("fsgr: truncated payload: " + path);
}

}  // namespace detail

inline void write(const std::string& path, const Tensor& t) {
    if (t.data.size() != t.element_count())
        throw std::runtime_error("fsgr: data length does not match dims");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("fsgr: cannot open for write: " + path);
    out.write("FSGR", 4);
    detail::write_u32le(out, static_cast<uint32_t>(t.dims.size()));
    for (uint32_t d : t.dims) detail::write_u32le(out, d);
    char tag = static_cast<char>(kDtypeF32);
    out.write(&tag, 1);
    detail::write_f32le(out, t.data.data(), t.data.size());
    if (!out) throw std::runtime_error("fsgr: write failed: " + path);
}

inline Tensor read(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("fsgr: cannot open: " + path);
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, "FSGR", 4) != 0)
        throw std::runtime_error("fsgr: bad magic: " + path);
    uint32_t rank = detail::read_u32le(in, path);
    if (rank == 0 || rank > 8) throw std::runtime_error("fsgr: implausible rank: " + path);
    Tensor t;
    t.dims.resize(rank);
    size_t n = 1;
    for (uint32_t i = 0; i < rank; ++i) {
        t.dims[i] = detail::read_u32le(in, path);
        if (t.dims[i] == 0) throw std::runtime_error("fsgr: zero dimension: " + path);
        n *= t.dims[i];
    }
    char tag;
    if (!in.read(&tag, 1)) throw std::runtime_error("fsgr: truncated header: " + path);
    if (static_cast<uint8_t>(tag) != kDtypeF32)
        throw std::runtime_error("fsgr: unsupported dtype tag: " + path);
    t.data.resize(n);
    detail::read_f32le(in, t.data.data(), n, path);
    // Trailing bytes would mean a corrupt writer.
    char extra;
    if (in.read(&extra, 1)) throw std::runtime_error("fsgr: trailing bytes: " + path);
    return t;
}

}  // namespace fsgr

inline void write_feature_map(const std::string& path, const FeatureMap& f) {
    fsgr::Tensor t;
    t.dims = {static_cast<uint32_t>(f.channels), static_cast<uint32_t>(f.height),
              static_cast<uint32_t>(f.width)};
    t.data = f.data;
    fsgr::write(path, t);
}

inline FeatureMap read_feature_map(const std::string& path) {
    fsgr::Tensor t = fsgr::read(path);
    if (t.dims.size() != 3)
        throw std::runtime_error("fsgr: expected rank-3 feature map: " + path);
    return FeatureMap(static_cast<int>(t.dims[0]), static_cast<int>(t.dims[1]),
                      static_cast<int>(t.dims[2]), std::move(t.data));
}

inline void write_voxel_grid(const std::string& path, const VoxelGrid& g) {
    fsgr::Tensor t;
    t.dims = {static_cast<uint32_t>(g.channels), static_cast<uint32_t>(g.dims[0]),
              static_cast<uint32_t>(g.dims[1]), static_cast<uint32_t>(g.dims[2])};
    t.data = g.data;
    fsgr::write(path, t);
}

/// Geometry is not stored in the container; the caller supplies it.
inline VoxelGrid read_voxel_grid(const std::string& path, float voxel_size, Vec3 origin) {
    fsgr::Tensor t = fsgr::read(path);
    if (t.dims.size() != 4)
        throw std::runtime_error("fsgr: expected rank-4 voxel grid: " + path);
    GridSpec spec{{static_cast<int>(t.dims[1]), static_cast<int>(t.dims[2]),
                   static_cast<int>(t.dims[3])},
                  voxel_size,
                  origin};
    return VoxelGrid(static_cast<int>(t.dims[0]), spec, std::move(t.data));
}

}  // namespace flowscene
