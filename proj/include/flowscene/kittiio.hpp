#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "flowscene/grids.hpp"
#include "flowscene/lift.hpp"

namespace flowscene {

constexpr std::array<int, 3> kKittiVolumeDims{256, 256, 32};

/// Raw u16 labels in (x, y, z) order, z fastest, little-endian on disk.
struct RawLabelVolume {
    std::array<int, 3> dims{0, 0, 0};
    std::vector<uint16_t> values;

    size_t index(int x, int y, int z) const {
        return (static_cast<size_t>(x) * dims[1] + y) * dims[2] + z;
    }
    size_t voxel_count() const {
        return static_cast<size_t>(dims[0]) * dims[1] * dims[2];
    }
};

namespace detail {

inline void check_volume_dims(std::array<int, 3> dims, const char* what) {
    check_positive_dim(dims[0], what);
    check_positive_dim(dims[1], what);
    check_positive_dim(dims[2], what);
}

}  // namespace detail

inline RawLabelVolume read_labels(const std::string& path,
                                  std::array<int, 3> dims = kKittiVolumeDims) {
    detail::check_volume_dims(dims, "read_labels dims");
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw std::runtime_error("labels: cannot open: " + path);
    size_t n = static_cast<size_t>(dims[0]) * dims[1] * dims[2];
    size_t size = static_cast<size_t>(in.tellg());
    if (size != n * 2)
        throw std::runtime_error("labels: " + path + " holds " + std::to_string(size) +
                                 " bytes, expected " + std::to_string(n * 2));
    in.seekg(0);
    RawLabelVolume vol;
    vol.dims = dims;
    vol.values.resize(n);
    std::vector<unsigned char> raw(n * 2);
    if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
        throw std::runtime_error("labels: read failed: " + path);
    for (size_t i = 0; i < n; ++i)
        vol.values[i] = static_cast<uint16_t>(raw[2 * i] | (raw[2 * i + 1] << 8));
    return vol;
}

inline void write_labels(const RawLabelVolume& vol, const std::string& path) {
    detail::check_volume_dims(vol.dims, "write_labels dims");
    if (vol.values.size() != vol.voxel_count())
        throw std::invalid_argument("write_labels: value count does not match dims");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("labels: cannot open for write: " + path);
    std::vector<unsigned char> raw(vol.values.size() * 2);
    for (size_t i = 0; i < vol.values.size(); ++i) {
        raw[2 * i] = static_cast<unsigned char>(vol.values[i] & 0xff);
        raw[2 * i + 1] = static_cast<unsigned char>(vol.values[i] >> 8);
    }
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!out) throw std::runtime_error("labels: write failed: " + path);
}

/// Packed binary volume, 8 voxels per byte, MSB first, same (x, y, z) order.
inline std::vector<uint8_t> read_bitmask(const std::string& path,
                                         std::array<int, 3> dims = kKittiVolumeDims) {
    detail::check_volume_dims(dims, "read_bitmask dims");
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw std::runtime_error("bitmask: cannot open: " + path);
    size_t n = static_cast<size_t>(dims[0]) * dims[1] * dims[2];
    size_t bytes = (n + 7) / 8;
    size_t size = static_cast<size_t>(in.tellg());
    if (size != bytes)
        throw std::runtime_error("bitmask: " + path + " holds " + std::to_string(size) +
                                 " bytes, expected " + std::to_string(bytes));
    in.seekg(0);
    std::vector<unsigned char> raw(bytes);
    if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(bytes)))
        throw std::runtime_error("bitmask: read failed: " + path);
    std::vector<uint8_t> bits(n);
    for (size_t i = 0; i < n; ++i)
        bits[i] = (raw[i / 8] >> (7 - i % 8)) & 1;
    return bits;
}

inline void write_bitmask(const std::vector<uint8_t>& bits, std::array<int, 3> dims,
                          const std::string& path) {
    detail::check_volume_dims(dims, "write_bitmask dims");
    size_t n = static_cast<size_t>(dims[0]) * dims[1] * dims[2];
    if (bits.size() != n)
        throw std::invalid_argument("write_bitmask: bit count does not match dims");
    std::vector<unsigned char> raw((n + 7) / 8, 0);
    for (size_t i = 0; i < n; ++i) {
        if (bits[i] == 0) continue;
        if (bits[i] != 1) throw std::invalid_argument("write_bitmask: bits must be 0 or 1");
        raw[i / 8] |= static_cast<unsigned char>(1 << (7 - i % 8));
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("bitmask: cannot open for write: " + path);
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!out) throw std::runtime_error("bitmask: write failed: " + path);
}

/// Raw label id -> contiguous class id. Total on the ids it is asked to remap.
struct LearningMap {
    std::map<uint16_t, uint16_t> mapping;
    int num_classes = 0;  // 1 + max mapped id

    void finalize() {
        num_classes = 1;
        for (const auto& [raw, mapped] : mapping)
            num_classes = std::max(num_classes, static_cast<int>(mapped) + 1);
    }
};

/// Parses the YAML-ish "raw: mapped" listing. An optional "learning_map:"
/// section header and '#' comments are tolerated; other top-level keys from a
/// full dataset config are skipped.
inline LearningMap load_learning_map(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("learning map: cannot open: " + path);
    LearningMap lm;
    std::string line;
    bool in_section = false;
    bool saw_section_header = false;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        size_t start = line.find_first_not_of(" \t");
        if (start == std::string::npos) continue;
        bool indented = start > 0;
        size_t end = line.find_last_not_of(" \t\r");
        std::string body = line.substr(start, end - start + 1);

        size_t colon = body.find(':');
        if (colon == std::string::npos)
            throw std::runtime_error("learning map: malformed line " + std::to_string(lineno) +
                                     " in " + path);
        std::string key = body.substr(0, colon);
        std::string value = body.substr(colon + 1);
        auto trim = [](std::string& s) {
            size_t a = s.find_first_not_of(" \t");
            size_t b = s.find_last_not_of(" \t");
            s = a == std::string::npos ? "" : s.substr(a, b - a + 1);
        };
        trim(key);
        trim(value);

        bool key_numeric = !key.empty() &&
                           std::all_of(key.begin(), key.end(), [](unsigned char c) { return std::isdigit(c); });
        if (!key_numeric) {
            // Section header or unrelated top-level key. Any top-level header
            // (labels:, content:, ...) switches us into sectioned mode, where
            // numeric entries only count inside learning_map itself.
            if (!indented) {
                in_section = key == "learning_map";
                saw_section_header = true;
            }
            continue;
        }
        if (saw_section_header && !in_section) continue;  // numeric entry of some other section
        if (value.empty())
            throw std::runtime_error("learning map: missing value at line " + std::to_string(lineno) +
                                     " in " + path);
        unsigned long raw = std::stoul(key);
        unsigned long mapped = std::stoul(value);
        if (raw > 0xffff || mapped > 0xffff)
            throw std::runtime_error("learning map: id out of range at line " + std::to_string(lineno) +
                                     " in " + path);
        lm.mapping[static_cast<uint16_t>(raw)] = static_cast<uint16_t>(mapped);
    }
    if (lm.mapping.empty()) throw std::runtime_error("learning map: no entries in " + path);
    lm.finalize();
    return lm;
}

/// Remap raw ids to contiguous classes. Every id present must be mapped.
inline SemanticVoxelGrid remap(const RawLabelVolume& vol, const LearningMap& map) {
    detail::check_volume_dims(vol.dims, "remap dims");
    if (vol.values.size() != vol.voxel_count())
        throw std::invalid_argument("remap: value count does not match dims");
    std::vector<uint16_t> labels(vol.values.size());
    for (size_t i = 0; i < vol.values.size(); ++i) {
        auto it = map.mapping.find(vol.values[i]);
        if (it == map.mapping.end())
            throw std::runtime_error("remap: unmapped raw label id " + std::to_string(vol.values[i]));
        labels[i] = it->second;
    }
    std::vector<uint8_t> valid(vol.values.size(), 1);
    return SemanticVoxelGrid(vol.dims, map.num_classes, std::move(labels), std::move(valid));
}

/// As above, with validity taken from an unpacked invalid mask (1 = invalid).
inline SemanticVoxelGrid remap(const RawLabelVolume& vol, const LearningMap& map,
                               const std::vector<uint8_t>& invalid) {
    if (invalid.size() != vol.voxel_count())
        throw std::invalid_argument("remap: invalid mask size does not match dims");
    SemanticVoxelGrid grid = remap(vol, map);
    for (size_t i = 0; i < invalid.size(); ++i)
        grid.valid[i] = invalid[i] ? 0 : 1;
    return grid;
}

// ---------------------------------------------------------------------------
// KITTI-style calib files: "P2: <12 floats>" (3x4 projection) and
// "Tr: <12 floats>" (3x4 ego-to-camera rigid transform).

inline CameraModel read_calib(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("calib: cannot open: " + path);
    std::map<std::string, std::vector<double>> rows;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        size_t colon = line.find(':');
        if (colon == std::string::npos)
            throw std::runtime_error("calib: malformed line " + std::to_string(lineno) + " in " + path);
        std::string key = line.substr(0, colon);
        std::istringstream values(line.substr(colon + 1));
        std::vector<double>& row = rows[key];
        double v;
        while (values >> v) row.push_back(v);
        if (!values.eof())
            throw std::runtime_error("calib: malformed line " + std::to_string(lineno) + " in " + path);
    }
    auto get = [&](const std::string& key) -> const std::vector<double>& {
        auto it = rows.find(key);
        if (it == rows.end()) throw std::runtime_error("calib: missing key " + key + " in " + path);
        if (it->second.size() != 12)
            throw std::runtime_error("calib: key " + key + " needs 12 values in " + path);
        return it->second;
    };
    const std::vector<double>& p2 = get("P2");
    const std::vector<double>& tr = get("Tr");

    CameraModel cam;
    cam.fx = static_cast<float>(p2[0]);
    cam.fy = static_cast<float>(p2[5]);
    cam.cx = static_cast<float>(p2[2]);
    cam.cy = static_cast<float>(p2[6]);
    // Tr maps ego to camera; invert the rigid transform for cam_to_ego.
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            cam.cam_to_ego.rotation[i * 3 + j] = static_cast<float>(tr[j * 4 + i]);
    for (int i = 0; i < 3; ++i) {
        double t = 0.0;
        for (int j = 0; j < 3; ++j) t += tr[j * 4 + i] * tr[j * 4 + 3];
        cam.cam_to_ego.translation[i] = static_cast<float>(-t);
    }
    cam.validate();
    return cam;
}

inline void write_calib(const CameraModel& cam, const std::string& path) {
    cam.validate();
    std::ofstream out(path);
    if (!out) throw std::runtime_error("calib: cannot open for write: " + path);
    char buf[64];
    out << "P2:";
    const double p2[12] = {cam.fx, 0.0, cam.cx, 0.0, 0.0, cam.fy, cam.cy, 0.0, 0.0, 0.0, 1.0, 0.0};
    for (double v : p2) {
        std::snprintf(buf, sizeof buf, " %.9g", v);
        out << buf;
    }
    out << "\nTr:";
    // Invert cam_to_ego back to the ego-to-camera form the format stores.
    const auto& r = cam.cam_to_ego.rotation;
    const auto& t = cam.cam_to_ego.translation;
    double tr[12];
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) tr[i * 4 + j] = r[j * 3 + i];
        double ti = 0.0;
        for (int j = 0; j < 3; ++j) ti += r[j * 3 + i] * t[j];
        tr[i * 4 + 3] = -ti;
    }
    for (double v : tr) {
        std::snprintf(buf, sizeof buf, " %.9g", v);
        out << buf;
    }
    out << "\n";
    if (!out) throw std::runtime_error("calib: write failed: " + path);
}

}  // namespace flowscene
