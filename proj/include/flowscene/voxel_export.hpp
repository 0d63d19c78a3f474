#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "flowscene/grids.hpp"

namespace flowscene {

/// One occupied cell of an exported volume: integer voxel index plus display color.
struct PlyEntry {
    int x = 0, y = 0, z = 0;
    std::array<uint8_t, 3> color{0, 0, 0};
};

/// Cube-per-voxel mesh with enough geometry in the header comments to rebuild
/// the voxel indices exactly on read.
struct PlyVoxels {
    std::array<int, 3> dims{0, 0, 0};
    float voxel_size = 0.0f;
    Vec3 origin{0.0f, 0.0f, 0.0f};
    std::vector<PlyEntry> entries;
};

using Palette = std::vector<std::array<uint8_t, 3>>;

/// Fixed, well-separated colors; class 0 is black (empty space is never exported
/// but palettes are indexed by class id).
inline Palette default_palette(int classes) {
    if (classes <= 0) throw std::invalid_argument("palette: class count must be positive");
    static const std::array<uint8_t, 3> base[] = {
        {0, 0, 0},       {70, 130, 180}, {220, 20, 60},  {34, 139, 34},
        {255, 158, 0},   {153, 50, 204}, {0, 206, 209},  {255, 105, 180},
        {139, 69, 19},   {128, 128, 0},  {65, 105, 225}, {250, 128, 114},
        {0, 100, 0},     {255, 215, 0},  {75, 0, 130},   {46, 139, 87}};
    const int n = static_cast<int>(sizeof(base) / sizeof(base[0]));
    Palette p(classes);
    for (int i = 0; i < classes; ++i) {
        p[i] = base[i % n];
        // Repeat with a brightness shift past the base table.
        if (i >= n)
            for (uint8_t& c : p[i]) c = static_cast<uint8_t>(c / 2 + 96);
    }
    return p;
}

/// JSON palette: either an array of [r,g,b] rows (row i = class i) or an object
/// keyed by class id ({"1": [r,g,b], ...}); missing ids fall back to black.
inline Palette load_palette(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("palette: cannot open: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("palette: bad JSON in " + path + ": " + e.what());
    }
    auto parse_rgb = [&](const nlohmann::json& row) {
        if (!row.is_array() || row.size() != 3)
            throw std::runtime_error("palette: color must be [r,g,b] in " + path);
        std::array<uint8_t, 3> c{};
        for (int k = 0; k < 3; ++k) {
            int v = row[k].get<int>();
            if (v < 0 || v > 255)
                throw std::runtime_error("palette: channel out of [0,255] in " + path);
            c[k] = static_cast<uint8_t>(v);
        }
        return c;
    };
    Palette p;
    if (j.is_array()) {
        for (const auto& row : j) p.push_back(parse_rgb(row));
    } else if (j.is_object()) {
        size_t max_id = 0;
        for (auto it = j.begin(); it != j.end(); ++it) {
            size_t id = std::stoul(it.key());
            if (id > 4096) throw std::runtime_error("palette: class id too large in " + path);
            if (id > max_id) max_id = id;
        }
        p.assign(max_id + 1, {0, 0, 0});
        for (auto it = j.begin(); it != j.end(); ++it)
            p[std::stoul(it.key())] = parse_rgb(it.value());
    } else {
        throw std::runtime_error("palette: expected array or object in " + path);
    }
    if (p.empty()) throw std::runtime_error("palette: empty in " + path);
    return p;
}

/// Collects every occupied (nonzero-label) voxel in x-major, z-fastest order.
inline PlyVoxels ply_from_labels(const SemanticVoxelGrid& grid, float voxel_size, Vec3 origin,
                                 const Palette& palette) {
    if (!(voxel_size > 0.0f) || !std::isfinite(voxel_size))
        throw std::invalid_argument("ply_from_labels: voxel_size must be > 0");
    PlyVoxels pv;
    pv.dims = grid.dims;
    pv.voxel_size = voxel_size;
    pv.origin = origin;
    for (int x = 0; x < grid.dims[0]; ++x)
        for (int y = 0; y < grid.dims[1]; ++y)
            for (int z = 0; z < grid.dims[2]; ++z) {
                uint16_t l = grid.label_at(x, y, z);
                if (l == 0) continue;
                if (l >= palette.size())
                    throw std::invalid_argument("ply_from_labels: class " + std::to_string(l) +
                                                " has no palette entry");
                pv.entries.push_back(PlyEntry{x, y, z, palette[l]});
            }
    return pv;
}

namespace detail {

inline std::string format_g9(float v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
    return buf;
}

// Unit-cube corner offsets: bottom ring counter-clockwise, then top ring.
inline const int kCubeCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                                      {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
inline const int kCubeFace[6][4] = {{0, 3, 2, 1}, {4, 5, 6, 7}, {0, 1, 5, 4},
                                    {1, 2, 6, 5}, {2, 3, 7, 6}, {3, 0, 4, 7}};

}  // namespace detail

/// ASCII PLY, one 8-vertex/6-quad cube per voxel. Geometry comments make
/// write -> read -> write reproduce the file byte for byte.
inline void write_ply(const PlyVoxels& pv, const std::string& path) {
    if (!(pv.voxel_size > 0.0f) || !std::isfinite(pv.voxel_size))
        throw std::invalid_argument("write_ply: voxel_size must be > 0");
    for (int k = 0; k < 3; ++k)
        if (pv.dims[k] <= 0) throw std::invalid_argument("write_ply: dims must be positive");
    for (const PlyEntry& e : pv.entries) {
        if (e.x < 0 || e.x >= pv.dims[0] || e.y < 0 || e.y >= pv.dims[1] || e.z < 0 ||
            e.z >= pv.dims[2])
            throw std::invalid_argument("write_ply: entry outside grid dims");
    }

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_ply: cannot open for write: " + path);
    const size_t n = pv.entries.size();
    out << "ply\nformat ascii 1.0\n";
    out << "comment voxels " << n << "\n";
    out << "comment grid " << pv.dims[0] << " " << pv.dims[1] << " " << pv.dims[2] << " "
        << detail::format_g9(pv.voxel_size) << " " << detail::format_g9(pv.origin[0]) << " "
        << detail::format_g9(pv.origin[1]) << " " << detail::format_g9(pv.origin[2]) << "\n";
    out << "element vertex " << n * 8 << "\n";
    out << "property float x\nproperty float y\nproperty float z\n";
    out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    out << "element face " << n * 6 << "\n";
    out << "property list uchar int vertex_indices\n";
    out << "end_header\n";

    char line[160];
    for (const PlyEntry& e : pv.entries) {
        const int idx[3] = {e.x, e.y, e.z};
        for (int corner = 0; corner < 8; ++corner) {
            float c[3];
            for (int k = 0; k < 3; ++k)
                c[k] = pv.origin[k] +
                       static_cast<float>(idx[k] + detail::kCubeCorner[corner][k]) * pv.voxel_size;
            std::snprintf(line, sizeof(line), "%.6f %.6f %.6f %d %d %d\n", c[0], c[1], c[2],
                          e.color[0], e.color[1], e.color[2]);
            out << line;
        }
    }
    for (size_t i = 0; i < n; ++i) {
        const size_t base = i * 8;
        for (int f = 0; f < 6; ++f) {
            out << "4";
            for (int k = 0; k < 4; ++k) out << " " << base + detail::kCubeFace[f][k];
            out << "\n";
        }
    }
    if (!out) throw std::runtime_error("write_ply: write failed: " + path);
}

inline PlyVoxels read_ply(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_ply: cannot open: " + path);
    std::string line;
    if (!std::getline(in, line) || line != "ply")
        throw std::runtime_error("read_ply: not a PLY file: " + path);

    PlyVoxels pv;
    size_t voxels = 0, vertices = 0, faces = 0;
    bool have_grid = false, have_voxels = false, ascii = false;
    while (std::getline(in, line)) {
        if (line == "end_header") break;
        std::istringstream ls(line);
        std::string tok;
        ls >> tok;
        if (tok == "format") {
            std::string fmt;
            ls >> fmt;
            ascii = fmt == "ascii";
        } else if (tok == "comment") {
            std::string what;
            ls >> what;
            if (what == "voxels") {
                ls >> voxels;
                have_voxels = !ls.fail();
            } else if (what == "grid") {
                ls >> pv.dims[0] >> pv.dims[1] >> pv.dims[2] >> pv.voxel_size >> pv.origin[0] >>
                    pv.origin[1] >> pv.origin[2];
                have_grid = !ls.fail();
            }
        } else if (tok == "element") {
            std::string kind;
            size_t count = 0;
            ls >> kind >> count;
            if (kind == "vertex") vertices = count;
            if (kind == "face") faces = count;
        }
        if (!in) break;
    }
    if (!ascii) throw std::runtime_error("read_ply: only ascii PLY is supported: " + path);
    if (!have_voxels || !have_grid)
        throw std::runtime_error("read_ply: missing voxel-grid comments (not written by this tool): " +
                                 path);
    if (vertices != voxels * 8 || faces != voxels * 6)
        throw std::runtime_error("read_ply: element counts do not match voxel count: " + path);
    if (!(pv.voxel_size > 0.0f) || pv.dims[0] <= 0 || pv.dims[1] <= 0 || pv.dims[2] <= 0)
        throw std::runtime_error("read_ply: bad grid geometry in header: " + path);

    pv.entries.resize(voxels);
    for (size_t i = 0; i < voxels; ++i) {
        PlyEntry& e = pv.entries[i];
        for (int corner = 0; corner < 8; ++corner) {
            float c[3];
            int rgb[3];
            in >> c[0] >> c[1] >> c[2] >> rgb[0] >> rgb[1] >> rgb[2];
            if (!in) throw std::runtime_error("read_ply: truncated vertex data: " + path);
            if (corner == 0) {
                const float idx[3] = {std::round((c[0] - pv.origin[0]) / pv.voxel_size),
                                      std::round((c[1] - pv.origin[1]) / pv.voxel_size),
                                      std::round((c[2] - pv.origin[2]) / pv.voxel_size)};
                e.x = static_cast<int>(idx[0]);
                e.y = static_cast<int>(idx[1]);
                e.z = static_cast<int>(idx[2]);
                for (int k = 0; k < 3; ++k) {
                    if (rgb[k] < 0 || rgb[k] > 255)
                        throw std::runtime_error("read_ply: color out of range: " + path);
                    e.color[k] = static_cast<uint8_t>(rgb[k]);
                }
            }
        }
        if (e.x < 0 || e.x >= pv.dims[0] || e.y < 0 || e.y >= pv.dims[1] || e.z < 0 ||
            e.z >= pv.dims[2])
            throw std::runtime_error("read_ply: vertex outside stated grid: " + path);
    }
    // Consume and sanity-check the face list.
    for (size_t i = 0; i < faces; ++i) {
        int arity = 0;
        in >> arity;
        if (!in || arity != 4)
            throw std::runtime_error("read_ply: expected quad faces: " + path);
        for (int k = 0; k < 4; ++k) {
            size_t v = 0;
            in >> v;
            if (!in || v >= vertices)
                throw std::runtime_error("read_ply: face index out of range: " + path);
        }
    }
    return pv;
}

/// One 8-bit PGM per z level, pixel value = class id, rows = X (forward),
/// columns = Y (left). Fails when class ids cannot fit a byte.
inline void write_pgm_slices(const SemanticVoxelGrid& grid, const std::string& dir,
                             const std::string& prefix = "slice") {
    if (grid.num_classes > 256)
        throw std::invalid_argument("pgm slices: class ids exceed 8-bit range");
    std::filesystem::create_directories(dir);
    for (int z = 0; z < grid.dims[2]; ++z) {
        char name[64];
        std::snprintf(name, sizeof(name), "%s_z%02d.pgm", prefix.c_str(), z);
        std::string path = (std::filesystem::path(dir) / name).string();
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("pgm slices: cannot open for write: " + path);
        out << "P5\n" << grid.dims[1] << " " << grid.dims[0] << "\n255\n";
        std::vector<uint8_t> row(grid.dims[1]);
        for (int x = 0; x < grid.dims[0]; ++x) {
            for (int y = 0; y < grid.dims[1]; ++y)
                row[y] = static_cast<uint8_t>(grid.label_at(x, y, z));
            out.write(reinterpret_cast<const char*>(row.data()), row.size());
        }
        if (!out) throw std::runtime_error("pgm slices: write failed: " + path);
    }
}

}  // namespace flowscene
