#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace flowscene {

using Vec3 = std::array<float, 3>;

namespace detail {

inline void check_finite(const std::vector<float>& values, const char* what) {
    for (float v : values) {
        if (!std::isfinite(v))
            throw std::invalid_argument(std::string(what) + ": non-finite value in data");
    }
}

inline void check_positive_dim(long long d, const char* what) {
    if (d <= 0)
        throw std::invalid_argument(std::string(what) + ": dimension must be positive, got " +
                                    std::to_string(d));
}

}  // namespace detail

/// Dense C x H x W feature grid, channel-major then row-major: index (c, y, x).
struct FeatureMap {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<float> data;

    FeatureMap() = default;

    FeatureMap(int c, int h, int w, float fill = 0.0f)
        : channels(c), height(h), width(w) {
        detail::check_positive_dim(c, "FeatureMap channels");
        detail::check_positive_dim(h, "FeatureMap height");
        detail::check_positive_dim(w, "FeatureMap width");
        if (!std::isfinite(fill)) throw std::invalid_argument("FeatureMap: non-finite fill");
        data.assign(static_cast<size_t>(c) * h * w, fill);
    }

    FeatureMap(int c, int h, int w, std::vector<float> values)
        : channels(c), height(h), width(w), data(std::move(values)) {
        detail::check_positive_dim(c, "FeatureMap channels");
        detail::check_positive_dim(h, "FeatureMap height");
        detail::check_positive_dim(w, "FeatureMap width");
        if (data.size() != static_cast<size_t>(c) * h * w)
            throw std::invalid_argument("FeatureMap: data length does not match C*H*W");
        detail::check_finite(data, "FeatureMap");
    }

    size_t index(int c, int y, int x) const {
        return (static_cast<size_t>(c) * height + y) * width + x;
    }
    float& at(int c, int y, int x) { return data[index(c, y, x)]; }
    float at(int c, int y, int x) const { return data[index(c, y, x)]; }

    bool same_shape(const FeatureMap& o) const {
        return channels == o.channels && height == o.height && width == o.width;
    }
};

/// Per-pixel displacement field in pixels; maps source-frame pixels to target-frame locations.
struct FlowField {
    int height = 0;
    int width = 0;
    std::vector<float> dx;
    std::vector<float> dy;

    FlowField() = default;

    FlowField(int h, int w, float fill_dx = 0.0f, float fill_dy = 0.0f)
        : height(h), width(w) {
        detail::check_positive_dim(h, "FlowField height");
        detail::check_positive_dim(w, "FlowField width");
        if (!std::isfinite(fill_dx) || !std::isfinite(fill_dy))
            throw std::invalid_argument("FlowField: non-finite fill");
        dx.assign(static_cast<size_t>(h) * w, fill_dx);
        dy.assign(static_cast<size_t>(h) * w, fill_dy);
    }

    FlowField(int h, int w, std::vector<float> dx_values, std::vector<float> dy_values)
        : height(h), width(w), dx(std::move(dx_values)), dy(std::move(dy_values)) {
        detail::check_positive_dim(h, "FlowField height");
        detail::check_positive_dim(w, "FlowField width");
        if (dx.size() != static_cast<size_t>(h) * w || dy.size() != static_cast<size_t>(h) * w)
            throw std::invalid_argument("FlowField: component length does not match H*W");
        detail::check_finite(dx, "FlowField dx");
        detail::check_finite(dy, "FlowField dy");
    }

    size_t index(int y, int x) const { return static_cast<size_t>(y) * width + x; }

    bool same_shape(const FlowField& o) const { return height == o.height && width == o.width; }
};

/// Binary H x W grid stored as one real channel; 1 = occluded/unreliable, 0 = valid.
struct OcclusionMask {
    int height = 0;
    int width = 0;
    std::vector<float> values;

    OcclusionMask() = default;

    OcclusionMask(int h, int w, float fill = 0.0f) : height(h), width(w) {
        detail::check_positive_dim(h, "OcclusionMask height");
        detail::check_positive_dim(w, "OcclusionMask width");
        if (fill != 0.0f && fill != 1.0f)
            throw std::invalid_argument("OcclusionMask: values must be 0 or 1");
        values.assign(static_cast<size_t>(h) * w, fill);
    }

    OcclusionMask(int h, int w, std::vector<float> v)
        : height(h), width(w), values(std::move(v)) {
        detail::check_positive_dim(h, "OcclusionMask height");
        detail::check_positive_dim(w, "OcclusionMask width");
        if (values.size() != static_cast<size_t>(h) * w)
            throw std::invalid_argument("OcclusionMask: data length does not match H*W");
        for (float x : values) {
            if (x != 0.0f && x != 1.0f)
                throw std::invalid_argument("OcclusionMask: values must be 0 or 1");
        }
    }

    size_t index(int y, int x) const { return static_cast<size_t>(y) * width + x; }
    float at(int y, int x) const { return values[index(y, x)]; }
    void set(int y, int x, bool occluded) { values[index(y, x)] = occluded ? 1.0f : 0.0f; }

    bool same_shape(const OcclusionMask& o) const {
        return height == o.height && width == o.width;
    }
};

/// Geometry of a voxel volume: dims in voxels, edge length in meters, origin corner in meters.
struct GridSpec {
    std::array<int, 3> dims{0, 0, 0};  // X forward, Y left, Z up
    float voxel_size = 0.0f;
    Vec3 origin{0.0f, 0.0f, 0.0f};

    void validate() const {
        detail::check_positive_dim(dims[0], "GridSpec X");
        detail::check_positive_dim(dims[1], "GridSpec Y");
        detail::check_positive_dim(dims[2], "GridSpec Z");
        if (!(voxel_size > 0.0f) || !std::isfinite(voxel_size))
            throw std::invalid_argument("GridSpec: voxel_size must be > 0");
        for (float o : origin)
            if (!std::isfinite(o)) throw std::invalid_argument("GridSpec: non-finite origin");
    }

    size_t voxel_count() const {
        return static_cast<size_t>(dims[0]) * dims[1] * dims[2];
    }
};

/// Dense C x X x Y x Z feature volume, channel-major: index (c, x, y, z).
struct VoxelGrid {
    int channels = 0;
    std::array<int, 3> dims{0, 0, 0};
    float voxel_size = 0.0f;
    Vec3 origin{0.0f, 0.0f, 0.0f};
    std::vector<float> data;

    VoxelGrid() = default;

    VoxelGrid(int c, const GridSpec& spec, float fill = 0.0f)
        : channels(c), dims(spec.dims), voxel_size(spec.voxel_size), origin(spec.origin) {
        detail::check_positive_dim(c, "VoxelGrid channels");
        spec.validate();
        if (!std::isfinite(fill)) throw std::invalid_argument("VoxelGrid: non-finite fill");
        data.assign(static_cast<size_t>(c) * spec.voxel_count(), fill);
    }

    VoxelGrid(int c, const GridSpec& spec, std::vector<float> values)
        : channels(c), dims(spec.dims), voxel_size(spec.voxel_size), origin(spec.origin),
          data(std::move(values)) {
        detail::check_positive_dim(c, "VoxelGrid channels");
        spec.validate();
        if (data.size() != static_cast<size_t>(c) * spec.voxel_count())
            throw std::invalid_argument("VoxelGrid: data length does not match C*X*Y*Z");
        detail::check_finite(data, "VoxelGrid");
    }

    GridSpec spec() const { return GridSpec{dims, voxel_size, origin}; }

    size_t index(int c, int x, int y, int z) const {
        return ((static_cast<size_t>(c) * dims[0] + x) * dims[1] + y) * dims[2] + z;
    }
    float& at(int c, int x, int y, int z) { return data[index(c, x, y, z)]; }
    float at(int c, int x, int y, int z) const { return data[index(c, x, y, z)]; }

    bool same_shape(const VoxelGrid& o) const {
        return channels == o.channels && dims == o.dims;
    }
};

/// Integer class labels over X x Y x Z with a paired validity volume. Class 0 is empty space.
struct SemanticVoxelGrid {
    std::array<int, 3> dims{0, 0, 0};
    int num_classes = 0;
    std::vector<uint16_t> labels;   // (x, y, z) order, z fastest
    std::vector<uint8_t> valid;     // same layout, 1 = evaluated

    SemanticVoxelGrid() = default;

    SemanticVoxelGrid(std::array<int, 3> d, int classes)
        : dims(d), num_classes(classes) {
        detail::check_positive_dim(d[0], "SemanticVoxelGrid X");
        detail::check_positive_dim(d[1], "SemanticVoxelGrid Y");
        detail::check_positive_dim(d[2], "SemanticVoxelGrid Z");
        detail::check_positive_dim(classes, "SemanticVoxelGrid classes");
        size_t n = static_cast<size_t>(d[0]) * d[1] * d[2];
        labels.assign(n, 0);
        valid.assign(n, 1);
    }

    SemanticVoxelGrid(std::array<int, 3> d, int classes, std::vector<uint16_t> lab,
                      std::vector<uint8_t> val)
        : dims(d), num_classes(classes), labels(std::move(lab)), valid(std::move(val)) {
        detail::check_positive_dim(d[0], "SemanticVoxelGrid X");
        detail::check_positive_dim(d[1], "SemanticVoxelGrid Y");
        detail::check_positive_dim(d[2], "SemanticVoxelGrid Z");
        detail::check_positive_dim(classes, "SemanticVoxelGrid classes");
        size_t n = static_cast<size_t>(d[0]) * d[1] * d[2];
        if (labels.size() != n)
            throw std::invalid_argument("SemanticVoxelGrid: label count does not match dims");
        if (valid.size() != n)
            throw std::invalid_argument("SemanticVoxelGrid: valid volume does not match dims");
        for (uint16_t l : labels) {
            if (l >= num_classes)
                throw std::invalid_argument("SemanticVoxelGrid: label " + std::to_string(l) +
                                            " >= class count " + std::to_string(num_classes));
        }
        for (uint8_t v : valid) {
            if (v != 0 && v != 1)
                throw std::invalid_argument("SemanticVoxelGrid: valid volume must be binary");
        }
    }

    size_t index(int x, int y, int z) const {
        return (static_cast<size_t>(x) * dims[1] + y) * dims[2] + z;
    }
    size_t voxel_count() const {
        return static_cast<size_t>(dims[0]) * dims[1] * dims[2];
    }
    uint16_t label_at(int x, int y, int z) const { return labels[index(x, y, z)]; }
    bool valid_at(int x, int y, int z) const { return valid[index(x, y, z)] != 0; }
};

/// Zero-filled voxel grid with the stated geometry.
inline VoxelGrid make_grid(std::array<int, 3> dims, float voxel_size, Vec3 origin,
                           int channels = 1) {
    return VoxelGrid(channels, GridSpec{dims, voxel_size, origin});
}

struct VoxelIndex {
    int x = 0, y = 0, z = 0;
    bool in_bounds = false;
};

/// Voxel containing a world-space point: i_k = floor((p_k - origin_k) / voxel_size).
/// Out-of-bounds points are flagged, never clamped.
inline VoxelIndex world_to_voxel(const GridSpec& spec, const Vec3& p) {
    VoxelIndex idx;
    int i[3];
    for (int k = 0; k < 3; ++k)
        i[k] = static_cast<int>(std::floor((p[k] - spec.origin[k]) / spec.voxel_size));
    idx.x = i[0];
    idx.y = i[1];
    idx.z = i[2];
    idx.in_bounds = i[0] >= 0 && i[0] < spec.dims[0] && i[1] >= 0 && i[1] < spec.dims[1] &&
                    i[2] >= 0 && i[2] < spec.dims[2];
    return idx;
}

inline VoxelIndex world_to_voxel(const VoxelGrid& grid, const Vec3& p) {
    return world_to_voxel(grid.spec(), p);
}

/// World-space center of a voxel.
inline Vec3 voxel_center(const GridSpec& spec, int x, int y, int z) {
    return Vec3{spec.origin[0] + (x + 0.5f) * spec.voxel_size,
                spec.origin[1] + (y + 0.5f) * spec.voxel_size,
                spec.origin[2] + (z + 0.5f) * spec.voxel_size};
}

}  // namespace flowscene
