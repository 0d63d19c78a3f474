#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "flowscene/grids.hpp"
#include "flowscene/parallel.hpp"

namespace flowscene {

struct RigidTransform {
    std::array<float, 9> rotation{1, 0, 0, 0, 1, 0, 0, 0, 1};  // row-major 3x3
    Vec3 translation{0.0f, 0.0f, 0.0f};

    Vec3 apply(const Vec3& p) const {
        return Vec3{rotation[0] * p[0] + rotation[1] * p[1] + rotation[2] * p[2] + translation[0],
                    rotation[3] * p[0] + rotation[4] * p[1] + rotation[5] * p[2] + translation[1],
                    rotation[6] * p[0] + rotation[7] * p[1] + rotation[8] * p[2] + translation[2]};
    }
};

/// Pinhole intrinsics plus the camera-to-ego rigid transform. Camera frame is
/// x right, y down, z forward; ego frame is X forward, Y left, Z up.
struct CameraModel {
    float fx = 0.0f, fy = 0.0f, cx = 0.0f, cy = 0.0f;  // pixels
    RigidTransform cam_to_ego;

    void validate() const {
        if (!(fx > 0.0f) || !(fy > 0.0f) || !std::isfinite(fx) || !std::isfinite(fy))
            throw std::invalid_argument("CameraModel: focal lengths must be > 0");
        if (!std::isfinite(cx) || !std::isfinite(cy))
            throw std::invalid_argument("CameraModel: non-finite principal point");
        const auto& r = cam_to_ego.rotation;
        for (float v : r)
            if (!std::isfinite(v)) throw std::invalid_argument("CameraModel: non-finite rotation");
        for (float v : cam_to_ego.translation)
            if (!std::isfinite(v)) throw std::invalid_argument("CameraModel: non-finite translation");
        // R * R^T must be identity within 1e-5.
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) {
                float dot = 0.0f;
                for (int k = 0; k < 3; ++k) dot += r[i * 3 + k] * r[j * 3 + k];
                float expect = i == j ? 1.0f : 0.0f;
                if (std::fabs(dot - expect) > 1e-5f)
                    throw std::invalid_argument("CameraModel: rotation is not orthonormal");
            }
        }
    }
};

/// The standard axis permutation from camera (x right, y down, z forward) to
/// ego (X forward, Y left, Z up), with an optional camera position in ego frame.
inline RigidTransform camera_axes_to_ego(Vec3 camera_position = {0.0f, 0.0f, 0.0f}) {
    RigidTransform t;
    t.rotation = {0, 0, 1, -1, 0, 0, 0, -1, 0};
    t.translation = camera_position;
    return t;
}

/// Per-pixel weights over D depth bins, layout (d, y, x). When flagged as a
/// distribution, each pixel's weights must sum to 1 within 1e-4.
struct DepthDistribution {
    int bins = 0;
    int height = 0;
    int width = 0;
    std::vector<float> values;     // (d*H + y)*W + x
    std::vector<float> bin_edges;  // D+1, strictly increasing, meters
    bool is_distribution = false;

    DepthDistribution() = default;

    DepthDistribution(int d, int h, int w, std::vector<float> edges, float fill = 0.0f)
        : bins(d), height(h), width(w), bin_edges(std::move(edges)) {
        values.assign(static_cast<size_t>(d) * h * w, fill);
        validate();
    }

    DepthDistribution(int d, int h, int w, std::vector<float> edges, std::vector<float> v,
                      bool distribution = false)
        : bins(d), height(h), width(w), values(std::move(v)), bin_edges(std::move(edges)),
          is_distribution(distribution) {
        validate();
    }

    size_t index(int d, int y, int x) const {
        return (static_cast<size_t>(d) * height + y) * width + x;
    }
    float& at(int d, int y, int x) { return values[index(d, y, x)]; }
    float at(int d, int y, int x) const { return values[index(d, y, x)]; }

    float bin_center(int d) const { return 0.5f * (bin_edges[d] + bin_edges[d + 1]); }

    void validate() const {
        detail::check_positive_dim(bins, "DepthDistribution bins");
        detail::check_positive_dim(height, "DepthDistribution height");
        detail::check_positive_dim(width, "DepthDistribution width");
        if (values.size() != static_cast<size_t>(bins) * height * width)
            throw std::invalid_argument("DepthDistribution: data length does not match D*H*W");
        detail::check_finite(values, "DepthDistribution");
        if (bin_edges.size() != static_cast<size_t>(bins) + 1)
            throw std::invalid_argument("DepthDistribution: need D+1 bin edges");
        for (size_t i = 0; i + 1 < bin_edges.size(); ++i) {
            if (!std::isfinite(bin_edges[i]) || !(bin_edges[i] < bin_edges[i + 1]))
                throw std::invalid_argument("DepthDistribution: bin edges must be strictly increasing");
        }
        if (!std::isfinite(bin_edges.back()))
            throw std::invalid_argument("DepthDistribution: non-finite bin edge");
        if (is_distribution) {
            size_t plane = static_cast<size_t>(height) * width;
            for (size_t p = 0; p < plane; ++p) {
                float s = 0.0f;
                for (int d = 0; d < bins; ++d) s += values[d * plane + p];
                if (std::fabs(s - 1.0f) > 1e-4f)
                    throw std::invalid_argument(
                        "DepthDistribution: per-pixel weights must sum to 1 when flagged as a distribution");
            }
        }
    }
};

/// D+1 uniformly spaced depth-bin edges. Defaults span the usual scene depth.
inline std::vector<float> uniform_bin_edges(int bins = 64, float near = 2.0f, float far = 51.2f) {
    detail::check_positive_dim(bins, "uniform_bin_edges bins");
    if (!(near < far)) throw std::invalid_argument("uniform_bin_edges: need near < far");
    std::vector<float> edges(bins + 1);
    for (int d = 0; d <= bins; ++d)
        edges[d] = near + (far - near) * static_cast<float>(d) / static_cast<float>(bins);
    return edges;
}

/// One-hot depth distribution from a per-pixel metric depth map. Pixels whose
/// depth falls outside [edges.front(), edges.back()) get zero weight everywhere
/// and clear the distribution flag.
inline DepthDistribution one_hot_depth(const std::vector<float>& depth_map, int height, int width,
                                       std::vector<float> edges) {
    if (depth_map.size() != static_cast<size_t>(height) * width)
        throw std::invalid_argument("one_hot_depth: depth map length does not match H*W");
    int bins = static_cast<int>(edges.size()) - 1;
    if (bins < 1) throw std::invalid_argument("one_hot_depth: need at least 2 bin edges");
    std::vector<float> values(static_cast<size_t>(bins) * height * width, 0.0f);
    size_t plane = static_cast<size_t>(height) * width;
    bool all_in_range = true;
    for (size_t p = 0; p < plane; ++p) {
        float z = depth_map[p];
        if (!(z >= edges.front()) || !(z < edges.back())) {
            all_in_range = false;
            continue;
        }
        int d = static_cast<int>(std::upper_bound(edges.begin(), edges.end(), z) - edges.begin()) - 1;
        d = std::clamp(d, 0, bins - 1);
        values[static_cast<size_t>(d) * plane + p] = 1.0f;
    }
    return DepthDistribution(bins, height, width, std::move(edges), std::move(values), all_in_range);
}

/// Dense C x D x H x W volume: the pre-pooling outer product of features and depth bins.
struct FrustumFeatures {
    int channels = 0;
    int bins = 0;
    int height = 0;
    int width = 0;
    std::vector<float> values;  // ((c*D + d)*H + y)*W + x

    FrustumFeatures() = default;

    FrustumFeatures(int c, int d, int h, int w, float fill = 0.0f)
        : channels(c), bins(d), height(h), width(w) {
        detail::check_positive_dim(c, "FrustumFeatures channels");
        detail::check_positive_dim(d, "FrustumFeatures bins");
        detail::check_positive_dim(h, "FrustumFeatures height");
        detail::check_positive_dim(w, "FrustumFeatures width");
        values.assign(static_cast<size_t>(c) * d * h * w, fill);
    }

    size_t index(int c, int d, int y, int x) const {
        return ((static_cast<size_t>(c) * bins + d) * height + y) * width + x;
    }
    float& at(int c, int d, int y, int x) { return values[index(c, d, y, x)]; }
    float at(int c, int d, int y, int x) const { return values[index(c, d, y, x)]; }

    size_t cell_count() const { return static_cast<size_t>(bins) * height * width; }
};

/// out(c,d,y,x) = feature(c,y,x) * depth(d,y,x).
inline FrustumFeatures lift(const FeatureMap& feature, const DepthDistribution& depth) {
    if (feature.height != depth.height || feature.width != depth.width)
        throw std::invalid_argument("lift: feature and depth shapes differ");
    const int c = feature.channels, d = depth.bins, h = feature.height, w = feature.width;
    const size_t plane = static_cast<size_t>(h) * w;
    FrustumFeatures out(c, d, h, w);
    parallel_for(0, c, [&](int ch) {
        const float* f = feature.data.data() + ch * plane;
        for (int bin = 0; bin < d; ++bin) {
            const float* dep = depth.values.data() + static_cast<size_t>(bin) * plane;
            float* dst = out.values.data() + (static_cast<size_t>(ch) * d + bin) * plane;
            for (size_t p = 0; p < plane; ++p) dst[p] = f[p] * dep[p];
        }
    });
    return out;
}

/// Ego-frame 3D location of every frustum cell (d, y, x), at bin-center depth.
struct FrustumPoints {
    int bins = 0;
    int height = 0;
    int width = 0;
    std::vector<Vec3> points;  // (d*H + y)*W + x

    size_t index(int d, int y, int x) const {
        return (static_cast<size_t>(d) * height + y) * width + x;
    }
    const Vec3& at(int d, int y, int x) const { return points[index(d, y, x)]; }
};

inline FrustumPoints frustum_points(const CameraModel& cam, int height, int width,
                                    const std::vector<float>& bin_edges) {
    cam.validate();
    detail::check_positive_dim(height, "frustum_points height");
    detail::check_positive_dim(width, "frustum_points width");
    if (bin_edges.size() < 2)
        throw std::invalid_argument("frustum_points: need at least 2 bin edges");
    for (size_t i = 0; i + 1 < bin_edges.size(); ++i)
        if (!(bin_edges[i] < bin_edges[i + 1]))
            throw std::invalid_argument("frustum_points: bin edges must be strictly increasing");
    FrustumPoints out;
    out.bins = static_cast<int>(bin_edges.size()) - 1;
    out.height = height;
    out.width = width;
    out.points.resize(static_cast<size_t>(out.bins) * height * width);
    parallel_for(0, out.bins, [&](int d) {
        float z = 0.5f * (bin_edges[d] + bin_edges[d + 1]);
        for (int y = 0; y < height; ++y) {
            for (int x = 0; x < width; ++x) {
                Vec3 cam_pt{(x - cam.cx) * z / cam.fx, (y - cam.cy) * z / cam.fy, z};
                out.points[out.index(d, y, x)] = cam.cam_to_ego.apply(cam_pt);
            }
        }
    });
    return out;
}

/// Scatter-add every frustum cell's channel vector into the voxel containing its
/// point; out-of-bounds cells are dropped. Cells are accumulated in a canonical
/// order (sorted by voxel, then cell) with double-precision partial sums, so the
/// result is reproducible and insensitive to input iteration order.
inline VoxelGrid voxel_pool(const FrustumFeatures& frustum, const FrustumPoints& points,
                            const GridSpec& spec) {
    spec.validate();
    if (points.bins != frustum.bins || points.height != frustum.height ||
        points.width != frustum.width)
        throw std::invalid_argument("voxel_pool: points do not align with frustum cells");

    const size_t cells = frustum.cell_count();
    std::vector<std::pair<uint64_t, uint32_t>> order;  // (voxel linear index, cell index)
    order.reserve(cells);
    const int ydim = spec.dims[1], zdim = spec.dims[2];
    for (size_t q = 0; q < cells; ++q) {
        VoxelIndex vi = world_to_voxel(spec, points.points[q]);
        if (!vi.in_bounds) continue;
        uint64_t v = (static_cast<uint64_t>(vi.x) * ydim + vi.y) * zdim + vi.z;
        order.emplace_back(v, static_cast<uint32_t>(q));
    }
    std::sort(order.begin(), order.end());

    // Run boundaries: one run per touched voxel.
    std::vector<size_t> runs;
    for (size_t i = 0; i < order.size(); ++i)
        if (i == 0 || order[i].first != order[i - 1].first) runs.push_back(i);
    runs.push_back(order.size());

    VoxelGrid out(frustum.channels, spec);
    const size_t voxels = spec.voxel_count();
    parallel_for(0, frustum.channels, [&](int c) {
        const float* src = frustum.values.data() + static_cast<size_t>(c) * cells;
        float* dst = out.data.data() + static_cast<size_t>(c) * voxels;
        for (size_t r = 0; r + 1 < runs.size(); ++r) {
            double acc = 0.0;
            for (size_t i = runs[r]; i < runs[r + 1]; ++i) acc += src[order[i].second];
            dst[order[runs[r]].first] = static_cast<float>(acc);
        }
    });
    return out;
}

/// Occlusion mask lifted through the depth bins and pooled, then clamped so each
/// voxel reads as an occlusion fraction in [0,1].
inline VoxelGrid lift_mask(const OcclusionMask& mask, const DepthDistribution& depth,
                           const FrustumPoints& points, const GridSpec& spec) {
    if (mask.height != depth.height || mask.width != depth.width)
        throw std::invalid_argument("lift_mask: mask and depth shapes differ");
    FeatureMap m(1, mask.height, mask.width, mask.values);
    VoxelGrid pooled = voxel_pool(lift(m, depth), points, spec);
    for (float& v : pooled.data) v = std::clamp(v, 0.0f, 1.0f);
    return pooled;
}

}  // namespace flowscene
