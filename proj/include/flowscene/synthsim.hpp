#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "flowscene/config_json.hpp"
#include "flowscene/fgta.hpp"
#include "flowscene/flow.hpp"
#include "flowscene/grids.hpp"
#include "flowscene/lift.hpp"

namespace flowscene {

/// A fronto-parallel textured rectangle at fixed camera depth, translating in
/// the image plane. Position is the top-left corner in pixels at frame 0;
/// coverage is the half-open box [left, left+width) x [top, top+height).
struct ObjectConfig {
    int class_id = 2;
    float depth = 10.0f;  // camera-frame z, meters
    float left = 0.0f, top = 0.0f;
    float width = 8.0f, height = 8.0f;
    float vx = 0.0f, vy = 0.0f;  // pixels per frame
};

struct SceneConfig {
    int width = 64;
    int height = 64;
    int frames = 3;
    int num_classes = 4;  // including empty class 0
    int background_class = 1;
    float background_depth = 30.0f;
    int feature_channels = 8;
    float feature_noise = 0.01f;
    CameraModel camera;
    std::vector<float> bin_edges;
    GridSpec grid;
    std::vector<ObjectConfig> objects;

    void validate() const {
        detail::check_positive_dim(width, "SceneConfig width");
        detail::check_positive_dim(height, "SceneConfig height");
        if (frames < 2) throw std::invalid_argument("SceneConfig: need at least 2 frames");
        if (num_classes < 2) throw std::invalid_argument("SceneConfig: need at least 2 classes");
        if (background_class < 1 || background_class >= num_classes)
            throw std::invalid_argument("SceneConfig: background class outside 1..K-1");
        if (!(background_depth > 0.0f))
            throw std::invalid_argument("SceneConfig: background depth must be > 0");
        if (feature_channels < num_classes - 1)
            throw std::invalid_argument(
                "SceneConfig: need feature_channels >= num_classes-1 for orthonormal prototypes");
        if (!(feature_noise >= 0.0f) || !std::isfinite(feature_noise))
            throw std::invalid_argument("SceneConfig: feature noise must be finite and >= 0");
        camera.validate();
        if (bin_edges.size() < 2)
            throw std::invalid_argument("SceneConfig: need at least 2 depth-bin edges");
        for (size_t i = 0; i + 1 < bin_edges.size(); ++i)
            if (!(bin_edges[i] < bin_edges[i + 1]))
                throw std::invalid_argument("SceneConfig: bin edges must be strictly increasing");
        grid.validate();
        if (objects.empty()) throw std::invalid_argument("SceneConfig: need at least 1 object");
        for (const ObjectConfig& o : objects) {
            if (o.class_id < 1 || o.class_id >= num_classes)
                throw std::invalid_argument("SceneConfig: object class outside 1..K-1");
            if (!(o.depth > 0.0f)) throw std::invalid_argument("SceneConfig: object depth must be > 0");
            if (!(o.width > 0.0f) || !(o.height > 0.0f))
                throw std::invalid_argument("SceneConfig: object size must be > 0");
            for (float v : {o.left, o.top, o.vx, o.vy})
                if (!std::isfinite(v)) throw std::invalid_argument("SceneConfig: non-finite object pose");
        }
    }
};

inline void to_json(nlohmann::json& j, const ObjectConfig& o) {
    j = nlohmann::json{{"class_id", o.class_id}, {"depth", o.depth},   {"left", o.left},
                       {"top", o.top},           {"width", o.width},   {"height", o.height},
                       {"vx", o.vx},             {"vy", o.vy}};
}

inline void from_json(const nlohmann::json& j, ObjectConfig& o) {
    j.at("class_id").get_to(o.class_id);
    j.at("depth").get_to(o.depth);
    j.at("left").get_to(o.left);
    j.at("top").get_to(o.top);
    j.at("width").get_to(o.width);
    j.at("height").get_to(o.height);
    if (j.contains("vx")) j.at("vx").get_to(o.vx);
    if (j.contains("vy")) j.at("vy").get_to(o.vy);
}

inline void to_json(nlohmann::json& j, const SceneConfig& c) {
    j = nlohmann::json{{"width", c.width},
                       {"height", c.height},
                       {"frames", c.frames},
                       {"num_classes", c.num_classes},
                       {"background_class", c.background_class},
                       {"background_depth", c.background_depth},
                       {"feature_channels", c.feature_channels},
                       {"feature_noise", c.feature_noise},
                       {"camera", c.camera},
                       {"bin_edges", c.bin_edges},
                       {"grid", c.grid},
                       {"objects", c.objects}};
}

inline void from_json(const nlohmann::json& j, SceneConfig& c) {
    j.at("width").get_to(c.width);
    j.at("height").get_to(c.height);
    j.at("frames").get_to(c.frames);
    j.at("num_classes").get_to(c.num_classes);
    j.at("background_class").get_to(c.background_class);
    j.at("background_depth").get_to(c.background_depth);
    j.at("feature_channels").get_to(c.feature_channels);
    if (j.contains("feature_noise")) j.at("feature_noise").get_to(c.feature_noise);
    j.at("camera").get_to(c.camera);
    j.at("bin_edges").get_to(c.bin_edges);
    j.at("grid").get_to(c.grid);
    j.at("objects").get_to(c.objects);
}

/// A small consistent default: 64x64 image, wall at 18 m, one translating
/// object at 10 m, grid covering the visible frustum.
inline SceneConfig default_scene_config() {
    SceneConfig c;
    c.width = 64;
    c.height = 64;
    c.frames = 3;
    c.num_classes = 4;
    c.background_class = 1;
    c.background_depth = 18.0f;
    c.feature_channels = 8;
    c.camera.fx = 64.0f;
    c.camera.fy = 64.0f;
    c.camera.cx = 31.5f;
    c.camera.cy = 31.5f;
    c.camera.cam_to_ego = camera_axes_to_ego();
    c.bin_edges = uniform_bin_edges(32, 2.0f, 20.0f);
    c.grid = GridSpec{{50, 40, 40}, 0.4f, {0.0f, -8.0f, -8.0f}};
    ObjectConfig obj;
    obj.class_id = 2;
    obj.depth = 10.0f;
    obj.left = 12.0f;
    obj.top = 24.0f;
    obj.width = 16.0f;
    obj.height = 16.0f;
    obj.vx = 3.0f;
    obj.vy = 0.0f;
    c.objects.push_back(obj);
    ObjectConfig obj2;
    obj2.class_id = 3;
    obj2.depth = 7.0f;
    obj2.left = 40.0f;
    obj2.top = 12.0f;
    obj2.width = 12.0f;
    obj2.height = 12.0f;
    obj2.vx = -2.0f;
    obj2.vy = 1.0f;
    c.objects.push_back(obj2);
    return c;
}

inline SceneConfig load_scene_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("scene config: cannot open: " + path);
    nlohmann::json j;
    try {
        in >> j;
        return j.get<SceneConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("scene config: bad JSON in " + path + ": " + e.what());
    }
}

inline void save_scene_config(const SceneConfig& config, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("scene config: cannot open for write: " + path);
    out << nlohmann::json(config).dump(2) << "\n";
    if (!out) throw std::runtime_error("scene config: write failed: " + path);
}

struct SceneFrame {
    std::vector<uint16_t> labels;      // H*W class ids (background fills everything)
    std::vector<int32_t> object_ids;   // H*W; -1 = background, else index into objects
    std::vector<float> depth;          // H*W meters (z-buffer result)
    FeatureMap features;
};

struct SyntheticScene {
    SceneConfig config;
    std::vector<SceneFrame> frames;
    std::vector<std::vector<float>> prototypes;  // K x C; class 0 is the zero vector
};

/// Pairwise-orthonormal unit prototypes for classes 1..K-1 (Gram-Schmidt over
/// seeded Gaussians); class 0 stays zero. Requires channels >= classes-1.
inline std::vector<std::vector<float>> make_class_prototypes(int classes, int channels,
                                                             uint32_t seed) {
    detail::check_positive_dim(classes, "make_class_prototypes classes");
    detail::check_positive_dim(channels, "make_class_prototypes channels");
    if (channels < classes - 1)
        throw std::invalid_argument("make_class_prototypes: need channels >= classes-1");
    std::mt19937 rng(seed);
    std::normal_distribution<float> dist(0.0f, 1.0f);
    std::vector<std::vector<float>> protos(classes, std::vector<float>(channels, 0.0f));
    for (int c = 1; c < classes; ++c) {
        std::vector<float>& v = protos[c];
        // Re-draw until Gram-Schmidt leaves a usable residual (degenerate draws
        // are astronomically unlikely but cheap to guard).
        for (int attempt = 0; attempt < 64; ++attempt) {
            for (float& x : v) x = dist(rng);
            for (int prev = 1; prev < c; ++prev) {
                float dot = 0.0f;
                for (int i = 0; i < channels; ++i) dot += v[i] * protos[prev][i];
                for (int i = 0; i < channels; ++i) v[i] -= dot * protos[prev][i];
            }
            float norm = 0.0f;
            for (float x : v) norm += x * x;
            if (norm > 1e-6f) {
                norm = std::sqrt(norm);
                for (float& x : v) x /= norm;
                break;
            }
            if (attempt == 63)
                throw std::runtime_error("make_class_prototypes: failed to orthonormalize");
        }
    }
    return protos;
}

namespace detail {

inline bool object_covers(const ObjectConfig& o, int frame, float x, float y) {
    float left = o.left + frame * o.vx;
    float top = o.top + frame * o.vy;
    return x >= left && x < left + o.width && y >= top && y < top + o.height;
}

// Topmost (nearest) object covering the continuous point, or -1 for background.
// Ties in depth go to the lower object index.
inline int visible_object(const SceneConfig& cfg, int frame, float x, float y) {
    int best = -1;
    float best_depth = cfg.background_depth;
    for (size_t o = 0; o < cfg.objects.size(); ++o) {
        if (!object_covers(cfg.objects[o], frame, x, y)) continue;
        if (cfg.objects[o].depth < best_depth) {
            best = static_cast<int>(o);
            best_depth = cfg.objects[o].depth;
        }
    }
    return best;
}

}  // namespace detail

/// Deterministic render of the configured scene: per-frame labels, z-buffer
/// depth, and features (class prototype + seeded noise shared across frames).
inline SyntheticScene generate(const SceneConfig& config, uint32_t seed) {
    config.validate();
    SyntheticScene scene;
    scene.config = config;
    scene.prototypes = make_class_prototypes(config.num_classes, config.feature_channels, seed);

    const int h = config.height, w = config.width, c = config.feature_channels;
    const size_t plane = static_cast<size_t>(h) * w;
    std::mt19937 rng(seed ^ 0x9e3779b9u);
    std::normal_distribution<float> dist(0.0f, 1.0f);
    std::vector<float> noise(static_cast<size_t>(c) * plane);
    for (float& v : noise) v = dist(rng);

    scene.frames.resize(config.frames);
    for (int f = 0; f < config.frames; ++f) {
        SceneFrame& frame = scene.frames[f];
        frame.labels.assign(plane, static_cast<uint16_t>(config.background_class));
        frame.object_ids.assign(plane, -1);
        frame.depth.assign(plane, config.background_depth);
        frame.features = FeatureMap(c, h, w);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                size_t p = static_cast<size_t>(y) * w + x;
                int o = detail::visible_object(config, f, static_cast<float>(x), static_cast<float>(y));
                if (o >= 0) {
                    frame.object_ids[p] = o;
                    frame.labels[p] = static_cast<uint16_t>(config.objects[o].class_id);
                    frame.depth[p] = config.objects[o].depth;
                }
                const std::vector<float>& proto = scene.prototypes[frame.labels[p]];
                for (int ch = 0; ch < c; ++ch)
                    frame.features.data[ch * plane + p] =
                        proto[ch] + config.feature_noise * noise[ch * plane + p];
            }
        }
    }
    return scene;
}

namespace detail {

inline void check_frame_index(const SyntheticScene& scene, int t, const char* what) {
    if (t < 0 || t >= static_cast<int>(scene.frames.size()))
        throw std::invalid_argument(std::string(what) + ": frame index out of range");
}

}  // namespace detail

/// Exact correspondence fields between two frames. fwd maps frame-t pixels to
/// their material point's location at t_prev; bwd maps the other way. Rigid
/// translation means the displacement is the object's velocity times the frame
/// gap; background pixels carry zero motion.
inline FlowPair oracle_flow(const SyntheticScene& scene, int t, int t_prev) {
    detail::check_frame_index(scene, t, "oracle_flow");
    detail::check_frame_index(scene, t_prev, "oracle_flow");
    if (t == t_prev) throw std::invalid_argument("oracle_flow: frames must differ");
    const SceneConfig& cfg = scene.config;
    const int h = cfg.height, w = cfg.width;
    const size_t plane = static_cast<size_t>(h) * w;

    auto field = [&](int from, int to) {
        std::vector<float> dx(plane, 0.0f), dy(plane, 0.0f);
        float gap = static_cast<float>(to - from);
        const SceneFrame& frame = scene.frames[from];
        for (size_t p = 0; p < plane; ++p) {
            int o = frame.object_ids[p];
            if (o < 0) continue;
            dx[p] = cfg.objects[o].vx * gap;
            dy[p] = cfg.objects[o].vy * gap;
        }
        return FlowField(h, w, std::move(dx), std::move(dy));
    };
    return FlowPair{field(t, t_prev), field(t_prev, t)};
}

/// Pixel occluded iff its frame-t surface point is not the visible surface at
/// its corresponding location in frame t_prev (or that location is off-image).
inline OcclusionMask oracle_occlusion(const SyntheticScene& scene, int t, int t_prev) {
    detail::check_frame_index(scene, t, "oracle_occlusion");
    detail::check_frame_index(scene, t_prev, "oracle_occlusion");
    if (t == t_prev) throw std::invalid_argument("oracle_occlusion: frames must differ");
    const SceneConfig& cfg = scene.config;
    const int h = cfg.height, w = cfg.width;
    OcclusionMask mask(h, w);
    float gap = static_cast<float>(t_prev - t);
    const SceneFrame& frame = scene.frames[t];
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            size_t p = static_cast<size_t>(y) * w + x;
            int o = frame.object_ids[p];
            float px = x, py = y;
            if (o >= 0) {
                px += cfg.objects[o].vx * gap;
                py += cfg.objects[o].vy * gap;
            }
            bool occluded;
            if (px < 0.0f || px > w - 1.0f || py < 0.0f || py > h - 1.0f)
                occluded = true;  // left the frame: nothing to correspond to
            else
                occluded = detail::visible_object(cfg, t_prev, px, py) != o;
            mask.set(y, x, occluded);
        }
    }
    return mask;
}

/// Pixels within `radius` of a value transition in the mask. Scoring excludes
/// this band: interpolation blurs exact silhouette edges.
inline OcclusionMask boundary_band(const OcclusionMask& mask, int radius = 1) {
    if (radius < 0) throw std::invalid_argument("boundary_band: radius must be >= 0");
    const int h = mask.height, w = mask.width;
    OcclusionMask band(h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            float v = mask.at(y, x);
            bool edge = false;
            for (int ny = std::max(0, y - radius); ny <= std::min(h - 1, y + radius) && !edge; ++ny)
                for (int nx = std::max(0, x - radius); nx <= std::min(w - 1, x + radius); ++nx)
                    if (mask.at(ny, nx) != v) {
                        edge = true;
                        break;
                    }
            band.set(y, x, edge);
        }
    }
    return band;
}

struct OracleVoxels {
    SemanticVoxelGrid labels;
    DepthDistribution depth;  // one-hot from the z-buffer
};

/// Rasterizes the frame-t z-buffer into the configured voxel grid using the
/// same bin-center unprojection the lift path uses, so voxelized ground truth
/// and pooled predictions agree on quantization. Nearer surfaces win voxel
/// conflicts. Pass t = -1 for the last frame.
inline OracleVoxels oracle_voxels(const SyntheticScene& scene, int t = -1) {
    if (t == -1) t = static_cast<int>(scene.frames.size()) - 1;
    detail::check_frame_index(scene, t, "oracle_voxels");
    const SceneConfig& cfg = scene.config;
    const int h = cfg.height, w = cfg.width;
    const SceneFrame& frame = scene.frames[t];

    OracleVoxels out{SemanticVoxelGrid(cfg.grid.dims, cfg.num_classes),
                     one_hot_depth(frame.depth, h, w, cfg.bin_edges)};

    const size_t voxels = cfg.grid.voxel_count();
    std::vector<float> best_depth(voxels, std::numeric_limits<float>::infinity());
    bool rasterizable_object = false;  // an object pixel sits within the depth range
    bool landed_object = false;        // ... and fell inside the grid
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            size_t p = static_cast<size_t>(y) * w + x;
            float z = frame.depth[p];
            if (!(z >= cfg.bin_edges.front()) || !(z < cfg.bin_edges.back())) continue;
            bool is_object = frame.object_ids[p] >= 0;
            rasterizable_object = rasterizable_object || is_object;
            int bin = static_cast<int>(std::upper_bound(cfg.bin_edges.begin(), cfg.bin_edges.end(), z) -
                                       cfg.bin_edges.begin()) - 1;
            float zc = 0.5f * (cfg.bin_edges[bin] + cfg.bin_edges[bin + 1]);
            Vec3 cam_pt{(x - cfg.camera.cx) * zc / cfg.camera.fx,
                        (y - cfg.camera.cy) * zc / cfg.camera.fy, zc};
            VoxelIndex vi = world_to_voxel(cfg.grid, cfg.camera.cam_to_ego.apply(cam_pt));
            if (!vi.in_bounds) continue;
            landed_object = landed_object || is_object;
            size_t v = (static_cast<size_t>(vi.x) * cfg.grid.dims[1] + vi.y) * cfg.grid.dims[2] + vi.z;
            if (z < best_depth[v]) {
                best_depth[v] = z;
                out.labels.labels[v] = frame.labels[p];
            }
        }
    }
    if (rasterizable_object && !landed_object)
        throw std::runtime_error("oracle_voxels: grid too coarse to contain any object");
    return out;
}

/// Writes everything a replay needs: scene.json, camera.json, prototypes.fsgr,
/// per-frame features/depth tensors, and — relative to the last frame — flow
/// pairs (.flo), oracle occlusion masks (PGM), and the one-hot depth volume.
inline void export_scene(const SyntheticScene& scene, const std::string& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw std::runtime_error("export_scene: cannot create directory: " + dir);
    fs::path base(dir);

    save_scene_config(scene.config, (base / "scene.json").string());
    {
        std::ofstream cam((base / "camera.json").string());
        if (!cam) throw std::runtime_error("export_scene: cannot write camera.json");
        cam << nlohmann::json(scene.config.camera).dump(2) << "\n";
    }

    const int k = scene.config.num_classes, c = scene.config.feature_channels;
    std::vector<float> proto_flat;
    proto_flat.reserve(static_cast<size_t>(k) * c);
    for (const std::vector<float>& row : scene.prototypes)
        proto_flat.insert(proto_flat.end(), row.begin(), row.end());
    fsgr::write((base / "prototypes.fsgr").string(),
                fsgr::Tensor{{static_cast<uint32_t>(k), static_cast<uint32_t>(c)}, proto_flat});

    const uint32_t hh = static_cast<uint32_t>(scene.config.height);
    const uint32_t ww = static_cast<uint32_t>(scene.config.width);
    char name[64];
    for (size_t f = 0; f < scene.frames.size(); ++f) {
        std::snprintf(name, sizeof name, "frame_%02zu.features.fsgr", f);
        write_feature_map((base / name).string(), scene.frames[f].features);
        std::snprintf(name, sizeof name, "frame_%02zu.depth.fsgr", f);
        fsgr::write((base / name).string(), fsgr::Tensor{{hh, ww}, scene.frames[f].depth});
    }

    int t = static_cast<int>(scene.frames.size()) - 1;
    for (int i = 1; i <= t; ++i) {
        FlowPair pair = oracle_flow(scene, t, t - i);
        std::snprintf(name, sizeof name, "flow_fwd_%02d.flo", i);
        write_flo(pair.fwd, (base / name).string());
        std::snprintf(name, sizeof name, "flow_bwd_%02d.flo", i);
        write_flo(pair.bwd, (base / name).string());
        std::snprintf(name, sizeof name, "occlusion_%02d.pgm", i);
        write_pgm_mask(oracle_occlusion(scene, t, t - i), (base / name).string());
    }

    DepthDistribution depth = one_hot_depth(scene.frames[t].depth, scene.config.height,
                                            scene.config.width, scene.config.bin_edges);
    fsgr::write((base / "depth.fsgr").string(),
                fsgr::Tensor{{static_cast<uint32_t>(depth.bins), hh, ww}, depth.values});
}

}  // namespace flowscene
