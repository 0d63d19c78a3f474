#pragma once

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "flowscene/config_json.hpp"
#include "flowscene/fgta.hpp"
#include "flowscene/flow.hpp"
#include "flowscene/grids.hpp"
#include "flowscene/lift.hpp"
#include "flowscene/losses.hpp"
#include "flowscene/ogvr.hpp"
#include "flowscene/parallel.hpp"

namespace flowscene {

enum class AttentionSource { none, random, file };

struct PipelineConfig {
    int history_frames = 2;  // n
    ConsistencyConfig consistency;
    AttentionSource attention_source = AttentionSource::none;
    int attention_heads = 8;
    int attention_window = 7;
    uint32_t attention_seed = 0;
    std::string attention_file;  // manifest path when source == file
    CameraModel camera;
    std::vector<float> bin_edges;
    GridSpec grid;
    LossWeights loss_weights;
    std::vector<std::vector<float>> prototypes;  // K x C, for readout

    void validate() const {
        if (history_frames < 1)
            throw std::invalid_argument("PipelineConfig: need at least 1 history frame");
        consistency.validate();
        camera.validate();
        if (bin_edges.size() < 2)
            throw std::invalid_argument("PipelineConfig: need at least 2 depth-bin edges");
        for (size_t i = 0; i + 1 < bin_edges.size(); ++i)
            if (!(bin_edges[i] < bin_edges[i + 1]))
                throw std::invalid_argument("PipelineConfig: bin edges must be strictly increasing");
        grid.validate();
        loss_weights.validate();
        if (attention_source != AttentionSource::none) {
            if (attention_heads <= 0 || attention_window <= 0 || attention_window % 2 == 0)
                throw std::invalid_argument("PipelineConfig: attention window must be odd, heads positive");
            if (attention_source == AttentionSource::file && attention_file.empty())
                throw std::invalid_argument("PipelineConfig: attention source 'file' needs a path");
        }
        for (const std::vector<float>& p : prototypes)
            if (p.size() != prototypes.front().size())
                throw std::invalid_argument("PipelineConfig: prototype rows differ in length");
    }
};

inline void to_json(nlohmann::json& j, const PipelineConfig& c) {
    const char* source = c.attention_source == AttentionSource::none ? "none"
                         : c.attention_source == AttentionSource::random ? "random"
                                                                         : "file";
    j = nlohmann::json{{"history_frames", c.history_frames},
                       {"consistency", c.consistency},
                       {"attention_source", source},
                       {"attention_heads", c.attention_heads},
                       {"attention_window", c.attention_window},
                       {"attention_seed", c.attention_seed},
                       {"attention_file", c.attention_file},
                       {"camera", c.camera},
                       {"bin_edges", c.bin_edges},
                       {"grid", c.grid},
                       {"loss_weights", c.loss_weights},
                       {"prototypes", c.prototypes}};
}

inline void from_json(const nlohmann::json& j, PipelineConfig& c) {
    if (j.contains("history_frames")) j.at("history_frames").get_to(c.history_frames);
    if (j.contains("consistency")) j.at("consistency").get_to(c.consistency);
    if (j.contains("attention_source")) {
        std::string s = j.at("attention_source").get<std::string>();
        if (s == "none")
            c.attention_source = AttentionSource::none;
        else if (s == "random")
            c.attention_source = AttentionSource::random;
        else if (s == "file")
            c.attention_source = AttentionSource::file;
        else
            throw std::invalid_argument("PipelineConfig: unknown attention_source '" + s + "'");
    }
    if (j.contains("attention_heads")) j.at("attention_heads").get_to(c.attention_heads);
    if (j.contains("attention_window")) j.at("attention_window").get_to(c.attention_window);
    if (j.contains("attention_seed")) j.at("attention_seed").get_to(c.attention_seed);
    if (j.contains("attention_file")) j.at("attention_file").get_to(c.attention_file);
    if (j.contains("camera")) j.at("camera").get_to(c.camera);
    if (j.contains("bin_edges")) j.at("bin_edges").get_to(c.bin_edges);
    if (j.contains("grid")) j.at("grid").get_to(c.grid);
    if (j.contains("loss_weights")) j.at("loss_weights").get_to(c.loss_weights);
    if (j.contains("prototypes")) j.at("prototypes").get_to(c.prototypes);
}

inline PipelineConfig load_pipeline_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("pipeline config: cannot open: " + path);
    nlohmann::json j;
    try {
        in >> j;
        return j.get<PipelineConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("pipeline config: bad JSON in " + path + ": " + e.what());
    }
}

inline void save_pipeline_config(const PipelineConfig& config, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("pipeline config: cannot open for write: " + path);
    out << nlohmann::json(config).dump(2) << "\n";
    if (!out) throw std::runtime_error("pipeline config: write failed: " + path);
}

/// Materializes attention projections per the configured source. Must not be
/// called when the source is none.
inline AttentionParams resolve_attention_params(const PipelineConfig& cfg, int channels) {
    switch (cfg.attention_source) {
        case AttentionSource::random:
            return random_attention_params(channels, cfg.attention_heads, cfg.attention_window,
                                           cfg.attention_seed);
        case AttentionSource::file: {
            AttentionParams p = load_attention_params(cfg.attention_file);
            if (p.channels != channels)
                throw std::invalid_argument("attention params built for " +
                                            std::to_string(p.channels) + " channels, input has " +
                                            std::to_string(channels));
            return p;
        }
        case AttentionSource::none:
            break;
    }
    throw std::logic_error("resolve_attention_params: source is none");
}

struct PipelineResult {
    VoxelGrid v_fine;
    OcclusionMask mask;
    // Intermediates, retained for inspection.
    FeatureMap f_agg;
    FeatureMap f_refined;
    VoxelGrid v_t;
    VoxelGrid v_agg;
    VoxelGrid v_mask;
};

namespace detail {

template <typename F>
auto pipeline_stage(const char* name, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const std::exception& e) {
        throw std::runtime_error(std::string("pipeline stage ") + name + ": " + e.what());
    }
}

}  // namespace detail

/// Full pass: temporal aggregation on the image plane, lift-splat of the
/// current/aggregated features and the occlusion mask, then mask-guided fusion.
/// `occl_override`, when given, replaces the consistency-check union mask.
inline PipelineResult run(const FeatureMap& current, const std::vector<FeatureMap>& history,
                          const std::vector<FlowPair>& flows, const DepthDistribution& depth,
                          const OcclusionMask* occl_override, const PipelineConfig& cfg) {
    cfg.validate();
    if (static_cast<int>(history.size()) != cfg.history_frames)
        throw std::invalid_argument("pipeline: got " + std::to_string(history.size()) +
                                    " history frames, config expects " +
                                    std::to_string(cfg.history_frames));
    if (history.size() != flows.size())
        throw std::invalid_argument("pipeline: history and flow counts differ");

    PipelineResult r;

    detail::pipeline_stage("fgta", [&] {
        std::vector<FeatureMap> frames;
        frames.reserve(history.size() + 1);
        frames.push_back(current);
        std::vector<WeightMap> planes;
        planes.push_back(cosine_weight(current, current));
        std::vector<OcclusionMask> frame_masks;
        for (size_t i = 0; i < history.size(); ++i) {
            WarpResult warped = warp(history[i], flows[i].fwd);
            planes.push_back(cosine_weight(warped.feature, current));
            frames.push_back(std::move(warped.feature));
            if (!occl_override)
                frame_masks.push_back(occlusion_mask(flows[i].fwd, flows[i].bwd, cfg.consistency));
        }
        r.mask = occl_override ? *occl_override : accumulate_masks(frame_masks);
        if (r.mask.height != current.height || r.mask.width != current.width)
            throw std::invalid_argument("occlusion mask shape differs from features");
        r.f_agg = aggregate(frames, normalize_weights(WeightMap::stack(planes)));
        r.f_refined = cfg.attention_source == AttentionSource::none
                          ? current
                          : neighborhood_cross_attention(
                                current, r.f_agg, r.mask,
                                resolve_attention_params(cfg, current.channels));
        return 0;
    });

    FrustumPoints points = detail::pipeline_stage("frustum", [&] {
        return frustum_points(cfg.camera, current.height, current.width, cfg.bin_edges);
    });

    detail::pipeline_stage("lift", [&] {
        r.v_t = voxel_pool(lift(r.f_refined, depth), points, cfg.grid);
        r.v_agg = voxel_pool(lift(r.f_agg, depth), points, cfg.grid);
        r.v_mask = lift_mask(r.mask, depth, points, cfg.grid);
        return 0;
    });

    detail::pipeline_stage("refine", [&] {
        r.v_fine = refine(r.v_t, r.v_agg, r.v_mask);
        return 0;
    });
    return r;
}

/// Nearest-prototype class readout: per-voxel argmax of dot(feature, prototype).
/// Zero-feature voxels are empty; ties break toward the lower class id.
inline SemanticVoxelGrid readout(const VoxelGrid& v_fine,
                                 const std::vector<std::vector<float>>& prototypes) {
    if (prototypes.empty()) throw std::invalid_argument("readout: need at least one prototype");
    const int k = static_cast<int>(prototypes.size());
    const int c = v_fine.channels;
    for (const std::vector<float>& p : prototypes)
        if (p.size() != static_cast<size_t>(c))
            throw std::invalid_argument("readout: prototype dim mismatch");

    const size_t voxels = v_fine.spec().voxel_count();
    SemanticVoxelGrid out(v_fine.dims, k);
    parallel_for(0, v_fine.dims[0], [&](int x) {
        size_t slab = static_cast<size_t>(v_fine.dims[1]) * v_fine.dims[2];
        for (size_t s = 0; s < slab; ++s) {
            size_t v = x * slab + s;
            bool zero = true;
            for (int ch = 0; ch < c && zero; ++ch)
                if (v_fine.data[ch * voxels + v] != 0.0f) zero = false;
            if (zero) continue;  // class 0
            int best_c = 0;
            float best = 0.0f;
            for (int cls = 0; cls < k; ++cls) {
                float dot = 0.0f;
                for (int ch = 0; ch < c; ++ch)
                    dot += v_fine.data[ch * voxels + v] * prototypes[cls][ch];
                if (cls == 0 || dot > best) {
                    best = dot;
                    best_c = cls;
                }
            }
            out.labels[v] = static_cast<uint16_t>(best_c);
        }
    });
    return out;
}

}  // namespace flowscene
