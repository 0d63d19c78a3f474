#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "flowscene/flow.hpp"
#include "flowscene/grids.hpp"
#include "flowscene/parallel.hpp"
#include "flowscene/tensorio.hpp"

namespace flowscene {

/// Stack of per-frame H x W weight planes: index (frame, y, x).
struct WeightMap {
    int frames = 0;
    int height = 0;
    int width = 0;
    std::vector<float> values;

    WeightMap() = default;

    WeightMap(int n, int h, int w, float fill = 0.0f) : frames(n), height(h), width(w) {
        detail::check_positive_dim(n, "WeightMap frames");
        detail::check_positive_dim(h, "WeightMap height");
        detail::check_positive_dim(w, "WeightMap width");
        values.assign(static_cast<size_t>(n) * h * w, fill);
    }

    WeightMap(int n, int h, int w, std::vector<float> v)
        : frames(n), height(h), width(w), values(std::move(v)) {
        detail::check_positive_dim(n, "WeightMap frames");
        detail::check_positive_dim(h, "WeightMap height");
        detail::check_positive_dim(w, "WeightMap width");
        if (values.size() != static_cast<size_t>(n) * h * w)
            throw std::invalid_argument("WeightMap: data length does not match N*H*W");
        detail::check_finite(values, "WeightMap");
    }

    size_t index(int i, int y, int x) const {
        return (static_cast<size_t>(i) * height + y) * width + x;
    }
    float& at(int i, int y, int x) { return values[index(i, y, x)]; }
    float at(int i, int y, int x) const { return values[index(i, y, x)]; }

    /// Concatenates single-frame (or multi-frame) maps along the frame axis.
    static WeightMap stack(const std::vector<WeightMap>& planes) {
        if (planes.empty()) throw std::invalid_argument("WeightMap::stack: empty list");
        int h = planes.front().height, w = planes.front().width;
        int n = 0;
        for (const WeightMap& p : planes) {
            if (p.height != h || p.width != w)
                throw std::invalid_argument("WeightMap::stack: plane shapes differ");
            n += p.frames;
        }
        WeightMap out(n, h, w);
        size_t off = 0;
        for (const WeightMap& p : planes) {
            std::copy(p.values.begin(), p.values.end(), out.values.begin() + off);
            off += p.values.size();
        }
        return out;
    }
};

/// Multi-head attention projections for the windowed cross-attention step.
/// wq/wk/wv are heads blocks of (head_dim x channels); wo maps the concatenated
/// head outputs back to channels (channels x channels). All row-major.
struct AttentionParams {
    int channels = 0;
    int heads = 8;
    int window = 7;
    float scale = 0.0f;  // score scale, 1/sqrt(head_dim) from the factories
    std::vector<float> wq, wk, wv;  // heads x head_dim x channels
    std::vector<float> wo;          // channels x channels

    int head_dim() const { return channels / heads; }

    void validate() const {
        detail::check_positive_dim(channels, "AttentionParams channels");
        detail::check_positive_dim(heads, "AttentionParams heads");
        if (channels % heads != 0)
            throw std::invalid_argument("AttentionParams: heads must divide channels");
        if (window <= 0 || window % 2 == 0)
            throw std::invalid_argument("AttentionParams: window must be odd and positive");
        if (!(scale > 0.0f) || !std::isfinite(scale))
            throw std::invalid_argument("AttentionParams: scale must be > 0");
        size_t sq = static_cast<size_t>(channels) * channels;
        if (wq.size() != sq || wk.size() != sq || wv.size() != sq || wo.size() != sq)
            throw std::invalid_argument("AttentionParams: projection matrix sizes do not match channels");
        detail::check_finite(wq, "AttentionParams wq");
        detail::check_finite(wk, "AttentionParams wk");
        detail::check_finite(wv, "AttentionParams wv");
        detail::check_finite(wo, "AttentionParams wo");
    }
};

/// Gaussian projections, seeded; entry scale 1/sqrt(C) keeps activations bounded.
inline AttentionParams random_attention_params(int channels, int heads = 8, int window = 7,
                                               uint32_t seed = 0) {
    AttentionParams p;
    p.channels = channels;
    p.heads = heads;
    p.window = window;
    detail::check_positive_dim(channels, "AttentionParams channels");
    detail::check_positive_dim(heads, "AttentionParams heads");
    if (channels % heads != 0)
        throw std::invalid_argument("AttentionParams: heads must divide channels");
    p.scale = 1.0f / std::sqrt(static_cast<float>(p.head_dim()));
    std::mt19937 rng(seed);
    std::normal_distribution<float> dist(0.0f, 1.0f / std::sqrt(static_cast<float>(channels)));
    size_t sq = static_cast<size_t>(channels) * channels;
    for (std::vector<float>* m : {&p.wq, &p.wk, &p.wv, &p.wo}) {
        m->resize(sq);
        for (float& v : *m) v = dist(rng);
    }
    p.validate();
    return p;
}

/// Identity projections: each head reads/writes its own channel slice unchanged.
inline AttentionParams identity_attention_params(int channels, int heads = 8, int window = 7) {
    AttentionParams p;
    p.channels = channels;
    p.heads = heads;
    p.window = window;
    detail::check_positive_dim(channels, "AttentionParams channels");
    detail::check_positive_dim(heads, "AttentionParams heads");
    if (channels % heads != 0)
        throw std::invalid_argument("AttentionParams: heads must divide channels");
    p.scale = 1.0f / std::sqrt(static_cast<float>(p.head_dim()));
    size_t sq = static_cast<size_t>(channels) * channels;
    for (std::vector<float>* m : {&p.wq, &p.wk, &p.wv, &p.wo}) {
        m->assign(sq, 0.0f);
        for (int c = 0; c < channels; ++c) (*m)[static_cast<size_t>(c) * channels + c] = 1.0f;
    }
    p.validate();
    return p;
}

/// Writes a JSON manifest at `manifest_path` plus four sibling .fsgr tensors.
inline void save_attention_params(const AttentionParams& p, const std::string& manifest_path) {
    p.validate();
    std::filesystem::path mp(manifest_path);
    std::string stem = mp.stem().string();
    auto tensor_file = [&](const char* which) { return stem + "." + which + ".fsgr"; };
    std::filesystem::path dir = mp.parent_path();
    uint32_t c = static_cast<uint32_t>(p.channels);
    uint32_t h = static_cast<uint32_t>(p.heads);
    uint32_t hd = static_cast<uint32_t>(p.head_dim());
    fsgr::write((dir / tensor_file("wq")).string(), fsgr::Tensor{{h, hd, c}, p.wq});
    fsgr::write((dir / tensor_file("wk")).string(), fsgr::Tensor{{h, hd, c}, p.wk});
    fsgr::write((dir / tensor_file("wv")).string(), fsgr::Tensor{{h, hd, c}, p.wv});
    fsgr::write((dir / tensor_file("wo")).string(), fsgr::Tensor{{c, c}, p.wo});
    nlohmann::json manifest;
    manifest["channels"] = p.channels;
    manifest["heads"] = p.heads;
    manifest["window"] = p.window;
    manifest["scale"] = p.scale;
    manifest["tensors"] = {{"wq", tensor_file("wq")},
                           {"wk", tensor_file("wk")},
                           {"wv", tensor_file("wv")},
                           {"wo", tensor_file("wo")}};
    std::ofstream out(manifest_path);
    if (!out) throw std::runtime_error("attention params: cannot open for write: " + manifest_path);
    out << manifest.dump(2) << "\n";
    if (!out) throw std::runtime_error("attention params: write failed: " + manifest_path);
}

inline AttentionParams load_attention_params(const std::string& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw std::runtime_error("attention params: cannot open: " + manifest_path);
    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("attention params: bad manifest " + manifest_path + ": " + e.what());
    }
    AttentionParams p;
    try {
        p.channels = manifest.at("channels").get<int>();
        p.heads = manifest.at("heads").get<int>();
        p.window = manifest.at("window").get<int>();
        p.scale = manifest.at("scale").get<float>();
        std::filesystem::path dir = std::filesystem::path(manifest_path).parent_path();
        auto load = [&](const char* which) {
            std::string name = manifest.at("tensors").at(which).get<std::string>();
            return fsgr::read((dir / name).string()).data;
        };
        p.wq = load("wq");
        p.wk = load("wk");
        p.wv = load("wv");
        p.wo = load("wo");
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("attention params: bad manifest " + manifest_path + ": " + e.what());
    }
    p.validate();
    return p;
}

/// Per-pixel cosine similarity between channel vectors; zero vectors score 0.
inline WeightMap cosine_weight(const FeatureMap& warped, const FeatureMap& reference) {
    if (!warped.same_shape(reference))
        throw std::invalid_argument("cosine_weight: shapes differ");
    const int h = warped.height, w = warped.width, c = warped.channels;
    const size_t plane = static_cast<size_t>(h) * w;
    WeightMap out(1, h, w);
    parallel_for(0, h, [&](int y) {
        for (int x = 0; x < w; ++x) {
            size_t p = static_cast<size_t>(y) * w + x;
            float dot = 0.0f, na = 0.0f, nb = 0.0f;
            for (int ch = 0; ch < c; ++ch) {
                float a = warped.data[ch * plane + p];
                float b = reference.data[ch * plane + p];
                dot += a * b;
                na += a * a;
                nb += b * b;
            }
            out.values[p] = (na > 0.0f && nb > 0.0f) ? dot / (std::sqrt(na) * std::sqrt(nb)) : 0.0f;
        }
    });
    return out;
}

/// Per-pixel softmax across the frame axis.
inline WeightMap normalize_weights(const WeightMap& raw) {
    const int n = raw.frames, h = raw.height, w = raw.width;
    const size_t plane = static_cast<size_t>(h) * w;
    WeightMap out(n, h, w);
    parallel_for(0, h, [&](int y) {
        for (int x = 0; x < w; ++x) {
            size_t p = static_cast<size_t>(y) * w + x;
            float m = raw.values[p];
            for (int i = 1; i < n; ++i) m = std::max(m, raw.values[i * plane + p]);
            float denom = 0.0f;
            for (int i = 0; i < n; ++i) denom += std::exp(raw.values[i * plane + p] - m);
            for (int i = 0; i < n; ++i)
                out.values[i * plane + p] = std::exp(raw.values[i * plane + p] - m) / denom;
        }
    });
    return out;
}

/// F_agg(P) = sum_i w_i(P) * frame_i(P).
inline FeatureMap aggregate(const std::vector<FeatureMap>& frames, const WeightMap& weights) {
    if (frames.empty()) throw std::invalid_argument("aggregate: empty frame list");
    if (static_cast<int>(frames.size()) != weights.frames)
        throw std::invalid_argument("aggregate: frame count does not match weight planes");
    const FeatureMap& first = frames.front();
    for (const FeatureMap& f : frames)
        if (!f.same_shape(first)) throw std::invalid_argument("aggregate: frame shapes differ");
    if (first.height != weights.height || first.width != weights.width)
        throw std::invalid_argument("aggregate: weight plane shape differs from frames");
    const int c = first.channels;
    const size_t plane = static_cast<size_t>(first.height) * first.width;
    FeatureMap out(c, first.height, first.width);
    parallel_for(0, c, [&](int ch) {
        float* dst = out.data.data() + ch * plane;
        for (size_t i = 0; i < frames.size(); ++i) {
            const float* src = frames[i].data.data() + ch * plane;
            const float* wgt = weights.values.data() + i * plane;
            for (size_t p = 0; p < plane; ++p) dst[p] += wgt[p] * src[p];
        }
    });
    return out;
}

/// Windowed multi-head cross-attention with occluded keys excluded from the
/// softmax. Output is query + Wo * concat(head outputs); a pixel whose whole
/// neighborhood is occluded passes the query through unchanged.
inline FeatureMap neighborhood_cross_attention(const FeatureMap& query, const FeatureMap& kv,
                                               const OcclusionMask& occl,
                                               const AttentionParams& params) {
    params.validate();
    if (!query.same_shape(kv))
        throw std::invalid_argument("neighborhood_cross_attention: query/kv shapes differ");
    if (occl.height != query.height || occl.width != query.width)
        throw std::invalid_argument("neighborhood_cross_attention: mask shape differs");
    if (params.channels != query.channels)
        throw std::invalid_argument("neighborhood_cross_attention: params built for different channel count");

    const int c = query.channels, h = query.height, w = query.width;
    const int heads = params.heads, hd = params.head_dim(), radius = params.window / 2;
    const size_t plane = static_cast<size_t>(h) * w;

    // Projected planes, laid out ((head*hd + d) * H + y) * W + x. Row r of a
    // projection matrix times the channel planes is a plane-wise saxpy.
    auto project = [&](const std::vector<float>& mat, const FeatureMap& src) {
        std::vector<float> dst(static_cast<size_t>(c) * plane, 0.0f);
        parallel_for(0, c, [&](int row) {
            float* out_plane = dst.data() + static_cast<size_t>(row) * plane;
            for (int ch = 0; ch < c; ++ch) {
                float coef = mat[static_cast<size_t>(row) * c + ch];
                if (coef == 0.0f) continue;
                const float* in_plane = src.data.data() + static_cast<size_t>(ch) * plane;
                for (size_t p = 0; p < plane; ++p) out_plane[p] += coef * in_plane[p];
            }
        });
        return dst;
    };
    std::vector<float> qp = project(params.wq, query);
    std::vector<float> kp = project(params.wk, kv);
    std::vector<float> vp = project(params.wv, kv);

    FeatureMap out(c, h, w);
    const int max_keys = params.window * params.window;
    parallel_for(0, h, [&](int y) {
        std::vector<size_t> keys(max_keys);
        std::vector<float> scores(max_keys);
        std::vector<float> att(c);
        for (int x = 0; x < w; ++x) {
            size_t p = static_cast<size_t>(y) * w + x;
            int nkeys = 0;
            for (int ny = std::max(0, y - radius); ny <= std::min(h - 1, y + radius); ++ny)
                for (int nx = std::max(0, x - radius); nx <= std::min(w - 1, x + radius); ++nx) {
                    size_t q = static_cast<size_t>(ny) * w + nx;
                    if (occl.values[q] == 0.0f) keys[nkeys++] = q;
                }
            if (nkeys == 0) {
                for (int ch = 0; ch < c; ++ch)
                    out.data[ch * plane + p] = query.data[ch * plane + p];
                continue;
            }
            std::fill(att.begin(), att.end(), 0.0f);
            for (int head = 0; head < heads; ++head) {
                const size_t base = static_cast<size_t>(head) * hd * plane;
                float mx = -std::numeric_limits<float>::infinity();
                for (int j = 0; j < nkeys; ++j) {
                    float s = 0.0f;
                    for (int d = 0; d < hd; ++d)
                        s += qp[base + d * plane + p] * kp[base + d * plane + keys[j]];
                    scores[j] = s * params.scale;
                    mx = std::max(mx, scores[j]);
                }
                float denom = 0.0f;
                for (int j = 0; j < nkeys; ++j) {
                    scores[j] = std::exp(scores[j] - mx);
                    denom += scores[j];
                }
                for (int d = 0; d < hd; ++d) {
                    float acc = 0.0f;
                    for (int j = 0; j < nkeys; ++j)
                        acc += scores[j] * vp[base + d * plane + keys[j]];
                    att[head * hd + d] = acc / denom;
                }
            }
            for (int ch = 0; ch < c; ++ch) {
                float acc = query.data[ch * plane + p];
                const float* row = params.wo.data() + static_cast<size_t>(ch) * c;
                for (int j = 0; j < c; ++j) acc += row[j] * att[j];
                out.data[ch * plane + p] = acc;
            }
        }
    });
    return out;
}

struct FlowPair {
    FlowField fwd;  // current -> history frame
    FlowField bwd;  // history frame -> current
};

struct FgtaResult {
    FeatureMap f_agg;
    FeatureMap f_refined;
    OcclusionMask mask;                    // union of per-frame consistency masks
    std::vector<OcclusionMask> frame_masks;  // per-frame, for diagnostics
};

/// Full temporal-aggregation pass: warp each history frame to the current one,
/// weight by cosine similarity (the current frame rides along at index 0 under
/// an identity warp), union the consistency masks, softmax-normalize, fuse, and
/// refine the current frame with occlusion-masked cross-attention over the fused map.
inline FgtaResult fgta_forward(const FeatureMap& current, const std::vector<FeatureMap>& history,
                               const std::vector<FlowPair>& flows, const ConsistencyConfig& cfg,
                               const AttentionParams& params) {
    if (history.empty()) throw std::invalid_argument("fgta_forward: empty history");
    if (history.size() != flows.size())
        throw std::invalid_argument("fgta_forward: history and flow counts differ");
    cfg.validate();

    std::vector<FeatureMap> frames;
    frames.reserve(history.size() + 1);
    frames.push_back(current);

    std::vector<WeightMap> raw_planes;
    raw_planes.push_back(cosine_weight(current, current));

    FgtaResult result;
    std::vector<OcclusionMask> union_input;
    for (size_t i = 0; i < history.size(); ++i) {
        WarpResult warped = warp(history[i], flows[i].fwd);
        raw_planes.push_back(cosine_weight(warped.feature, current));
        frames.push_back(std::move(warped.feature));
        OcclusionMask frame_mask = occlusion_mask(flows[i].fwd, flows[i].bwd, cfg);
        union_input.push_back(frame_mask);
        result.frame_masks.push_back(std::move(frame_mask));
    }
    result.mask = accumulate_masks(union_input);

    WeightMap weights = normalize_weights(WeightMap::stack(raw_planes));
    result.f_agg = aggregate(frames, weights);
    result.f_refined = neighborhood_cross_attention(current, result.f_agg, result.mask, params);
    return result;
}

}  // namespace flowscene
