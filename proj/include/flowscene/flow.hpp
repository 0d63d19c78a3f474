#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "flowscene/grids.hpp"
#include "flowscene/parallel.hpp"

namespace flowscene {

/// Per-pixel round-trip residual magnitude in pixels. Pixels whose round trip
/// leaves the image carry kOutOfBoundsResidual instead of +inf.
constexpr float kOutOfBoundsResidual = 1e9f;

struct ResidualField {
    int height = 0;
    int width = 0;
    std::vector<float> values;

    ResidualField() = default;

    ResidualField(int h, int w, std::vector<float> v)
        : height(h), width(w), values(std::move(v)) {
        detail::check_positive_dim(h, "ResidualField height");
        detail::check_positive_dim(w, "ResidualField width");
        if (values.size() != static_cast<size_t>(h) * w)
            throw std::invalid_argument("ResidualField: data length does not match H*W");
        for (float r : values) {
            if (!(r >= 0.0f) || !std::isfinite(r))
                throw std::invalid_argument("ResidualField: values must be finite and >= 0");
        }
    }

    float at(int y, int x) const { return values[static_cast<size_t>(y) * width + x]; }
};

enum class BorderPolicy { zero_pad, mark_occluded };

struct ConsistencyConfig {
    float tau = 1.0f;  // pixels, absolute threshold on ||delta||
    BorderPolicy border_policy = BorderPolicy::zero_pad;
    // Optional relative test ||delta||^2 > alpha*(||f||^2+||b||^2) + beta.
    bool use_relative = false;
    float relative_alpha = 0.01f;
    float relative_beta = 0.5f;

    void validate() const {
        if (!(tau > 0.0f) || !std::isfinite(tau))
            throw std::invalid_argument("ConsistencyConfig: tau must be > 0");
    }
};

namespace detail {

// One bilinear footprint: linear pixel indices of the four corners (-1 when the
// corner falls outside the image) and their weights. valid_corners == 0 means
// the sample point is fully outside [0,W-1]x[0,H-1].
struct BilinearTap {
    long idx[4] = {-1, -1, -1, -1};
    float w[4] = {0.0f, 0.0f, 0.0f, 0.0f};
    int valid_corners = 0;
};

inline BilinearTap make_tap(int height, int width, float x, float y) {
    BilinearTap tap;
    float fx = std::floor(x);
    float fy = std::floor(y);
    int x1 = static_cast<int>(fx);
    int y1 = static_cast<int>(fy);
    float ax = x - fx;
    float ay = y - fy;
    const int cx[4] = {x1, x1 + 1, x1, x1 + 1};
    const int cy[4] = {y1, y1, y1 + 1, y1 + 1};
    const float cw[4] = {(1.0f - ax) * (1.0f - ay), ax * (1.0f - ay), (1.0f - ax) * ay, ax * ay};
    for (int k = 0; k < 4; ++k) {
        if (cx[k] >= 0 && cx[k] < width && cy[k] >= 0 && cy[k] < height) {
            tap.idx[k] = static_cast<long>(cy[k]) * width + cx[k];
            tap.w[k] = cw[k];
            ++tap.valid_corners;
        }
    }
    return tap;
}

inline float apply_tap(const BilinearTap& tap, const float* plane) {
    float acc = 0.0f;
    for (int k = 0; k < 4; ++k)
        if (tap.idx[k] >= 0) acc += tap.w[k] * plane[tap.idx[k]];
    return acc;
}

}  // namespace detail

struct SampleResult {
    std::vector<float> value;  // length C
    bool valid = false;        // false iff the sample point is fully outside the image
};

/// Bilinear interpolation of the four surrounding pixels; corners outside the
/// image contribute zero.
inline SampleResult bilinear_sample(const FeatureMap& map, float x, float y) {
    SampleResult r;
    r.value.assign(map.channels, 0.0f);
    detail::BilinearTap tap = detail::make_tap(map.height, map.width, x, y);
    r.valid = tap.valid_corners > 0;
    if (!r.valid) return r;
    size_t plane = static_cast<size_t>(map.height) * map.width;
    for (int c = 0; c < map.channels; ++c)
        r.value[c] = detail::apply_tap(tap, map.data.data() + c * plane);
    return r;
}

struct WarpResult {
    FeatureMap feature;
    OcclusionMask out_of_bounds;  // 1 where the sample point left the image entirely
};

/// Flow-guided backward warp: output(c,y,x) = sample(feature, x + dx, y + dy).
inline WarpResult warp(const FeatureMap& feature, const FlowField& flow) {
    if (feature.height != flow.height || feature.width != flow.width)
        throw std::invalid_argument("warp: feature and flow shapes differ");
    const int h = feature.height, w = feature.width, c = feature.channels;
    WarpResult out;
    out.feature = FeatureMap(c, h, w);
    std::vector<float> oob(static_cast<size_t>(h) * w, 0.0f);

    std::vector<detail::BilinearTap> taps(static_cast<size_t>(h) * w);
    parallel_for(0, h, [&](int y) {
        for (int x = 0; x < w; ++x) {
            size_t p = static_cast<size_t>(y) * w + x;
            taps[p] = detail::make_tap(h, w, x + flow.dx[p], y + flow.dy[p]);
            if (taps[p].valid_corners == 0) oob[p] = 1.0f;
        }
    });
    const size_t plane = static_cast<size_t>(h) * w;
    parallel_for(0, c, [&](int ch) {
        const float* src = feature.data.data() + ch * plane;
        float* dst = out.feature.data.data() + ch * plane;
        for (size_t p = 0; p < plane; ++p) dst[p] = detail::apply_tap(taps[p], src);
    });
    out.out_of_bounds = OcclusionMask(h, w, std::move(oob));
    return out;
}

namespace detail {

// Shared inner step of the consistency check: delta(x) = fwd(x) + bwd(x + fwd(x)),
// with bwd sampled bilinearly at the round-trip location. Returns false when the
// round-trip point is treated as off-image under the border policy.
inline bool round_trip_delta(const FlowField& fwd, const FlowField& bwd, int y, int x,
                             BorderPolicy policy, float& delta_x, float& delta_y,
                             float& bwd_x, float& bwd_y) {
    size_t p = static_cast<size_t>(y) * fwd.width + x;
    float fdx = fwd.dx[p];
    float fdy = fwd.dy[p];
    BilinearTap tap = make_tap(fwd.height, fwd.width, x + fdx, y + fdy);
    bool inside = policy == BorderPolicy::zero_pad ? tap.valid_corners > 0
                                                   : tap.valid_corners == 4;
    if (!inside) return false;
    bwd_x = apply_tap(tap, bwd.dx.data());
    bwd_y = apply_tap(tap, bwd.dy.data());
    delta_x = fdx + bwd_x;
    delta_y = fdy + bwd_y;
    return true;
}

}  // namespace detail

/// Euclidean norm of the forward-backward round-trip residual per pixel.
inline ResidualField consistency_residual(const FlowField& fwd, const FlowField& bwd,
                                          BorderPolicy policy = BorderPolicy::zero_pad) {
    if (!fwd.same_shape(bwd))
        throw std::invalid_argument("consistency_residual: flow shapes differ");
    const int h = fwd.height, w = fwd.width;
    std::vector<float> res(static_cast<size_t>(h) * w, 0.0f);
    parallel_for(0, h, [&](int y) {
        for (int x = 0; x < w; ++x) {
            float dx, dy, bx, by;
            size_t p = static_cast<size_t>(y) * w + x;
            if (detail::round_trip_delta(fwd, bwd, y, x, policy, dx, dy, bx, by))
                res[p] = std::sqrt(dx * dx + dy * dy);
            else
                res[p] = kOutOfBoundsResidual;
        }
    });
    return ResidualField(h, w, std::move(res));
}

/// M(x) = 1 iff the round-trip residual at x violates the threshold.
inline OcclusionMask occlusion_mask(const FlowField& fwd, const FlowField& bwd,
                                    const ConsistencyConfig& cfg) {
    cfg.validate();
    if (!fwd.same_shape(bwd))
        throw std::invalid_argument("occlusion_mask: flow shapes differ");
    const int h = fwd.height, w = fwd.width;
    std::vector<float> mask(static_cast<size_t>(h) * w, 0.0f);
    parallel_for(0, h, [&](int y) {
        for (int x = 0; x < w; ++x) {
            size_t p = static_cast<size_t>(y) * w + x;
            float dx, dy, bx, by;
            if (!detail::round_trip_delta(fwd, bwd, y, x, cfg.border_policy, dx, dy, bx, by)) {
                mask[p] = 1.0f;  // no correspondence off-screen
                continue;
            }
            float sq = dx * dx + dy * dy;
            bool occluded;
            if (cfg.use_relative) {
                float fsq = fwd.dx[p] * fwd.dx[p] + fwd.dy[p] * fwd.dy[p];
                float bsq = bx * bx + by * by;
                occluded = sq > cfg.relative_alpha * (fsq + bsq) + cfg.relative_beta;
            } else {
                occluded = std::sqrt(sq) > cfg.tau;
            }
            mask[p] = occluded ? 1.0f : 0.0f;
        }
    });
    return OcclusionMask(h, w, std::move(mask));
}

/// Pointwise union of occlusion masks.
inline OcclusionMask accumulate_masks(const std::vector<OcclusionMask>& masks) {
    if (masks.empty()) throw std::invalid_argument("accumulate_masks: empty list");
    const OcclusionMask& first = masks.front();
    std::vector<float> acc = first.values;
    for (size_t i = 1; i < masks.size(); ++i) {
        if (!masks[i].same_shape(first))
            throw std::invalid_argument("accumulate_masks: mask shapes differ");
        for (size_t p = 0; p < acc.size(); ++p)
            acc[p] = std::max(acc[p], masks[i].values[p]);
    }
    return OcclusionMask(first.height, first.width, std::move(acc));
}

// ---------------------------------------------------------------------------
// Middlebury .flo: float magic 202021.25, i32 width, i32 height, then
// interleaved (dx, dy) float pairs, row-major, little-endian throughout.

constexpr float kFloMagic = 202021.25f;

inline void write_flo(const FlowField& flow, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("flo: cannot open for write: " + path);
    float magic = kFloMagic;
    int32_t w = flow.width, h = flow.height;
    out.write(reinterpret_cast<const char*>(&magic), 4);
    out.write(reinterpret_cast<const char*>(&w), 4);
    out.write(reinterpret_cast<const char*>(&h), 4);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            size_t p = static_cast<size_t>(y) * w + x;
            out.write(reinterpret_cast<const char*>(&flow.dx[p]), 4);
            out.write(reinterpret_cast<const char*>(&flow.dy[p]), 4);
        }
    }
    if (!out) throw std::runtime_error("flo: write failed: " + path);
}

inline FlowField read_flo(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("flo: cannot open: " + path);
    float magic = 0.0f;
    int32_t w = 0, h = 0;
    if (!in.read(reinterpret_cast<char*>(&magic), 4))
        throw std::runtime_error("flo: truncated header: " + path);
    if (magic != kFloMagic) throw std::runtime_error("flo: bad magic: " + path);
    if (!in.read(reinterpret_cast<char*>(&w), 4) || !in.read(reinterpret_cast<char*>(&h), 4))
        throw std::runtime_error("flo: truncated header: " + path);
    if (w <= 0 || h <= 0) throw std::runtime_error("flo: implausible dims: " + path);
    std::vector<float> dx(static_cast<size_t>(h) * w), dy(static_cast<size_t>(h) * w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            size_t p = static_cast<size_t>(y) * w + x;
            if (!in.read(reinterpret_cast<char*>(&dx[p]), 4) ||
                !in.read(reinterpret_cast<char*>(&dy[p]), 4))
                throw std::runtime_error("flo: truncated payload: " + path);
        }
    }
    return FlowField(h, w, std::move(dx), std::move(dy));
}

// ---------------------------------------------------------------------------
// Masks as binary PGM (P5, maxval 255): 1 -> 255, 0 -> 0.

inline void write_pgm_mask(const OcclusionMask& mask, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("pgm: cannot open for write: " + path);
    out << "P5\n" << mask.width << " " << mask.height << "\n255\n";
    std::vector<unsigned char> row(mask.width);
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x)
            row[x] = mask.at(y, x) != 0.0f ? 255 : 0;
        out.write(reinterpret_cast<const char*>(row.data()), mask.width);
    }
    if (!out) throw std::runtime_error("pgm: write failed: " + path);
}

namespace detail {

inline int pgm_next_int(std::istream& in, const std::string& path) {
    // Skips whitespace and '#' comment lines between header tokens.
    int ch = in.peek();
    while (ch == '#' || std::isspace(ch)) {
        if (ch == '#') {
            std::string line;
            std::getline(in, line);
        } else {
            in.get();
        }
        ch = in.peek();
    }
    int v = -1;
    if (!(in >> v)) throw std::runtime_error("pgm: malformed header: " + path);
    return v;
}

}  // namespace detail

inline OcclusionMask read_pgm_mask(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("pgm: cannot open: " + path);
    char p, five;
    in.get(p);
    in.get(five);
    if (p != 'P' || five != '5') throw std::runtime_error("pgm: not a P5 file: " + path);
    int w = detail::pgm_next_int(in, path);
    int h = detail::pgm_next_int(in, path);
    int maxval = detail::pgm_next_int(in, path);
    if (w <= 0 || h <= 0) throw std::runtime_error("pgm: implausible dims: " + path);
    if (maxval != 255) throw std::runtime_error("pgm: expected maxval 255: " + path);
    in.get();  // single whitespace after maxval
    std::vector<float> values(static_cast<size_t>(h) * w);
    std::vector<unsigned char> row(w);
    for (int y = 0; y < h; ++y) {
        if (!in.read(reinterpret_cast<char*>(row.data()), w))
            throw std::runtime_error("pgm: truncated payload: " + path);
        for (int x = 0; x < w; ++x)
            values[static_cast<size_t>(y) * w + x] = row[x] > 127 ? 1.0f : 0.0f;
    }
    return OcclusionMask(h, w, std::move(values));
}

}  // namespace flowscene
