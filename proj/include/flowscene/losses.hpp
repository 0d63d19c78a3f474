#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "flowscene/grids.hpp"
#include "flowscene/lift.hpp"

namespace flowscene {

constexpr double kLogClamp = 1e-12;

struct LossWeights {
    float lambda_sem = 1.0f;
    float lambda_geo = 1.0f;
    float lambda_ce = 1.0f;
    float lambda_d = 1.0f;

    void validate() const {
        for (float l : {lambda_sem, lambda_geo, lambda_ce, lambda_d}) {
            if (!(l >= 0.0f) || !std::isfinite(l))
                throw std::invalid_argument("LossWeights: coefficients must be finite and >= 0");
        }
    }
};

/// Per-voxel class probabilities over a K-way simplex, layout (c, x, y, z).
struct ProbabilityVolume {
    int classes = 0;
    std::array<int, 3> dims{0, 0, 0};
    std::vector<float> values;

    ProbabilityVolume() = default;

    ProbabilityVolume(int k, std::array<int, 3> d, std::vector<float> v)
        : classes(k), dims(d), values(std::move(v)) {
        detail::check_positive_dim(k, "ProbabilityVolume classes");
        detail::check_positive_dim(d[0], "ProbabilityVolume X");
        detail::check_positive_dim(d[1], "ProbabilityVolume Y");
        detail::check_positive_dim(d[2], "ProbabilityVolume Z");
        if (values.size() != static_cast<size_t>(k) * voxel_count())
            throw std::invalid_argument("ProbabilityVolume: data length does not match K*X*Y*Z");
        size_t n = voxel_count();
        for (size_t v = 0; v < n; ++v) {
            float s = 0.0f;
            for (int c = 0; c < k; ++c) {
                float p = values[c * n + v];
                if (!(p >= 0.0f) || !std::isfinite(p))
                    throw std::invalid_argument("ProbabilityVolume: probabilities must be finite and >= 0");
                s += p;
            }
            if (std::fabs(s - 1.0f) > 1e-4f)
                throw std::invalid_argument("ProbabilityVolume: per-voxel probabilities must sum to 1");
        }
    }

    size_t voxel_count() const { return static_cast<size_t>(dims[0]) * dims[1] * dims[2]; }
    size_t index(int c, int x, int y, int z) const {
        return ((static_cast<size_t>(c) * dims[0] + x) * dims[1] + y) * dims[2] + z;
    }
    float at(int c, int x, int y, int z) const { return values[index(c, x, y, z)]; }
};

enum class ScalMode { semantic, geometric };

namespace detail {

inline double clamped_log(double v) { return std::log(std::max(v, kLogClamp)); }

}  // namespace detail

/// Scene-class affinity loss: mean over classes present in the ground truth of
/// -[log precision + log recall + log specificity], computed from soft
/// prediction mass. Geometric mode scores the occupied/empty binarization.
/// Classes absent from the ground truth are skipped (their ids are appended to
/// `skipped` when given); a specificity term with no negatives is dropped.
inline double scal_loss(const ProbabilityVolume& pred, const SemanticVoxelGrid& gt, ScalMode mode,
                        std::vector<int>* skipped = nullptr) {
    if (pred.dims != gt.dims) throw std::invalid_argument("scal_loss: dims differ");
    if (pred.classes != gt.num_classes)
        throw std::invalid_argument("scal_loss: class counts differ");
    const size_t n = pred.voxel_count();
    const int k = mode == ScalMode::semantic ? pred.classes : 2;

    size_t valid_count = 0;
    for (size_t v = 0; v < n; ++v)
        if (gt.valid[v]) ++valid_count;
    if (valid_count == 0) throw std::invalid_argument("scal_loss: no valid voxels");

    double total = 0.0;
    int present = 0;
    for (int c = 0; c < k; ++c) {
        double sum_p = 0.0, sum_p_pos = 0.0, sum_not_p_neg = 0.0;
        uint64_t pos = 0;
        for (size_t v = 0; v < n; ++v) {
            if (gt.valid[v] == 0) continue;
            double p;
            bool is_c;
            if (mode == ScalMode::semantic) {
                p = pred.values[static_cast<size_t>(c) * n + v];
                is_c = gt.labels[v] == c;
            } else {
                // Binarized: class 1 = occupied (any nonzero label), class 0 = empty.
                double p_empty = pred.values[v];
                p = c == 0 ? p_empty : 1.0 - p_empty;
                is_c = (gt.labels[v] != 0) == (c == 1);
            }
            sum_p += p;
            if (is_c) {
                sum_p_pos += p;
                ++pos;
            } else {
                sum_not_p_neg += 1.0 - p;
            }
        }
        if (pos == 0) {
            if (skipped) skipped->push_back(c);
            continue;
        }
        double loss_c = 0.0;
        loss_c -= detail::clamped_log(sum_p > 0.0 ? sum_p_pos / sum_p : 0.0);  // precision
        loss_c -= detail::clamped_log(sum_p_pos / static_cast<double>(pos));   // recall
        uint64_t neg = valid_count - pos;
        if (neg > 0)
            loss_c -= detail::clamped_log(sum_not_p_neg / static_cast<double>(neg));  // specificity
        total += loss_c;
        ++present;
    }
    if (present == 0) throw std::invalid_argument("scal_loss: no class present in ground truth");
    return total / present;
}

/// Mean over valid voxels of -w[gt] * log p(gt); log clamped at 1e-12.
inline double weighted_ce(const ProbabilityVolume& pred, const SemanticVoxelGrid& gt,
                          const std::vector<float>& class_weights) {
    if (pred.dims != gt.dims) throw std::invalid_argument("weighted_ce: dims differ");
    if (pred.classes != gt.num_classes)
        throw std::invalid_argument("weighted_ce: class counts differ");
    if (class_weights.size() != static_cast<size_t>(pred.classes))
        throw std::invalid_argument("weighted_ce: need one weight per class");
    for (float w : class_weights)
        if (!(w > 0.0f) || !std::isfinite(w))
            throw std::invalid_argument("weighted_ce: weights must be finite and > 0");
    const size_t n = pred.voxel_count();
    double total = 0.0;
    uint64_t count = 0;
    for (size_t v = 0; v < n; ++v) {
        if (gt.valid[v] == 0) continue;
        uint16_t g = gt.labels[v];
        total -= class_weights[g] * detail::clamped_log(pred.values[static_cast<size_t>(g) * n + v]);
        ++count;
    }
    if (count == 0) throw std::invalid_argument("weighted_ce: no valid voxels");
    return total / static_cast<double>(count);
}

/// Mean per-bin binary cross-entropy over supervised pixels. `supervised` is an
/// H*W plane of 0/1 flags; the one-arg-less overload supervises every pixel.
/// Target must be one-hot at each supervised pixel.
inline double depth_bce(const DepthDistribution& pred, const DepthDistribution& target,
                        const std::vector<uint8_t>& supervised) {
    if (pred.bins != target.bins || pred.height != target.height || pred.width != target.width)
        throw std::invalid_argument("depth_bce: shapes differ");
    const size_t plane = static_cast<size_t>(pred.height) * pred.width;
    if (supervised.size() != plane)
        throw std::invalid_argument("depth_bce: supervision plane shape differs");
    double total = 0.0;
    uint64_t count = 0;
    for (size_t p = 0; p < plane; ++p) {
        if (supervised[p] == 0) continue;
        int ones = 0;
        double pixel = 0.0;
        for (int d = 0; d < pred.bins; ++d) {
            float t = target.values[d * plane + p];
            if (t != 0.0f && t != 1.0f)
                throw std::invalid_argument("depth_bce: target must be one-hot at supervised pixels");
            if (t == 1.0f) ++ones;
            double q = pred.values[d * plane + p];
            pixel -= t == 1.0f ? detail::clamped_log(q) : detail::clamped_log(1.0 - q);
        }
        if (ones != 1)
            throw std::invalid_argument("depth_bce: target must be one-hot at supervised pixels");
        total += pixel / pred.bins;
        ++count;
    }
    if (count == 0) throw std::invalid_argument("depth_bce: no supervised pixels");
    return total / static_cast<double>(count);
}

inline double depth_bce(const DepthDistribution& pred, const DepthDistribution& target) {
    std::vector<uint8_t> all(static_cast<size_t>(pred.height) * pred.width, 1);
    return depth_bce(pred, target, all);
}

struct LossParts {
    double sem_scal = 0.0;
    double geo_scal = 0.0;
    double ce = 0.0;
    double depth = 0.0;
};

inline double total_loss(const LossParts& parts, const LossWeights& w) {
    w.validate();
    return w.lambda_sem * parts.sem_scal + w.lambda_geo * parts.geo_scal + w.lambda_ce * parts.ce +
           w.lambda_d * parts.depth;
}

}  // namespace flowscene
