#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "flowscene/grids.hpp"

namespace flowscene {

/// K x K counts, rows = ground truth, cols = prediction. Only valid voxels are counted.
struct ConfusionMatrix {
    int classes = 0;
    std::vector<uint64_t> counts;

    ConfusionMatrix() = default;

    explicit ConfusionMatrix(int k) : classes(k) {
        detail::check_positive_dim(k, "ConfusionMatrix classes");
        counts.assign(static_cast<size_t>(k) * k, 0);
    }

    uint64_t& at(int gt, int pred) { return counts[static_cast<size_t>(gt) * classes + pred]; }
    uint64_t at(int gt, int pred) const { return counts[static_cast<size_t>(gt) * classes + pred]; }

    uint64_t total() const {
        uint64_t s = 0;
        for (uint64_t c : counts) s += c;
        return s;
    }
    uint64_t row_sum(int gt) const {
        uint64_t s = 0;
        for (int p = 0; p < classes; ++p) s += at(gt, p);
        return s;
    }
    uint64_t col_sum(int pred) const {
        uint64_t s = 0;
        for (int g = 0; g < classes; ++g) s += at(g, pred);
        return s;
    }

    ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
        if (classes != o.classes)
            throw std::invalid_argument("ConfusionMatrix: cannot merge different class counts");
        for (size_t i = 0; i < counts.size(); ++i) counts[i] += o.counts[i];
        return *this;
    }
};

inline ConfusionMatrix confusion(const SemanticVoxelGrid& pred, const SemanticVoxelGrid& gt) {
    if (pred.dims != gt.dims) throw std::invalid_argument("confusion: grid dims differ");
    int k = std::max(pred.num_classes, gt.num_classes);
    ConfusionMatrix cm(k);
    for (size_t v = 0; v < gt.labels.size(); ++v) {
        if (gt.valid[v] == 0) continue;
        uint16_t g = gt.labels[v];
        uint16_t p = pred.labels[v];
        if (g >= k || p >= k)
            throw std::invalid_argument("confusion: label exceeds class count");
        ++cm.counts[static_cast<size_t>(g) * k + p];
    }
    return cm;
}

/// A ratio that may be undefined (zero denominator); undefined scores carry 0.
struct Score {
    double value = 0.0;
    bool defined = false;
};

/// Occupied-vs-empty IoU: positive = any nonzero class.
inline Score geometric_iou(const ConfusionMatrix& cm) {
    uint64_t tp = 0, fp = 0, fn = 0;
    for (int g = 0; g < cm.classes; ++g) {
        for (int p = 0; p < cm.classes; ++p) {
            uint64_t n = cm.at(g, p);
            bool occ_gt = g != 0, occ_pred = p != 0;
            if (occ_gt && occ_pred) tp += n;
            else if (!occ_gt && occ_pred) fp += n;
            else if (occ_gt && !occ_pred) fn += n;
        }
    }
    uint64_t denom = tp + fp + fn;
    if (denom == 0) return Score{0.0, false};
    return Score{static_cast<double>(tp) / static_cast<double>(denom), true};
}

struct MiouResult {
    std::vector<Score> per_class;  // size K; entry c is class c; class 0 never participates
    double mean = 0.0;
    bool defined = false;  // false when no class 1..K-1 has a nonzero denominator
};

/// Per-class IoU over classes 1..K-1; zero-denominator classes are excluded from the mean.
inline MiouResult miou(const ConfusionMatrix& cm) {
    MiouResult r;
    r.per_class.assign(cm.classes, Score{});
    double sum = 0.0;
    int n = 0;
    for (int c = 1; c < cm.classes; ++c) {
        uint64_t inter = cm.at(c, c);
        uint64_t denom = cm.row_sum(c) + cm.col_sum(c) - inter;
        if (denom == 0) continue;
        r.per_class[c] = Score{static_cast<double>(inter) / static_cast<double>(denom), true};
        sum += r.per_class[c].value;
        ++n;
    }
    if (n > 0) {
        r.mean = sum / n;
        r.defined = true;
    }
    return r;
}

struct PrecisionRecall {
    std::vector<Score> precision;  // size K
    std::vector<Score> recall;
};

inline PrecisionRecall precision_recall(const ConfusionMatrix& cm) {
    PrecisionRecall pr;
    pr.precision.assign(cm.classes, Score{});
    pr.recall.assign(cm.classes, Score{});
    for (int c = 0; c < cm.classes; ++c) {
        uint64_t diag = cm.at(c, c);
        uint64_t col = cm.col_sum(c);
        uint64_t row = cm.row_sum(c);
        if (col > 0) pr.precision[c] = Score{static_cast<double>(diag) / col, true};
        if (row > 0) pr.recall[c] = Score{static_cast<double>(diag) / row, true};
    }
    return pr;
}

/// Marks voxels beyond range_m along the forward (X) axis invalid; a slab stays
/// valid only if it lies entirely within range. Dims are unchanged.
inline SemanticVoxelGrid range_crop(const SemanticVoxelGrid& grid, float range_m,
                                    float voxel_size = 0.2f) {
    if (!(range_m > 0.0f) || !std::isfinite(range_m))
        throw std::invalid_argument("range_crop: range must be > 0");
    if (!(voxel_size > 0.0f) || !std::isfinite(voxel_size))
        throw std::invalid_argument("range_crop: voxel size must be > 0");
    float extent = grid.dims[0] * voxel_size;
    if (range_m > extent + 1e-6f)
        throw std::invalid_argument("range_crop: range exceeds the grid extent");
    SemanticVoxelGrid out = grid;
    size_t slab = static_cast<size_t>(grid.dims[1]) * grid.dims[2];
    for (int x = 0; x < grid.dims[0]; ++x) {
        if ((x + 1) * voxel_size <= range_m + 1e-6f) continue;
        std::fill(out.valid.begin() + x * slab, out.valid.begin() + (x + 1) * slab,
                  static_cast<uint8_t>(0));
    }
    return out;
}

struct SplitMiou {
    Score dynamic_miou;
    Score static_miou;
};

/// Means of per-class IoU over the dynamic set and its complement in 1..K-1.
inline SplitMiou class_split_miou(const ConfusionMatrix& cm, const std::set<int>& dynamic_classes) {
    for (int c : dynamic_classes) {
        if (c < 1 || c >= cm.classes)
            throw std::invalid_argument("class_split_miou: class id " + std::to_string(c) +
                                        " outside 1.." + std::to_string(cm.classes - 1));
    }
    MiouResult m = miou(cm);
    SplitMiou out;
    double dyn_sum = 0.0, sta_sum = 0.0;
    int dyn_n = 0, sta_n = 0;
    for (int c = 1; c < cm.classes; ++c) {
        if (!m.per_class[c].defined) continue;
        if (dynamic_classes.count(c)) {
            dyn_sum += m.per_class[c].value;
            ++dyn_n;
        } else {
            sta_sum += m.per_class[c].value;
            ++sta_n;
        }
    }
    if (dyn_n > 0) out.dynamic_miou = Score{dyn_sum / dyn_n, true};
    if (sta_n > 0) out.static_miou = Score{sta_sum / sta_n, true};
    return out;
}

/// Label ids 1..7: the classes likely to move (vehicles, riders, people) under
/// the usual 19-class outdoor remapping.
inline const std::set<int>& default_dynamic_classes() {
    static const std::set<int> ids{1, 2, 3, 4, 5, 6, 7};
    return ids;
}

namespace detail {

inline nlohmann::json score_json(const Score& s) {
    return s.defined ? nlohmann::json(s.value) : nlohmann::json(nullptr);
}

}  // namespace detail

/// Full evaluation report. Range entries are emitted only for ranges the grid
/// actually covers; dynamic ids outside 1..K-1 are ignored for the split.
inline nlohmann::json metrics_report(const SemanticVoxelGrid& pred, const SemanticVoxelGrid& gt,
                                     float voxel_size = 0.2f,
                                     const std::set<int>& dynamic_classes = default_dynamic_classes(),
                                     const std::vector<float>& ranges = {12.8f, 25.6f, 51.2f}) {
    ConfusionMatrix cm = confusion(pred, gt);
    MiouResult m = miou(cm);
    PrecisionRecall pr = precision_recall(cm);

    nlohmann::json j;
    j["iou"] = detail::score_json(geometric_iou(cm));
    j["miou"] = m.defined ? nlohmann::json(m.mean) : nlohmann::json(nullptr);
    j["per_class"] = nlohmann::json::array();
    for (int c = 1; c < cm.classes; ++c) {
        j["per_class"].push_back({{"class", c},
                                  {"iou", detail::score_json(m.per_class[c])},
                                  {"precision", detail::score_json(pr.precision[c])},
                                  {"recall", detail::score_json(pr.recall[c])}});
    }

    std::set<int> dyn;
    for (int c : dynamic_classes)
        if (c >= 1 && c < cm.classes) dyn.insert(c);
    SplitMiou split = class_split_miou(cm, dyn);
    j["splits"] = {{"dynamic", detail::score_json(split.dynamic_miou)},
                   {"static", detail::score_json(split.static_miou)}};

    j["ranges"] = nlohmann::json::object();
    float extent = gt.dims[0] * voxel_size;
    for (float r : ranges) {
        if (r > extent + 1e-6f) continue;
        ConfusionMatrix rcm = confusion(pred, range_crop(gt, r, voxel_size));
        MiouResult rm = miou(rcm);
        char key[32];
        std::snprintf(key, sizeof key, "%.1f", r);
        j["ranges"][key] = {{"iou", detail::score_json(geometric_iou(rcm))},
                            {"miou", rm.defined ? nlohmann::json(rm.mean) : nlohmann::json(nullptr)}};
    }
    return j;
}

}  // namespace flowscene
