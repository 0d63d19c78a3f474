#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "flowscene/grids.hpp"
#include "flowscene/parallel.hpp"

namespace flowscene {

/// Occlusion-weighted fusion of the current-frame volume with the aggregated
/// history volume:
///
///   V_fine = ((1 - V_mask) * V_agg + V_t) / ((1 - V_mask) + 1)
///
/// with the mask broadcast across channels. The denominator is >= 1 for masks in
/// [0,1]; the max(weight, 1e-6) guard keeps the map total if float error nudges a
/// mask value slightly out of range (values up to 1e-4 outside are clamped first,
/// anything further out is rejected).
inline VoxelGrid refine(const VoxelGrid& v_t, const VoxelGrid& v_agg, const VoxelGrid& v_mask) {
    if (!v_t.same_shape(v_agg))
        throw std::invalid_argument("refine: v_t and v_agg shapes differ");
    if (v_mask.channels != 1)
        throw std::invalid_argument("refine: v_mask must have one channel");
    if (v_mask.dims != v_t.dims)
        throw std::invalid_argument("refine: v_mask spatial dims differ");

    const size_t voxels = v_t.spec().voxel_count();
    std::vector<float> keep(voxels);  // 1 - mask after clamping
    for (size_t v = 0; v < voxels; ++v) {
        float m = v_mask.data[v];
        if (m < -1e-4f || m > 1.0f + 1e-4f)
            throw std::invalid_argument("refine: mask value outside [0,1]");
        keep[v] = 1.0f - std::clamp(m, 0.0f, 1.0f);
    }

    VoxelGrid out(v_t.channels, v_t.spec());
    parallel_for(0, v_t.channels, [&](int c) {
        const float* t = v_t.data.data() + static_cast<size_t>(c) * voxels;
        const float* agg = v_agg.data.data() + static_cast<size_t>(c) * voxels;
        float* dst = out.data.data() + static_cast<size_t>(c) * voxels;
        for (size_t v = 0; v < voxels; ++v) {
            float weight = std::max(keep[v] + 1.0f, 1e-6f);
            dst[v] = (keep[v] * agg[v] + t[v]) / weight;
        }
    });
    return out;
}

}  // namespace flowscene
