#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "planekit/geometry.hpp"
#include "planekit/image.hpp"

namespace planekit {

inline constexpr double kDefaultMaskThreshold = 0.5;
inline constexpr double kDefaultScoreMin = 0.3;

struct InstancePrediction {
    ScalarMap soft_mask;
    double score = 0;
    int class_id = 0;
    std::optional<PlaneParams> pooled_plane;
};

inline Mask binarize(const ScalarMap& soft_mask, double threshold = kDefaultMaskThreshold) {
    require(threshold > 0 && threshold < 1, Errc::invalid_input, "mask threshold must lie in (0, 1)");
    Mask out(soft_mask.height(), soft_mask.width());
    for (std::size_t i = 0; i < soft_mask.size(); ++i) {
        out[i] = soft_mask[i] > threshold ? 1 : 0;
    }
    return out;
}

/// Soft-mask weighted mean of the per-pixel planes inside the thresholded mask.
inline PlaneParams soft_pool(const VectorMap& plane_map, const ScalarMap& soft_mask,
                             double threshold = kDefaultMaskThreshold) {
    require(plane_map.channels() == 3 && plane_map.same_shape(soft_mask), Errc::invalid_input,
            "soft pooling shape mismatch");
    const Mask region = binarize(soft_mask, threshold);
    // Accumulated relative to the first member so a constant map pools exactly.
    std::optional<Vec3> anchor;
    Vec3 weighted = Vec3::Zero();
    double total = 0;
    for (std::size_t i = 0; i < region.size(); ++i) {
        if (!region[i]) {
            continue;
        }
        const auto px = plane_map.pixel(i);
        const Vec3 p(px[0], px[1], px[2]);
        if (!anchor) {
            anchor = p;
        }
        weighted += soft_mask[i] * (p - *anchor);
        total += soft_mask[i];
    }
    if (!anchor || !(total > 0)) {
        throw Error(Errc::empty_instance, "instance mask is empty after thresholding");
    }
    return {*anchor + weighted / total};
}

struct AssembledOutput {
    VectorMap plane_map;
    /// 1-based position in the instance list, 0 = per-pixel fallback.
    InstanceMap instances;
};

/// Paints pooled instance planes in descending score order; earlier instances
/// keep their pixels. Pixels no instance claims keep the per-pixel prediction.
/// Instances with an empty region are skipped.
inline AssembledOutput assemble_output(std::vector<InstancePrediction>& instances, const VectorMap& per_pixel,
                                       double threshold = kDefaultMaskThreshold, double score_min = kDefaultScoreMin) {
    require(per_pixel.channels() == 3, Errc::invalid_input, "per-pixel planes need 3 channels");
    for (std::size_t k = 1; k < instances.size(); ++k) {
        require(instances[k - 1].score >= instances[k].score, Errc::invalid_input,
                "instances must be sorted by descending score");
    }
    AssembledOutput out{per_pixel, InstanceMap(per_pixel.height(), per_pixel.width())};
    for (std::size_t k = 0; k < instances.size(); ++k) {
        auto& inst = instances[k];
        require(inst.soft_mask.same_shape(per_pixel), Errc::invalid_input, "soft mask shape mismatch");
        if (inst.score < score_min) {
            continue;
        }
        try {
            inst.pooled_plane = soft_pool(per_pixel, inst.soft_mask, threshold);
        } catch (const Error& e) {
            if (e.code() != Errc::empty_instance) {
                throw;
            }
            continue;
        }
        const Mask region = binarize(inst.soft_mask, threshold);
        for (std::size_t i = 0; i < region.size(); ++i) {
            if (region[i] && out.instances[i] == 0) {
                out.instances[i] = static_cast<std::int32_t>(k + 1);
                auto px = out.plane_map.pixel(i);
                for (int c = 0; c < 3; ++c) {
                    px[c] = inst.pooled_plane->p[c];
                }
            }
        }
    }
    return out;
}

} // namespace planekit
