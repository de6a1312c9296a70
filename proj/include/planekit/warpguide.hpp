#pragma once

// Multi-view plane feature guidance: neighbour features are warped onto the
// source grid with ground-truth depth, decoded by the plane head, moved into
// source camera coordinates and supervised by the source ground truth.

#include <optional>
#include <vector>

#include "planekit/geometry.hpp"
#include "planekit/losses.hpp"
#include "planekit/planehead.hpp"
#include "planekit/synth.hpp"

namespace planekit {

inline constexpr int kDefaultFeatureStride = 4;

/// A view resampled onto its feature grid (every stride-th pixel).
struct FeatureView {
    CameraIntrinsics camera;
    ScalarMap depth;
    VectorMap plane_map;
    InstanceMap instances;
    VectorMap rgb;
    ScalarMap edge;
};

template <typename T>
Image<T> subsample(const Image<T>& full, int stride) {
    require(stride >= 1 && full.height() % stride == 0 && full.width() % stride == 0, Errc::invalid_input,
            "image size must be divisible by the feature stride");
    Image<T> out(full.height() / stride, full.width() / stride, full.channels());
    for (int r = 0; r < out.height(); ++r) {
        for (int c = 0; c < out.width(); ++c) {
            for (int ch = 0; ch < full.channels(); ++ch) {
                out(r, c, ch) = full(r * stride, c * stride, ch);
            }
        }
    }
    return out;
}

/// Grid points sit on full-resolution pixel centers, so bilinear resampling
/// there reduces to picking the pixel and the ground truth stays exact.
inline FeatureView feature_view(const RenderedView& view, int stride) {
    return {view.camera.subsampled(stride), subsample(view.depth, stride), subsample(view.plane_map, stride),
            subsample(view.instances, stride), subsample(view.rgb, stride), subsample(image_gradient(view.rgb), stride)};
}

inline int feature_stride(const RenderedView& view, const VectorMap& features) {
    require(features.width() > 0 && view.camera.width % features.width() == 0, Errc::invalid_input,
            "feature width must divide the image width");
    const int stride = view.camera.width / features.width();
    require(features.height() * stride == view.camera.height, Errc::invalid_input,
            "feature map must be the image size divided by one stride");
    return stride;
}

struct WarpGuidanceConfig {
    double occlusion_tol = kDefaultOcclusionTolerance;
    bool include_self_loss = true;
    double guidance_weight = 1.0;
    LossWeights weights;

    void validate() const {
        require(occlusion_tol > 0, Errc::invalid_input, "occlusion tolerance must be positive");
        require(guidance_weight >= 0, Errc::invalid_input, "guidance weight must be non-negative");
        weights.validate();
    }
};

struct WarpedFeatures {
    VectorMap features;
    Mask outproj;
    WarpGrid grid;
};

inline WarpedFeatures warp_features(const StereoSample& sample, const VectorMap& nbr_features,
                                    double occlusion_tol = kDefaultOcclusionTolerance) {
    const int stride = feature_stride(sample.neighbour, nbr_features);
    require(sample.source.camera.width == sample.neighbour.camera.width &&
                sample.source.camera.height == sample.neighbour.camera.height,
            Errc::invalid_input, "source and neighbour views differ in size");
    const CameraIntrinsics k_src = sample.source.camera.subsampled(stride);
    const CameraIntrinsics k_nbr = sample.neighbour.camera.subsampled(stride);
    const ScalarMap depth_src = subsample(sample.source.depth, stride);
    const ScalarMap depth_nbr = subsample(sample.neighbour.depth, stride);
    WarpedFeatures out;
    out.grid = compute_warp_grid(k_src, k_nbr, depth_src, sample.src_to_nbr);
    out.features = bilinear_sample(nbr_features, out.grid).values;
    out.outproj = outprojection_mask(out.grid, depth_src, depth_nbr, occlusion_tol);
    return out;
}

struct HeadLossResult {
    LossReport report;
    std::vector<double> param_grad;
};

inline void add_report(LossReport& acc, const LossReport& term, double weight) {
    acc.l_plane += weight * term.l_plane;
    acc.l_surface += weight * term.l_surface;
    acc.l_geom += weight * term.l_geom;
    acc.l_depth += weight * term.l_depth;
    acc.l_p += weight * term.l_p;
    acc.l_mask += weight * term.l_mask;
    acc.l_category += weight * term.l_category;
    acc.l_total += weight * term.l_total;
    acc.valid_pixel_count += term.valid_pixel_count;
    acc.excluded_pixel_count += term.excluded_pixel_count;
}

/// Single-view L_P of the head decoded on the view's own features.
inline HeadLossResult view_plane_loss(const FeatureView& view, const VectorMap& features, const PlaneHead& head,
                                      const LossWeights& weights) {
    require(features.same_shape(view.depth), Errc::invalid_input, "features do not match the feature grid");
    const VectorMap pred = head_forward(head, features);
    const auto loss = total_plane_loss(pred, view.plane_map, view.depth, view.camera, nullptr, weights, &view.edge);
    return {loss.report, head_backward(head, features, loss.grad).params};
}

inline HeadLossResult view_plane_loss(const RenderedView& view, const VectorMap& features, const PlaneHead& head,
                                      const LossWeights& weights) {
    return view_plane_loss(feature_view(view, feature_stride(view, features)), features, head, weights);
}

/// Pixels whose bilinear taps all fall inside one segment of `segments`
/// (sampled at the grid coordinates; 0 counts as a segment of its own).
inline Mask segment_mask(const WarpGrid& grid, const InstanceMap& segments) {
    Mask out(grid.height, grid.width);
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (!grid.valid[i]) {
            continue;
        }
        const auto t = detail::taps(segments.height(), segments.width(), grid.coords[2 * i], grid.coords[2 * i + 1]);
        const auto id = segments(t.y0, t.x0, 0);
        out[i] = segments(t.y0, t.x1, 0) == id && segments(t.y1, t.x0, 0) == id && segments(t.y1, t.x1, 0) == id;
    }
    return out;
}

/// Everything in the guidance path that depends only on ground truth: the
/// source feature grid, the warped neighbour features and the pixels that
/// contribute (the outprojection mask unless restricted further).
struct GuidancePlan {
    FeatureView source;
    WarpedFeatures warped;
    RigidTransform nbr_to_src;
    Mask mask;

    /// Drops pixels whose warped feature blends several segments of the
    /// neighbour's instance map.
    void restrict_to_segments(const InstanceMap& neighbour_instances) {
        const int stride = neighbour_instances.width() / warped.features.width();
        const Mask inside = segment_mask(warped.grid, subsample(neighbour_instances, stride));
        for (std::size_t i = 0; i < mask.size(); ++i) {
            mask[i] = mask[i] && inside[i];
        }
    }
};

inline GuidancePlan prepare_guidance(const StereoSample& sample, const VectorMap& nbr_features,
                                     double occlusion_tol = kDefaultOcclusionTolerance) {
    const int stride = feature_stride(sample.neighbour, nbr_features);
    GuidancePlan plan{feature_view(sample.source, stride), warp_features(sample, nbr_features, occlusion_tol),
                      sample.nbr_to_src, {}};
    plan.mask = plan.warped.outproj;
    return plan;
}

struct GuidanceResult {
    /// guidance_weight * guidance (+ self when enabled).
    LossReport report;
    LossReport guidance;
    std::optional<LossReport> self;
    std::vector<double> param_grad;
    Mask outproj;
    /// Pixels whose transformed plane crossed the source camera center.
    std::size_t transform_excluded = 0;
};

struct PlaneGuidance {
    PlaneLossResult loss;
    /// dL/dp for the neighbour-frame planes, zero outside `usable`.
    VectorMap upstream;
    Mask usable;
    std::size_t transform_excluded = 0;
};

/// Moves neighbour-frame planes on the guidance grid into the source frame
/// and compares them with the source ground truth on plan.mask.
inline PlaneGuidance guidance_from_planes(const GuidancePlan& plan, const VectorMap& pred_nbr,
                                          const WarpGuidanceConfig& cfg) {
    require(pred_nbr.channels() == 3 && pred_nbr.same_shape(plan.mask), Errc::invalid_input,
            "decoded planes do not match the guidance grid");
    require(count(plan.mask) > 0, Errc::empty_loss, "outprojection mask is empty");
    PlaneGuidance out{{}, VectorMap(pred_nbr.height(), pred_nbr.width(), 3), plan.mask, 0};
    VectorMap pred_src(pred_nbr.height(), pred_nbr.width(), 3);
    for (std::size_t i = 0; i < out.usable.size(); ++i) {
        if (!out.usable[i]) {
            continue;
        }
        const auto moved = try_transform_plane(plan.nbr_to_src, detail::at3(pred_nbr, i));
        if (!moved) {
            out.usable[i] = 0;
            ++out.transform_excluded;
            continue;
        }
        detail::put3(pred_src, i, *moved);
    }
    require(count(out.usable) > 0, Errc::empty_loss, "no pixel survives the plane transform");

    const FeatureView& src = plan.source;
    out.loss = total_plane_loss(pred_src, src.plane_map, src.depth, src.camera, &out.usable, cfg.weights, &src.edge);
    for (std::size_t i = 0; i < out.usable.size(); ++i) {
        if (out.usable[i]) {
            const Vec3 g = cfg.guidance_weight * detail::at3(out.loss.grad, i);
            detail::put3(out.upstream, i, transform_plane_vjp(plan.nbr_to_src, detail::at3(pred_nbr, i), g));
        }
    }
    out.loss.report.excluded_pixel_count += out.transform_excluded;
    return out;
}

/// Guidance term only (no self loss): decode, move planes into the source
/// frame, compare with source ground truth on the plan's mask.
inline GuidanceResult guidance_term(const GuidancePlan& plan, const PlaneHead& head, const WarpGuidanceConfig& cfg) {
    cfg.validate();
    const VectorMap pred_nbr = head_forward(head, plan.warped.features);
    const PlaneGuidance g = guidance_from_planes(plan, pred_nbr, cfg);
    GuidanceResult out;
    out.outproj = plan.warped.outproj;
    out.transform_excluded = g.transform_excluded;
    out.guidance = g.loss.report;
    out.param_grad = head_backward(head, plan.warped.features, g.upstream).params;
    add_report(out.report, out.guidance, cfg.guidance_weight);
    return out;
}

/// Full guidance loss. `src_features` is required when cfg.include_self_loss
/// is set; the source-view loss is then added to the guidance term.
inline GuidanceResult guidance_loss(const StereoSample& sample, const VectorMap& nbr_features, const PlaneHead& head,
                                    const WarpGuidanceConfig& cfg, const VectorMap* src_features = nullptr) {
    cfg.validate();
    const GuidancePlan plan = prepare_guidance(sample, nbr_features, cfg.occlusion_tol);
    GuidanceResult out = guidance_term(plan, head, cfg);
    if (cfg.include_self_loss) {
        require(src_features != nullptr, Errc::invalid_input, "self loss needs source features");
        auto self = view_plane_loss(plan.source, *src_features, head, cfg.weights);
        for (std::size_t k = 0; k < out.param_grad.size(); ++k) {
            out.param_grad[k] += self.param_grad[k];
        }
        add_report(out.report, self.report, 1.0);
        out.self = self.report;
    }
    return out;
}

} // namespace planekit
