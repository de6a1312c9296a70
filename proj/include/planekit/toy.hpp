#pragma once

// Desk-scale training of the plane head on synthetic pairs, with and without
// multi-view guidance.

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <vector>

#include "planekit/losses.hpp"
#include "planekit/planehead.hpp"
#include "planekit/synth.hpp"
#include "planekit/warpguide.hpp"

namespace planekit {

inline constexpr int kToyFeatureChannels = 8;
inline constexpr double kToyPlaneScale = 0.25;
inline constexpr double kToyOutputInitScale = 0.05;

/// Per-pixel features on the stride grid: normalized pixel position, RGB and
/// the scaled plane coefficients of the view,
/// a noise-free stand-in for what a backbone would extract. `view` must carry
/// complete plane labels.
inline VectorMap make_toy_features(const RenderedView& view, int stride) {
    const FeatureView fv = feature_view(view, stride);
    const int h = fv.depth.height();
    const int w = fv.depth.width();
    VectorMap f(h, w, kToyFeatureChannels);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            auto px = f.pixel(r, c);
            px[0] = w > 1 ? 2.0 * c / (w - 1) - 1.0 : 0.0;
            px[1] = h > 1 ? 2.0 * r / (h - 1) - 1.0 : 0.0;
            for (int k = 0; k < 3; ++k) {
                px[2 + k] = fv.rgb(r, c, k);
            }
            for (int k = 0; k < 3; ++k) {
                px[5 + k] = kToyPlaneScale * fv.plane_map(r, c, k);
            }
        }
    }
    return f;
}

/// One training pair. `sample.source` may have dropped labels; `source_full`
/// keeps the complete labels for evaluation.
struct ToyPair {
    StereoSample sample;
    RenderedView source_full;
    VectorMap src_features;
    VectorMap nbr_features;
};

inline ToyPair make_toy_pair(const StereoSample& sample, const RenderedView& source_full,
                             const RenderedView& neighbour_full, int stride) {
    return {sample, source_full, make_toy_features(source_full, stride), make_toy_features(neighbour_full, stride)};
}

struct ToyConfig {
    int steps = 2000;
    double learning_rate = 3e-3;
    bool guidance = true;
    /// Skip warped features that blend several instance segments of the
    /// view they were sampled from.
    bool segment_guidance = true;
    bool gradient_weighting = false;
    EdgeWeighting edge_weighting = EdgeWeighting::literal;
    std::uint64_t seed = 0;
    int hidden = 32;
    double occlusion_tol = kDefaultOcclusionTolerance;
    /// Global gradient norm cap applied before each optimizer step; 0 disables.
    double max_grad_norm = 20.0;
};

inline LossWeights toy_weights(const ToyConfig& cfg) {
    LossWeights w;
    w.gradient_weighting = cfg.gradient_weighting;
    w.edge_weighting = cfg.edge_weighting;
    return w;
}

inline PlaneHead initial_toy_head(const ToyConfig& cfg) {
    // Small output weights keep every initial plane close to the fronto-parallel
    // bias, in front of the camera for all pixels.
    PlaneHead head = PlaneHead::random(kToyFeatureChannels, cfg.hidden, cfg.seed, {0.0, 0.0, 2.0});
    for (int o = 0; o < 3; ++o) {
        for (int j = 0; j < cfg.hidden; ++j) {
            head.w2(o, j) *= kToyOutputInitScale;
        }
    }
    return head;
}

/// Loss and gradient of one training step over all pairs (mean over pairs).
class ToyObjective {
public:
    ToyObjective(const std::vector<ToyPair>& pairs, const ToyConfig& cfg) : pairs_(pairs), cfg_(cfg) {
        require(!pairs.empty(), Errc::invalid_input, "training needs at least one pair");
        guidance_cfg_.occlusion_tol = cfg.occlusion_tol;
        guidance_cfg_.include_self_loss = false;
        guidance_cfg_.weights = toy_weights(cfg);
        for (const auto& pair : pairs) {
            const int stride = feature_stride(pair.sample.source, pair.src_features);
            source_views_.push_back(feature_view(pair.sample.source, stride));
            if (cfg.guidance) {
                to_source_.push_back(prepare_guidance(pair.sample, pair.nbr_features, cfg.occlusion_tol));
                to_neighbour_.push_back(
                    prepare_guidance(swapped(pair.sample), pair.src_features, cfg.occlusion_tol));
                if (cfg.segment_guidance) {
                    to_source_.back().restrict_to_segments(pair.sample.neighbour.instances);
                    to_neighbour_.back().restrict_to_segments(pair.sample.source.instances);
                }
            }
        }
    }

    HeadLossResult evaluate(const PlaneHead& head) const {
        HeadLossResult total{{}, std::vector<double>(head.params.size(), 0.0)};
        const double inv = 1.0 / static_cast<double>(pairs_.size());
        auto add = [&](const LossReport& r, const std::vector<double>& g) {
            add_report(total.report, r, inv);
            for (std::size_t k = 0; k < g.size(); ++k) {
                total.param_grad[k] += inv * g[k];
            }
        };
        for (std::size_t i = 0; i < pairs_.size(); ++i) {
            const auto self = view_plane_loss(source_views_[i], pairs_[i].src_features, head, guidance_cfg_.weights);
            add(self.report, self.param_grad);
            if (cfg_.guidance) {
                // Both directions: neighbour features supervised by source
                // labels and source features supervised by neighbour labels.
                for (const auto* plan : {&to_source_[i], &to_neighbour_[i]}) {
                    if (count(plan->mask) == 0) {
                        continue;
                    }
                    const auto g = guidance_term(*plan, head, guidance_cfg_);
                    add(g.report, g.param_grad);
                }
            }
        }
        return total;
    }

private:
    const std::vector<ToyPair>& pairs_;
    ToyConfig cfg_;
    WarpGuidanceConfig guidance_cfg_;
    std::vector<FeatureView> source_views_;
    std::vector<GuidancePlan> to_source_;
    std::vector<GuidancePlan> to_neighbour_;
};

/// Adam training. `on_step(step, report)` sees the loss before each update and
/// once more after the last one (step == cfg.steps).
inline PlaneHead train_toy(const std::vector<ToyPair>& pairs, const ToyConfig& cfg,
                           const std::function<void(int, const LossReport&)>& on_step = {}) {
    require(cfg.steps >= 0 && cfg.learning_rate > 0 && cfg.max_grad_norm >= 0, Errc::invalid_input,
            "steps and max_grad_norm must be >= 0 and lr > 0");
    const ToyObjective objective(pairs, cfg);
    PlaneHead head = initial_toy_head(cfg);
    AdamState adam = AdamState::for_head(head, cfg.learning_rate);
    for (int step = 0; step <= cfg.steps; ++step) {
        const auto result = objective.evaluate(head);
        if (on_step) {
            on_step(step, result.report);
        }
        if (step == cfg.steps) {
            break;
        }
        std::vector<double> grad = result.param_grad;
        const double norm = std::sqrt(std::inner_product(grad.begin(), grad.end(), grad.begin(), 0.0));
        // Rays grazing a predicted plane make the induced depth blow up.
        if (cfg.max_grad_norm > 0 && norm > cfg.max_grad_norm) {
            for (auto& g : grad) {
                g *= cfg.max_grad_norm / norm;
            }
        }
        optimizer_step(head, grad, adam);
    }
    return head;
}

struct ToyEvaluation {
    /// Mean |D - D*| / D of plane-induced depth over labeled pixels; pixels
    /// whose predicted plane induces no positive depth count as 1.
    double abs_rel = 0;
    double l_surface = 0;
    /// Mean |p - p*|_1 over the evaluated pixels.
    double plane_l1 = 0;
    std::size_t pixels = 0;
};

/// Scores the head against `labels` on pixels where `region` is set (all
/// labeled pixels when null).
inline ToyEvaluation evaluate_toy(const PlaneHead& head, const RenderedView& labels, const VectorMap& features,
                                  const Mask* region = nullptr) {
    const int stride = feature_stride(labels, features);
    const FeatureView fv = feature_view(labels, stride);
    const VectorMap pred = head_forward(head, features);
    ToyEvaluation e;
    const int w = pred.width();
    for (std::size_t i = 0; i < pred.pixels(); ++i) {
        if (fv.instances[i] <= 0 || !is_set(region, i)) {
            continue;
        }
        const Vec3 p = detail::at3(pred, i);
        const Vec3 g = detail::at3(fv.plane_map, i);
        const auto depth = try_plane_induced_depth(fv.camera, p, static_cast<double>(i % w), static_cast<double>(i / w));
        e.abs_rel += depth && *depth > 0 ? std::abs(fv.depth[i] - *depth) / fv.depth[i] : 1.0;
        const double np = p.norm();
        e.l_surface += np > 0 ? 1.0 - p.dot(g) / (np * g.norm()) : 1.0;
        e.plane_l1 += (p - g).cwiseAbs().sum();
        ++e.pixels;
    }
    if (e.pixels > 0) {
        const double inv = 1.0 / static_cast<double>(e.pixels);
        e.abs_rel *= inv;
        e.l_surface *= inv;
        e.plane_l1 *= inv;
    }
    return e;
}

/// Feature-grid pixels whose label was dropped from `dropped` but present in `full`.
inline Mask dropped_region(const RenderedView& full, const RenderedView& dropped, int stride) {
    const InstanceMap a = subsample(full.instances, stride);
    const InstanceMap b = subsample(dropped.instances, stride);
    Mask m(a.height(), a.width());
    for (std::size_t i = 0; i < a.size(); ++i) {
        m[i] = a[i] > 0 && b[i] == 0 ? 1 : 0;
    }
    return m;
}

/// Deterministic synthetic pair set: scene seed_base + i, camera from the same stream.
struct ToyDatasetSpec {
    int pairs = 16;
    int width = 64;
    int height = 48;
    int boxes = 3;
    std::uint64_t seed = 0;
    Vec3 baseline = Vec3(kDefaultBaseline, 0, 0);
    double yaw_deg = kDefaultYawDegrees;
    double drop_prob = 0;
    int stride = kDefaultFeatureStride;
};

struct RenderedPair {
    StereoSample sample;
    RenderedView source_full;
};

inline RenderedPair render_dataset_pair(const ToyDatasetSpec& spec, int index) {
    const std::uint64_t scene_seed = mix_seed(spec.seed, static_cast<std::uint64_t>(index));
    const PlanarScene scene = generate_scene(scene_seed, spec.boxes);
    Rng rng(mix_seed(scene_seed, 1));
    const RigidTransform pose = sample_camera_pose(scene, rng);
    RenderedPair out;
    out.sample = make_pair(scene, default_camera(spec.width, spec.height), pose, spec.baseline, spec.yaw_deg);
    out.source_full = out.sample.source;
    if (spec.drop_prob > 0) {
        out.sample.source = drop_instances(out.sample.source, spec.drop_prob, mix_seed(scene_seed, 2));
    }
    return out;
}

inline std::vector<ToyPair> make_toy_dataset(const ToyDatasetSpec& spec) {
    std::vector<ToyPair> out;
    for (int i = 0; i < spec.pairs; ++i) {
        const auto rp = render_dataset_pair(spec, i);
        out.push_back(make_toy_pair(rp.sample, rp.source_full, rp.sample.neighbour, spec.stride));
    }
    return out;
}

} // namespace planekit
