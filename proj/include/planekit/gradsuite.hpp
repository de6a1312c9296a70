#pragma once

// Finite-difference checks for every differentiable piece: the individual
// plane losses (with and without edge weighting), Dice, positive-cell focal,
// the plane transform, the plane head and the full guidance pipeline.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "planekit/gradcheck.hpp"
#include "planekit/losses.hpp"
#include "planekit/planehead.hpp"
#include "planekit/toy.hpp"
#include "planekit/warpguide.hpp"

namespace planekit {

namespace gradsuite_detail {

inline VectorMap to_map(std::span<const double> x, int h, int w, int c) {
    VectorMap m(h, w, c);
    std::copy(x.begin(), x.end(), m.data().begin());
    return m;
}

inline std::vector<double> flat(const Image<double>& m) { return {m.data().begin(), m.data().end()}; }

inline CameraIntrinsics small_camera(int w, int h) {
    CameraIntrinsics k;
    k.fx = 0.9 * w;
    k.fy = 0.9 * w;
    k.cx = 0.5 * (w - 1);
    k.cy = 0.5 * (h - 1);
    k.width = w;
    k.height = h;
    return k;
}

/// Plane in front of every pixel of a small camera, with a random tilt.
inline Vec3 frontal_plane(Rng& rng) {
    return {rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(1.0, 3.0)};
}

inline std::vector<double> frontal_planes(Rng& rng, std::size_t pixels) {
    std::vector<double> x;
    for (std::size_t i = 0; i < pixels; ++i) {
        const Vec3 p = frontal_plane(rng);
        x.insert(x.end(), {p.x(), p.y(), p.z()});
    }
    return x;
}

inline double min_abs(const std::vector<double>& v) {
    double m = std::numeric_limits<double>::infinity();
    for (double x : v) {
        m = std::min(m, std::abs(x));
    }
    return m;
}

struct DepthData {
    CameraIntrinsics k;
    ScalarMap depth;
    ScalarMap edge;
};

inline std::shared_ptr<DepthData> depth_data(std::uint64_t seed) {
    Rng rng(seed);
    auto d = std::make_shared<DepthData>();
    d->k = small_camera(5, 4);
    d->depth = ScalarMap(4, 5);
    d->edge = ScalarMap(4, 5);
    for (std::size_t i = 0; i < d->depth.size(); ++i) {
        d->depth[i] = rng.uniform(1.0, 4.0);
        d->edge[i] = rng.uniform(0.0, 1.0);
    }
    return d;
}

inline std::string edge_suffix(const ScalarMap* edge, EdgeWeighting mode) {
    if (!edge) {
        return "";
    }
    return mode == EdgeWeighting::literal ? "_edge" : "_edge1p";
}

inline GradCheckProblem depth_problem(std::uint64_t seed, bool weighted, EdgeWeighting mode) {
    auto d = depth_data(seed);
    const ScalarMap* edge = weighted ? &d->edge : nullptr;
    auto term = [d, edge, mode](std::span<const double> x) {
        return l_depth(to_map(x, 4, 5, 3), d->depth, d->k, nullptr, edge, mode);
    };
    GradCheckProblem p;
    p.name = "l_depth" + edge_suffix(edge, mode);
    p.sample = [d](Rng& rng) { return frontal_planes(rng, d->depth.size()); };
    p.value = [term](std::span<const double> x) { return term(x).value; };
    p.gradient = [term](std::span<const double> x) { return flat(term(x).grad); };
    p.kink_margin = [d](std::span<const double> x) {
        std::vector<double> m;
        const VectorMap pred = to_map(x, 4, 5, 3);
        for (std::size_t i = 0; i < pred.pixels(); ++i) {
            const Vec3 p = detail::at3(pred, i);
            const Vec3 r = d->k.ray(static_cast<double>(i % 5), static_cast<double>(i / 5));
            m.push_back(d->depth[i] - p.squaredNorm() / p.dot(r));
            m.push_back(p.dot(r) / p.norm());
        }
        return min_abs(m);
    };
    return p;
}

inline GradCheckProblem geom_problem(std::uint64_t seed, bool weighted, EdgeWeighting mode) {
    auto d = depth_data(seed);
    const ScalarMap* edge = weighted ? &d->edge : nullptr;
    auto term = [d, edge, mode](std::span<const double> x) {
        return l_geom(to_map(x, 4, 5, 3), d->depth, d->k, nullptr, edge, mode);
    };
    GradCheckProblem p;
    p.name = "l_geom" + edge_suffix(edge, mode);
    p.sample = [d](Rng& rng) { return frontal_planes(rng, d->depth.size()); };
    p.value = [term](std::span<const double> x) { return term(x).value; };
    p.gradient = [term](std::span<const double> x) { return flat(term(x).grad); };
    p.kink_margin = [d](std::span<const double> x) {
        std::vector<double> m;
        const VectorMap pred = to_map(x, 4, 5, 3);
        for (std::size_t i = 0; i < pred.pixels(); ++i) {
            const Vec3 p = detail::at3(pred, i);
            const Vec3 q = d->depth[i] * d->k.ray(static_cast<double>(i % 5), static_cast<double>(i / 5));
            m.push_back(p.dot(q) / p.norm() - p.norm());
        }
        return min_abs(m);
    };
    return p;
}

inline GradCheckProblem plane_problem(std::uint64_t seed, PlaneNorm norm) {
    Rng rng(seed);
    auto gt = std::make_shared<VectorMap>(3, 4, 3);
    for (auto& v : gt->data()) {
        v = rng.uniform(-2.0, 2.0);
    }
    auto term = [gt, norm](std::span<const double> x) { return l_plane(to_map(x, 3, 4, 3), *gt, nullptr, norm); };
    GradCheckProblem p;
    p.name = norm == PlaneNorm::l1 ? "l_plane" : "l_plane_euclidean";
    p.sample = [gt](Rng& r) {
        std::vector<double> x(gt->size());
        for (auto& v : x) {
            v = r.uniform(-2.0, 2.0);
        }
        return x;
    };
    p.value = [term](std::span<const double> x) { return term(x).value; };
    p.gradient = [term](std::span<const double> x) { return flat(term(x).grad); };
    p.kink_margin = [gt, norm](std::span<const double> x) {
        std::vector<double> m;
        for (std::size_t i = 0; i < gt->pixels(); ++i) {
            Vec3 diff;
            for (int k = 0; k < 3; ++k) {
                diff[k] = x[3 * i + k] - (*gt)[3 * i + k];
                if (norm == PlaneNorm::l1) {
                    m.push_back(diff[k]);
                }
            }
            if (norm == PlaneNorm::euclidean) {
                m.push_back(diff.norm());
            }
        }
        return min_abs(m);
    };
    return p;
}

inline GradCheckProblem surface_problem(std::uint64_t seed) {
    Rng rng(seed);
    auto gt = std::make_shared<VectorMap>(3, 4, 3);
    for (std::size_t i = 0; i < gt->pixels(); ++i) {
        detail::put3(*gt, i, frontal_plane(rng));
    }
    auto term = [gt](std::span<const double> x) { return l_surface(to_map(x, 3, 4, 3), *gt); };
    GradCheckProblem p;
    p.name = "l_surface";
    p.sample = [gt](Rng& r) { return frontal_planes(r, gt->pixels()); };
    p.value = [term](std::span<const double> x) { return term(x).value; };
    p.gradient = [term](std::span<const double> x) { return flat(term(x).grad); };
    return p;
}

inline GradCheckProblem dice_problem(std::uint64_t seed) {
    Rng rng(seed);
    auto gt = std::make_shared<ScalarMap>(4, 4);
    for (auto& v : gt->data()) {
        v = rng.bernoulli(0.5) ? 1.0 : 0.0;
    }
    auto term = [gt](std::span<const double> x) { return dice_loss(to_map(x, 4, 4, 1), *gt); };
    GradCheckProblem p;
    p.name = "dice";
    p.sample = [gt](Rng& r) {
        std::vector<double> x(gt->size());
        for (auto& v : x) {
            v = r.uniform(0.01, 0.99);
        }
        return x;
    };
    p.value = [term](std::span<const double> x) { return term(x).value; };
    p.gradient = [term](std::span<const double> x) { return flat(term(x).grad); };
    return p;
}

inline GradCheckProblem focal_problem(std::uint64_t seed) {
    Rng rng(seed);
    auto grid = std::make_shared<CategoryGrid>();
    grid->size = 3;
    grid->classes = 4;
    grid->targets.resize(9);
    for (auto& t : grid->targets) {
        t = rng.bernoulli(0.5) ? rng.uniform_int(0, 3) : -1;
    }
    grid->targets[rng.uniform_int(0, 8)] = rng.uniform_int(0, 3);
    auto term = [grid](std::span<const double> x) {
        CategoryGrid g = *grid;
        g.scores.assign(x.begin(), x.end());
        return focal_loss_positive(g);
    };
    GradCheckProblem p;
    p.name = "focal_positive";
    p.sample = [](Rng& r) {
        std::vector<double> x(36);
        for (auto& v : x) {
            v = r.uniform(0.02, 0.98);
        }
        return x;
    };
    p.value = [term](std::span<const double> x) { return term(x).value; };
    p.gradient = [term](std::span<const double> x) { return term(x).grad; };
    return p;
}

inline RigidTransform random_motion(Rng& rng, double angle, double shift) {
    RigidTransform tf;
    tf.R = rot_y(rng.uniform(-angle, angle)) * rot_x(rng.uniform(-angle, angle)) * rot_z(rng.uniform(-angle, angle));
    tf.t = Vec3(rng.uniform(-shift, shift), rng.uniform(-shift, shift), rng.uniform(-shift, shift));
    return tf;
}

inline GradCheckProblem transform_problem(std::uint64_t seed) {
    Rng rng(seed);
    const RigidTransform tf = random_motion(rng, 0.3, 0.3);
    const Vec3 g(rng.normal(), rng.normal(), rng.normal());
    GradCheckProblem p;
    p.name = "plane_transform";
    p.sample = [](Rng& r) {
        const Vec3 v = frontal_plane(r);
        return std::vector<double>{v.x(), v.y(), v.z()};
    };
    p.value = [tf, g](std::span<const double> x) { return g.dot(transform_plane(tf, PlaneParams{Vec3(x[0], x[1], x[2])}).p); };
    p.gradient = [tf, g](std::span<const double> x) {
        const Vec3 v = transform_plane_vjp(tf, Vec3(x[0], x[1], x[2]), g);
        return std::vector<double>{v.x(), v.y(), v.z()};
    };
    return p;
}

struct HeadData {
    PlaneHead shape;
    VectorMap features;
    VectorMap upstream;
};

inline std::shared_ptr<HeadData> head_data(std::uint64_t seed) {
    Rng rng(seed);
    auto d = std::make_shared<HeadData>();
    d->shape = PlaneHead::zeros(5, 6);
    d->features = VectorMap(3, 4, 5);
    d->upstream = VectorMap(3, 4, 3);
    for (auto& v : d->features.data()) {
        v = rng.uniform(-1.0, 1.0);
    }
    for (auto& v : d->upstream.data()) {
        v = rng.normal();
    }
    return d;
}

inline double head_value(const HeadData& d, const PlaneHead& head, const VectorMap& features) {
    const VectorMap out = head_forward(head, features);
    double v = 0;
    for (std::size_t i = 0; i < out.size(); ++i) {
        v += out[i] * d.upstream[i];
    }
    return v;
}

inline GradCheckProblem head_param_problem(std::uint64_t seed) {
    auto d = head_data(seed);
    auto with = [d](std::span<const double> x) {
        PlaneHead h = d->shape;
        h.params.assign(x.begin(), x.end());
        return h;
    };
    GradCheckProblem p;
    p.name = "head_params";
    p.sample = [d](Rng& r) { return PlaneHead::random(d->shape.in_channels, d->shape.hidden, r.next()).params; };
    p.value = [d, with](std::span<const double> x) { return head_value(*d, with(x), d->features); };
    p.gradient = [d, with](std::span<const double> x) { return head_backward(with(x), d->features, d->upstream).params; };
    return p;
}

inline GradCheckProblem head_feature_problem(std::uint64_t seed) {
    auto d = head_data(seed);
    d->shape = PlaneHead::random(d->shape.in_channels, d->shape.hidden, mix_seed(seed, 7));
    GradCheckProblem p;
    p.name = "head_features";
    p.sample = [d](Rng&) { return flat(d->features); };
    p.value = [d](std::span<const double> x) { return head_value(*d, d->shape, to_map(x, 3, 4, 5)); };
    p.gradient = [d](std::span<const double> x) {
        return flat(head_backward(d->shape, to_map(x, 3, 4, 5), d->upstream).features);
    };
    return p;
}

struct GuidanceData {
    PlaneHead shape;
    GuidancePlan plan;
    WarpGuidanceConfig cfg;
};

/// The guidance loss as a function of the head parameters, on a small
/// rendered pair with toy features.
inline GradCheckProblem guidance_problem(std::uint64_t seed, bool weighted) {
    auto d = std::make_shared<GuidanceData>();
    ToyDatasetSpec spec;
    spec.pairs = 1;
    spec.width = 32;
    spec.height = 24;
    spec.boxes = 2;
    spec.seed = seed;
    const RenderedPair rp = render_dataset_pair(spec, 0);
    const VectorMap nbr_features = make_toy_features(rp.sample.neighbour, spec.stride);
    d->plan = prepare_guidance(rp.sample, nbr_features);
    d->shape = PlaneHead::zeros(kToyFeatureChannels, 6);
    d->cfg.weights.gradient_weighting = weighted;
    d->cfg.weights.edge_weighting = EdgeWeighting::one_plus;
    auto with = [d](std::span<const double> x) {
        PlaneHead h = d->shape;
        h.params.assign(x.begin(), x.end());
        return h;
    };
    GradCheckProblem p;
    p.name = weighted ? "guidance_edge1p" : "guidance";
    p.sample = [d, seed](Rng& r) {
        PlaneHead h = PlaneHead::random(d->shape.in_channels, d->shape.hidden, r.next(), {0.0, 0.0, 2.0});
        return h.params;
    };
    p.value = [d, with](std::span<const double> x) { return guidance_term(d->plan, with(x), d->cfg).report.l_total; };
    p.gradient = [d, with](std::span<const double> x) { return guidance_term(d->plan, with(x), d->cfg).param_grad; };
    // Every abs() and exclusion test the pipeline evaluates, in plane units.
    p.kink_margin = [d, with](std::span<const double> x) {
        const PlaneHead h = with(x);
        const VectorMap pred = head_forward(h, d->plan.warped.features);
        const FeatureView& src = d->plan.source;
        const int w = pred.width();
        std::vector<double> m;
        for (std::size_t i = 0; i < pred.pixels(); ++i) {
            if (!d->plan.mask[i]) {
                continue;
            }
            const Vec3 pn = detail::at3(pred, i);
            const Vec3 nn = d->plan.nbr_to_src.R * pn.normalized();
            const double offset = pn.norm() + nn.dot(d->plan.nbr_to_src.t);
            m.push_back(offset);
            if (offset <= 0) {
                continue;
            }
            const Vec3 p = nn * offset;
            const Vec3 g = detail::at3(src.plane_map, i);
            if (g.norm() > kPlaneEpsilon) {
                for (int k = 0; k < 3; ++k) {
                    m.push_back(p[k] - g[k]);
                }
            }
            if (src.depth[i] > 0) {
                const Vec3 r = src.camera.ray(static_cast<double>(i % w), static_cast<double>(i / w));
                const Vec3 q = src.depth[i] * r;
                m.push_back(p.dot(q) / p.norm() - p.norm());
                m.push_back(p.dot(r) / p.norm());
                if (p.dot(r) > 0) {
                    m.push_back(src.depth[i] - p.squaredNorm() / p.dot(r));
                }
            }
        }
        return min_abs(m);
    };
    return p;
}

} // namespace gradsuite_detail

/// All gradient checks for one trial seed.
inline std::vector<GradCheckProblem> gradient_problems(std::uint64_t seed) {
    using namespace gradsuite_detail;
    return {plane_problem(seed, PlaneNorm::l1),
            plane_problem(seed, PlaneNorm::euclidean),
            surface_problem(seed),
            geom_problem(seed, false, EdgeWeighting::literal),
            geom_problem(seed, true, EdgeWeighting::literal),
            geom_problem(seed, true, EdgeWeighting::one_plus),
            depth_problem(seed, false, EdgeWeighting::literal),
            depth_problem(seed, true, EdgeWeighting::literal),
            depth_problem(seed, true, EdgeWeighting::one_plus),
            dice_problem(seed),
            focal_problem(seed),
            transform_problem(seed),
            head_param_problem(seed),
            head_feature_problem(seed),
            guidance_problem(seed, false),
            guidance_problem(seed, true)};
}

/// Test hook: the same problem with its analytic gradient perturbed.
inline GradCheckProblem corrupted(GradCheckProblem problem) {
    auto inner = problem.gradient;
    problem.gradient = [inner](std::span<const double> x) {
        auto g = inner(x);
        if (!g.empty()) {
            g[0] = g[0] * 1.01 + 1e-3;
        }
        return g;
    };
    return problem;
}

struct GradSuiteResult {
    std::string name;
    double max_rel_error = 0;
    int trials = 0;
};

/// Runs every problem for seeds mix_seed(seed, 0..trials-1) and keeps the
/// worst relative error per problem, in suite order. Problems named in
/// `faulty` get a corrupted gradient.
inline std::vector<GradSuiteResult> run_gradient_suite(std::uint64_t seed, int trials,
                                                       const std::vector<std::string>& faulty = {},
                                                       const GradCheckOptions& opt = {}) {
    require(trials >= 1, Errc::invalid_input, "trials must be at least 1");
    std::vector<GradSuiteResult> results;
    for (int t = 0; t < trials; ++t) {
        const std::uint64_t trial_seed = mix_seed(seed, static_cast<std::uint64_t>(t));
        auto problems = gradient_problems(trial_seed);
        if (results.empty()) {
            for (const auto& p : problems) {
                results.push_back({p.name, 0.0, 0});
            }
        }
        for (std::size_t k = 0; k < problems.size(); ++k) {
            const bool inject = std::find(faulty.begin(), faulty.end(), problems[k].name) != faulty.end();
            const GradCheckProblem problem = inject ? corrupted(problems[k]) : problems[k];
            Rng rng(mix_seed(trial_seed, 1000 + k));
            const auto report = finite_diff_check(problem, rng, opt);
            results[k].max_rel_error = std::max(results[k].max_rel_error, report.max_rel_error);
            ++results[k].trials;
        }
    }
    return results;
}

} // namespace planekit
