#pragma once

// Command implementations behind the planekit executable. Each command
// returns the process exit code: 0 success, 1 check failure, 2 usage or I/O
// error.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "planekit/gradsuite.hpp"
#include "planekit/io.hpp"
#include "planekit/metrics.hpp"
#include "planekit/parallel.hpp"
#include "planekit/pooling.hpp"
#include "planekit/synth.hpp"
#include "planekit/toy.hpp"
#include "planekit/warpguide.hpp"

namespace planekit::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitUsage = 2;

inline std::string pair_stem(int i, const char* role) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "pair_%04d_%s", i, role);
    return buf;
}

inline std::string scene_stem(int i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "scene_%04d", i);
    return buf;
}

inline Vec3 parse_vec3(const std::string& text) {
    std::vector<double> v;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            v.push_back(std::stod(item, &used));
            require(used == item.size(), Errc::invalid_input, "");
        } catch (const std::exception&) {
            throw Error(Errc::invalid_input, "expected three comma-separated numbers, got '" + text + "'");
        }
    }
    require(v.size() == 3, Errc::invalid_input, "expected three comma-separated numbers, got '" + text + "'");
    return {v[0], v[1], v[2]};
}

/// Manifests in `dir` whose file name ends with `suffix`, sorted.
inline std::vector<fs::path> manifests(const fs::path& dir, const std::string& suffix = ".json") {
    require(fs::is_directory(dir), Errc::io, "not a directory: " + dir.string());
    std::vector<fs::path> out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        const bool sidecar = name.size() > 10 && name.ends_with(".fmap.json");
        if (entry.is_regular_file() && !sidecar && name.size() >= suffix.size() && name.ends_with(suffix)) {
            out.push_back(entry.path());
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

// ---------------------------------------------------------------------------
// synth-gen

struct SynthGenOptions {
    std::string out;
    int scenes = 1;
    int boxes = 3;
    std::uint64_t seed = 0;
    bool pairs = false;
    std::string baseline = "0.2,0,0";
    double yaw = kDefaultYawDegrees;
    double drop_prob = 0;
    int width = 128;
    int height = 96;
};

inline int synth_gen(const SynthGenOptions& opt, std::ostream& out) {
    const fs::path dir(opt.out);
    std::error_code ec;
    fs::create_directories(dir, ec);
    require(!ec && fs::is_directory(dir), Errc::io, "cannot create output directory " + dir.string());

    ToyDatasetSpec spec;
    spec.pairs = opt.scenes;
    spec.width = opt.width;
    spec.height = opt.height;
    spec.boxes = opt.boxes;
    spec.seed = opt.seed;
    spec.baseline = parse_vec3(opt.baseline);
    spec.yaw_deg = opt.yaw;
    spec.drop_prob = opt.drop_prob;
    const RenderedView* none = nullptr;
    for (int i = 0; i < opt.scenes; ++i) {
        if (opt.pairs) {
            const RenderedPair rp = render_dataset_pair(spec, i);
            const std::string src = pair_stem(i, "src");
            const std::string nbr = pair_stem(i, "nbr");
            io::write_view(dir, src, rp.sample.source, io::PairLink{nbr + ".json", rp.sample.src_to_nbr},
                           opt.drop_prob > 0 ? &rp.source_full : none);
            io::write_view(dir, nbr, rp.sample.neighbour, io::PairLink{src + ".json", rp.sample.nbr_to_src});
        } else {
            const std::uint64_t scene_seed = mix_seed(opt.seed, static_cast<std::uint64_t>(i));
            const PlanarScene scene = generate_scene(scene_seed, opt.boxes);
            Rng rng(mix_seed(scene_seed, 1));
            const RigidTransform pose = sample_camera_pose(scene, rng);
            const RenderedView full = render_view(scene, default_camera(opt.width, opt.height), pose);
            if (opt.drop_prob > 0) {
                io::write_view(dir, scene_stem(i), drop_instances(full, opt.drop_prob, mix_seed(scene_seed, 2)),
                               std::nullopt, &full);
            } else {
                io::write_view(dir, scene_stem(i), full);
            }
        }
    }
    out << "wrote " << opt.scenes << (opt.pairs ? " pairs" : " scenes") << " to " << dir.string() << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradCheckCliOptions {
    std::uint64_t seed = 0;
    int trials = 100;
    double tolerance = 1e-4;
    std::vector<std::string> inject_fault;
};

inline int gradcheck(const GradCheckCliOptions& opt, std::ostream& out) {
    const auto results = run_gradient_suite(opt.seed, opt.trials, opt.inject_fault);
    std::vector<std::string> failed;
    out << "loss,max_rel_error,trials,status\n";
    for (const auto& r : results) {
        const bool ok = r.max_rel_error < opt.tolerance;
        out << r.name << ',' << io::format_number(r.max_rel_error) << ',' << r.trials << ','
            << (ok ? "ok" : "FAIL") << "\n";
        if (!ok) {
            failed.push_back(r.name);
        }
    }
    if (!failed.empty()) {
        out << "gradient check failed for:";
        for (const auto& name : failed) {
            out << ' ' << name;
        }
        out << "\n";
        return kExitCheckFailed;
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// warp-check

struct WarpCheckReport {
    double identity_error = 0;
    double coverage = 0;
    std::optional<double> photo_mae;
    std::optional<double> oracle_lp;
    std::size_t oracle_pixels = 0;
    double plane_transform_deviation = 0;
};

/// Plane through three points, oriented with a non-negative offset.
inline Vec3 plane_through(const Vec3& a, const Vec3& b, const Vec3& c) {
    Vec3 n = (b - a).cross(c - a).normalized();
    double d = n.dot(a);
    if (d < 0) {
        n = -n;
        d = -d;
    }
    return n * d;
}

/// Largest deviation between transform_plane and a plane fitted through three
/// transformed points of the original plane, over the labeled planes of `view`.
inline double plane_transform_deviation(const RenderedView& view, const RigidTransform& tf) {
    std::map<std::int32_t, Vec3> planes;
    for (std::size_t i = 0; i < view.instances.size(); ++i) {
        if (view.instances[i] > 0 && !planes.count(view.instances[i])) {
            planes[view.instances[i]] = detail::at3(view.plane_map, i);
        }
    }
    double worst = 0;
    for (const auto& [id, p] : planes) {
        const auto moved = try_transform_plane(tf, p);
        if (!moved) {
            continue;
        }
        const Vec3 n = p.normalized();
        const Vec3 base = n * p.norm();
        const Vec3 e1 = n.unitOrthogonal();
        const Vec3 e2 = n.cross(e1);
        const Vec3 fit = plane_through(tf.apply(base), tf.apply(base + e1), tf.apply(base + e2));
        worst = std::max(worst, (fit - *moved).cwiseAbs().maxCoeff());
    }
    return worst;
}

inline WarpCheckReport warp_check_report(const StereoSample& sample) {
    WarpCheckReport r;
    StereoSample self{sample.source, sample.source, RigidTransform::identity(), RigidTransform::identity()};
    const WarpedFeatures same = warp_features(self, sample.source.rgb);
    for (std::size_t i = 0; i < same.features.size(); ++i) {
        r.identity_error = std::max(r.identity_error, std::abs(same.features[i] - sample.source.rgb[i]));
    }
    if (count(same.outproj) != same.outproj.size()) {
        r.identity_error = std::max(r.identity_error, 1.0);
    }

    const WarpedFeatures rgb = warp_features(sample, sample.neighbour.rgb);
    const std::size_t covered = count(rgb.outproj);
    r.coverage = static_cast<double>(covered) / static_cast<double>(rgb.outproj.size());
    if (covered > 0) {
        double sum = 0;
        for (std::size_t i = 0; i < rgb.outproj.size(); ++i) {
            if (rgb.outproj[i]) {
                for (int c = 0; c < 3; ++c) {
                    sum += std::abs(rgb.features.pixel(i)[c] - sample.source.rgb.pixel(i)[c]);
                }
            }
        }
        r.photo_mae = sum / (3.0 * static_cast<double>(covered));

        // Ground-truth planes as decoded features: the oracle is defined where
        // the sample does not straddle two neighbour planes.
        GuidancePlan plan = prepare_guidance(sample, sample.neighbour.plane_map);
        plan.restrict_to_segments(sample.neighbour.instances);
        const InstanceMap& nbr_ids = sample.neighbour.instances;
        for (std::size_t i = 0; i < plan.mask.size(); ++i) {
            if (plan.mask[i]) {
                const auto t = detail::taps(nbr_ids.height(), nbr_ids.width(), plan.warped.grid.coords[2 * i],
                                            plan.warped.grid.coords[2 * i + 1]);
                plan.mask[i] = nbr_ids(t.y0, t.x0, 0) > 0;
            }
        }
        if (count(plan.mask) > 0) {
            const auto g = guidance_from_planes(plan, plan.warped.features, WarpGuidanceConfig{});
            r.oracle_lp = g.loss.report.l_p;
            r.oracle_pixels = count(g.usable);
        }
    }
    r.plane_transform_deviation = plane_transform_deviation(sample.source, sample.src_to_nbr);
    return r;
}

struct WarpCheckOptions {
    std::string pair;
    double identity_tol = 1e-9;
    double photo_tol = 0.02;
    double oracle_tol = 1e-4;
    double transform_tol = 1e-9;
};

inline int warp_check(const WarpCheckOptions& opt, std::ostream& out, std::ostream& err) {
    const io::StoredPair pair = io::read_pair(opt.pair);
    const WarpCheckReport r = warp_check_report(pair.sample);
    bool ok = r.identity_error < opt.identity_tol && r.plane_transform_deviation < opt.transform_tol;
    out << "identity_error " << io::format_number(r.identity_error) << "\n";
    out << "coverage " << io::format_number(r.coverage) << "\n";
    if (r.photo_mae) {
        out << "photo_mae " << io::format_number(*r.photo_mae) << "\n";
        ok = ok && *r.photo_mae < opt.photo_tol;
    }
    if (r.oracle_lp) {
        out << "oracle_lp " << io::format_number(*r.oracle_lp) << " pixels " << r.oracle_pixels << "\n";
        ok = ok && *r.oracle_lp < opt.oracle_tol;
    }
    out << "plane_transform_deviation " << io::format_number(r.plane_transform_deviation) << "\n";
    if (!r.photo_mae) {
        err << "warning: no source pixel is visible in the neighbour view; photoconsistency and oracle checks skipped\n";
    }
    out << (ok ? "ok" : "FAIL") << "\n";
    return ok ? kExitOk : kExitCheckFailed;
}

// ---------------------------------------------------------------------------
// train-toy

inline std::vector<ToyPair> load_toy_pairs(const fs::path& dir, int stride) {
    std::vector<ToyPair> pairs;
    for (const auto& path : manifests(dir, "_src.json")) {
        const io::StoredPair stored = io::read_pair(path);
        const RenderedView source_full = io::full_label_view(stored.source);
        const RenderedView neighbour_full = io::full_label_view(stored.neighbour);
        pairs.push_back(make_toy_pair(stored.sample, source_full, neighbour_full, stride));
    }
    return pairs;
}

struct DroppedError {
    double plane_l1 = 0;
    std::size_t pixels = 0;
};

inline DroppedError dropped_error(const PlaneHead& head, const std::vector<ToyPair>& pairs) {
    DroppedError e;
    double sum = 0;
    for (const auto& p : pairs) {
        const int stride = feature_stride(p.source_full, p.src_features);
        const Mask region = dropped_region(p.source_full, p.sample.source, stride);
        if (count(region) == 0) {
            continue;
        }
        const ToyEvaluation ev = evaluate_toy(head, p.source_full, p.src_features, &region);
        sum += ev.plane_l1 * static_cast<double>(ev.pixels);
        e.pixels += ev.pixels;
    }
    e.plane_l1 = e.pixels > 0 ? sum / static_cast<double>(e.pixels) : 0.0;
    return e;
}

struct HeldOutScore {
    double abs_rel = 0;
    double l_surface = 0;
};

inline HeldOutScore held_out_score(const PlaneHead& head, const std::vector<ToyPair>& pairs) {
    HeldOutScore s;
    std::size_t pixels = 0;
    for (const auto& p : pairs) {
        const ToyEvaluation ev = evaluate_toy(head, p.source_full, p.src_features);
        s.abs_rel += ev.abs_rel * static_cast<double>(ev.pixels);
        s.l_surface += ev.l_surface * static_cast<double>(ev.pixels);
        pixels += ev.pixels;
    }
    require(pixels > 0, Errc::invalid_input, "held-out views have no labeled pixels");
    s.abs_rel /= static_cast<double>(pixels);
    s.l_surface /= static_cast<double>(pixels);
    return s;
}

struct TrainToyOptions {
    std::string pairs;
    int steps = 2000;
    double lr = ToyConfig{}.learning_rate;
    std::string guidance = "on";
    std::string grad_weight = "off";
    std::string edge_weighting = "literal";
    std::string segment_guidance = "on";
    std::uint64_t seed = 0;
    std::string report;
    int hidden = ToyConfig{}.hidden;
    int stride = kDefaultFeatureStride;
    double max_grad_norm = ToyConfig{}.max_grad_norm;
    std::string heldout;
    std::string save_head;
};

inline int train_toy_command(const TrainToyOptions& opt, std::ostream& out) {
    const auto pairs = load_toy_pairs(opt.pairs, opt.stride);
    require(!pairs.empty(), Errc::io, "no *_src.json pair manifests in " + opt.pairs);
    ToyConfig cfg;
    cfg.steps = opt.steps;
    cfg.learning_rate = opt.lr;
    cfg.guidance = opt.guidance == "on";
    cfg.gradient_weighting = opt.grad_weight == "on";
    cfg.edge_weighting = opt.edge_weighting == "literal" ? EdgeWeighting::literal : EdgeWeighting::one_plus;
    cfg.segment_guidance = opt.segment_guidance == "on";
    cfg.seed = opt.seed;
    cfg.hidden = opt.hidden;
    cfg.max_grad_norm = opt.max_grad_norm;

    std::string csv = io::loss_csv_header() + "\n";
    LossReport last;
    const PlaneHead head = train_toy(pairs, cfg, [&](int step, const LossReport& r) {
        csv += io::loss_csv_row(step, r) + "\n";
        last = r;
    });
    if (!opt.report.empty()) {
        io::write_file_atomic(opt.report, csv);
    }
    if (!opt.save_head.empty()) {
        io::write_head(opt.save_head, head);
    }
    out << "pairs " << pairs.size() << "\n";
    out << "final_l_total " << io::format_number(last.l_total) << "\n";
    const DroppedError dropped = dropped_error(head, pairs);
    if (dropped.pixels > 0) {
        out << "dropped_plane_l1 " << io::format_number(dropped.plane_l1) << " pixels " << dropped.pixels << "\n";
    }
    if (!opt.heldout.empty()) {
        const auto held = load_toy_pairs(opt.heldout, opt.stride);
        require(!held.empty(), Errc::io, "no *_src.json pair manifests in " + opt.heldout);
        const HeldOutScore s = held_out_score(head, held);
        out << "heldout_abs_rel " << io::format_number(s.abs_rel) << "\n";
        out << "heldout_l_surface " << io::format_number(s.l_surface) << "\n";
        const DroppedError held_dropped = dropped_error(head, held);
        if (held_dropped.pixels > 0) {
            out << "heldout_dropped_plane_l1 " << io::format_number(held_dropped.plane_l1) << " pixels "
                << held_dropped.pixels << "\n";
        }
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// eval

struct ImageEvaluation {
    io::ImageMetrics metrics;
    bool has_depth = false;
    bool has_detection = false;
    std::vector<double> recall_hits;
    std::size_t planar_pixels = 0;
    std::string error;
};

inline std::vector<InstancePrediction> predictions_of(const io::StoredView& pred) {
    const auto& v = pred.view;
    std::vector<InstancePrediction> out;
    int channel = 0;
    for (const auto& [id, cls] : v.classes) {
        InstancePrediction p;
        p.soft_mask = ScalarMap(v.instances.height(), v.instances.width());
        if (pred.soft_masks) {
            require(pred.soft_masks->channels() == static_cast<int>(v.classes.size()) &&
                        pred.soft_masks->same_shape(v.instances),
                    Errc::io, "soft mask channels do not match the instance table");
            for (std::size_t i = 0; i < p.soft_mask.size(); ++i) {
                p.soft_mask[i] = pred.soft_masks->pixel(i)[channel];
            }
        } else {
            for (std::size_t i = 0; i < p.soft_mask.size(); ++i) {
                p.soft_mask[i] = v.instances[i] == id ? 1.0 : 0.0;
            }
        }
        const auto s = pred.scores.find(id);
        p.score = s == pred.scores.end() ? 1.0 : s->second;
        p.class_id = cls;
        out.push_back(std::move(p));
        ++channel;
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const InstancePrediction& a, const InstancePrediction& b) { return a.score > b.score; });
    return out;
}

inline ImageEvaluation evaluate_image(const io::StoredView& pred, const io::StoredView& gt_stored, double theta,
                                      double score_min, double iou_min, const std::vector<double>& thresholds) {
    ImageEvaluation e;
    const RenderedView gt = io::full_label_view(gt_stored);
    require(pred.view.camera == gt.camera, Errc::io, "prediction camera differs from ground truth");
    auto instances = predictions_of(pred);
    const AssembledOutput assembled = assemble_output(instances, pred.view.plane_map, theta, score_min);

    InstanceSet pred_set{assembled.instances, {}, {}};
    for (std::size_t k = 0; k < instances.size(); ++k) {
        pred_set.classes[static_cast<std::int32_t>(k + 1)] = instances[k].class_id;
        pred_set.scores[static_cast<std::int32_t>(k + 1)] = instances[k].score;
    }
    const InstanceSet gt_set{gt.instances, gt.classes, {}};

    ScalarMap induced(gt.camera.height, gt.camera.width);
    Mask valid(gt.camera.height, gt.camera.width);
    const int w = gt.camera.width;
    for (std::size_t i = 0; i < induced.size(); ++i) {
        if (gt.instances[i] <= 0 || gt.depth[i] <= 0) {
            continue;
        }
        const auto d = try_plane_induced_depth(gt.camera, detail::at3(assembled.plane_map, i),
                                               static_cast<double>(i % w), static_cast<double>(i / w));
        if (d && *d > 0) {
            induced[i] = *d;
            valid[i] = 1;
        } else {
            induced[i] = 1.0;
        }
    }
    if (count(valid) > 0) {
        e.metrics.depth = depth_metrics(induced, gt.depth, &valid);
        e.has_depth = true;
    }
    if (!gt_set.ids().empty()) {
        const DetectionReport det = detection_metrics(pred_set, gt_set, iou_min);
        e.metrics.ap = det.ap;
        e.metrics.map = det.map;
        e.has_detection = true;
        const RecallCurve curve =
            pixel_recall_curve(assembled.plane_map, pred_set, gt_set, gt.depth, gt.camera, thresholds, iou_min);
        for (std::size_t i = 0; i < gt.instances.size(); ++i) {
            e.planar_pixels += gt.instances[i] > 0 ? 1 : 0;
        }
        for (const double r : curve.recall) {
            e.recall_hits.push_back(r * static_cast<double>(e.planar_pixels));
        }
    }
    return e;
}

struct EvalOptions {
    std::vector<std::string> pred;
    std::string gt;
    std::string csv;
    std::string svg;
    double theta = kDefaultMaskThreshold;
    double score_min = kDefaultScoreMin;
    double iou = kDefaultIouMin;
};

inline std::string csv_cells_or_nan(const ImageEvaluation& e) {
    const std::string nan = "nan";
    const auto& d = e.metrics.depth;
    const double cells[] = {d.abs_rel, d.sq_rel, d.rmse, d.log_rmse, d.delta1, d.delta2, d.delta3};
    std::string out;
    for (std::size_t i = 0; i < std::size(cells); ++i) {
        out += (i ? "," : "") + (e.has_depth ? io::format_number(cells[i]) : nan);
    }
    out += ',' + (e.has_detection ? io::format_number(e.metrics.ap) : nan);
    out += ',' + (e.has_detection ? io::format_number(e.metrics.map) : nan);
    return out;
}

inline int eval_command(const EvalOptions& opt, std::ostream& out, std::ostream& err) {
    const auto gt_paths = manifests(opt.gt);
    require(!gt_paths.empty(), Errc::io, "no manifests in " + opt.gt);
    std::set<std::string> gt_names;
    for (const auto& p : gt_paths) {
        gt_names.insert(p.filename().string());
    }
    for (const auto& dir : opt.pred) {
        std::set<std::string> names;
        for (const auto& p : manifests(dir)) {
            names.insert(p.filename().string());
        }
        if (names != gt_names) {
            err << "image sets differ between " << dir << " and " << opt.gt << ":\n";
            for (const auto& n : gt_names) {
                if (!names.count(n)) {
                    err << "  missing prediction: " << n << "\n";
                }
            }
            for (const auto& n : names) {
                if (!gt_names.count(n)) {
                    err << "  no ground truth for: " << n << "\n";
                }
            }
            return kExitUsage;
        }
    }

    std::vector<io::StoredView> gts;
    for (const auto& p : gt_paths) {
        gts.push_back(io::read_view(p));
    }
    const auto thresholds = default_recall_thresholds();
    std::string csv = "model,image," + std::string(io::kMetricColumns) + "\n";
    std::vector<io::RecallSeries> series;
    for (const auto& dir : opt.pred) {
        const std::string model = fs::path(dir).lexically_normal().filename().string().empty()
                                      ? fs::path(dir).lexically_normal().parent_path().filename().string()
                                      : fs::path(dir).lexically_normal().filename().string();
        std::vector<ImageEvaluation> results(gts.size());
        parallel_rows(static_cast<int>(gts.size()), [&](int k) {
            try {
                const io::StoredView pred = io::read_view(fs::path(dir) / gt_paths[k].filename());
                results[k] = evaluate_image(pred, gts[k], opt.theta, opt.score_min, opt.iou, thresholds);
            } catch (const std::exception& ex) {
                results[k].error = gt_paths[k].filename().string() + ": " + ex.what();
            }
        });
        for (const auto& r : results) {
            if (!r.error.empty()) {
                throw Error(Errc::io, r.error);
            }
        }
        constexpr std::size_t columns = 9;
        std::vector<double> sums(columns, 0.0);
        std::vector<std::size_t> counts(columns, 0);
        std::vector<double> hits(thresholds.size(), 0.0);
        std::size_t planar = 0;
        for (std::size_t k = 0; k < gts.size(); ++k) {
            const auto& r = results[k];
            csv += model + ',' + gt_paths[k].stem().string() + ',' + csv_cells_or_nan(r) + "\n";
            const auto& d = r.metrics.depth;
            const double cells[] = {d.abs_rel, d.sq_rel, d.rmse, d.log_rmse, d.delta1,
                                    d.delta2,  d.delta3, r.metrics.ap, r.metrics.map};
            for (std::size_t c = 0; c < columns; ++c) {
                if (c < 7 ? r.has_depth : r.has_detection) {
                    sums[c] += cells[c];
                    ++counts[c];
                }
            }
            for (std::size_t t = 0; t < r.recall_hits.size(); ++t) {
                hits[t] += r.recall_hits[t];
            }
            planar += r.planar_pixels;
        }
        csv += model + ",mean";
        for (std::size_t c = 0; c < columns; ++c) {
            csv += ',' + (counts[c] > 0 ? io::format_number(sums[c] / static_cast<double>(counts[c])) : "nan");
        }
        csv += "\n";
        RecallCurve curve{thresholds, {}};
        for (const double h : hits) {
            curve.recall.push_back(planar > 0 ? h / static_cast<double>(planar) : 0.0);
        }
        series.push_back({model, curve});
    }
    if (!opt.csv.empty()) {
        io::write_file_atomic(opt.csv, csv);
    } else {
        out << csv;
    }
    if (!opt.svg.empty()) {
        io::write_file_atomic(opt.svg, io::recall_svg(series));
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------

/// Parses argv and runs the selected command.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"planekit: piece-wise planar reconstruction toolkit"};
    app.require_subcommand(1);

    SynthGenOptions sg;
    auto* synth = app.add_subcommand("synth-gen", "render synthetic scenes or stereo pairs");
    synth->add_option("--out", sg.out, "output directory")->required();
    synth->add_option("--scenes", sg.scenes, "number of scenes (or pairs)")->check(CLI::NonNegativeNumber);
    synth->add_option("--boxes", sg.boxes, "boxes per scene")->check(CLI::NonNegativeNumber);
    synth->add_option("--seed", sg.seed, "random seed");
    synth->add_flag("--pairs", sg.pairs, "write cross-linked stereo pairs");
    synth->add_option("--baseline", sg.baseline, "neighbour camera offset BX,BY,BZ in meters");
    synth->add_option("--yaw", sg.yaw, "neighbour yaw in degrees");
    synth->add_option("--drop-prob", sg.drop_prob, "probability of dropping a source object instance")
        ->check(CLI::Range(0.0, 1.0));
    synth->add_option("--width", sg.width, "image width")->check(CLI::PositiveNumber);
    synth->add_option("--height", sg.height, "image height")->check(CLI::PositiveNumber);

    GradCheckCliOptions gc;
    auto* grad = app.add_subcommand("gradcheck", "compare analytic gradients with finite differences");
    grad->add_option("--seed", gc.seed, "random seed");
    grad->add_option("--trials", gc.trials, "random draws per loss")->check(CLI::PositiveNumber);
    grad->add_option("--tolerance", gc.tolerance, "maximum relative error")->check(CLI::PositiveNumber);
    grad->add_option("--inject-fault", gc.inject_fault, "corrupt the named gradient")->group("");

    WarpCheckOptions wc;
    auto* warp = app.add_subcommand("warp-check", "check warping and plane transforms on a stored pair");
    warp->add_option("--pair", wc.pair, "source manifest of a pair")->required();

    TrainToyOptions tt;
    auto* train = app.add_subcommand("train-toy", "train a plane head on stored pairs");
    const std::vector<std::string> on_off{"on", "off"};
    train->add_option("--pairs", tt.pairs, "directory written by synth-gen --pairs")->required();
    train->add_option("--steps", tt.steps, "optimizer steps")->check(CLI::NonNegativeNumber);
    train->add_option("--lr", tt.lr, "Adam learning rate")->check(CLI::PositiveNumber);
    train->add_option("--guidance", tt.guidance, "multi-view guidance")->check(CLI::IsMember(on_off));
    train->add_option("--grad-weight", tt.grad_weight, "image-gradient edge weighting")
        ->check(CLI::IsMember(on_off));
    train->add_option("--edge-weighting", tt.edge_weighting, "edge weight form")
        ->check(CLI::IsMember({"literal", "one-plus"}));
    train->add_option("--segment-guidance", tt.segment_guidance, "skip warped samples across segments")
        ->check(CLI::IsMember(on_off));
    train->add_option("--seed", tt.seed, "initialization seed");
    train->add_option("--report", tt.report, "per-step loss CSV");
    train->add_option("--hidden", tt.hidden, "hidden width")->check(CLI::PositiveNumber);
    train->add_option("--stride", tt.stride, "feature stride")->check(CLI::PositiveNumber);
    train->add_option("--max-grad-norm", tt.max_grad_norm, "gradient norm cap (0 disables)")
        ->check(CLI::NonNegativeNumber);
    train->add_option("--heldout", tt.heldout, "pair directory for held-out scoring");
    train->add_option("--save-head", tt.save_head, "write the trained head");

    EvalOptions ev;
    auto* eval = app.add_subcommand("eval", "score predictions against ground truth");
    eval->add_option("--pred", ev.pred, "prediction directory (repeatable)")->required();
    eval->add_option("--gt", ev.gt, "ground-truth directory")->required();
    eval->add_option("--csv", ev.csv, "metrics CSV");
    eval->add_option("--svg", ev.svg, "recall curve SVG");
    eval->add_option("--theta", ev.theta, "mask threshold")->check(CLI::Range(0.0, 1.0));
    eval->add_option("--score-min", ev.score_min, "minimum instance score");
    eval->add_option("--iou", ev.iou, "IoU threshold for matching")->check(CLI::Range(0.0, 1.0));

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << e.what() << "\n";
        return kExitUsage;
    }

    try {
        if (*synth) {
            return synth_gen(sg, out);
        }
        if (*grad) {
            return gradcheck(gc, out);
        }
        if (*warp) {
            return warp_check(wc, out, err);
        }
        if (*train) {
            return train_toy_command(tt, out);
        }
        return eval_command(ev, out, err);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    }
}

} // namespace planekit::cli
