#pragma once

// Depth metrics, instance matching, AP/mAP and per-pixel depth recall.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <set>
#include <vector>

#include "planekit/geometry.hpp"
#include "planekit/image.hpp"

namespace planekit {

struct DepthMetricsReport {
    double abs_rel = 0;
    double sq_rel = 0;
    double rmse = 0;
    double log_rmse = 0;
    double delta1 = 0;
    double delta2 = 0;
    double delta3 = 0;
};

/// `gt` is the reference depth D, `pred` the estimate D*.
inline DepthMetricsReport depth_metrics(const ScalarMap& pred, const ScalarMap& gt, const Mask* valid = nullptr) {
    require(pred.same_shape(gt), Errc::invalid_input, "depth maps differ in shape");
    DepthMetricsReport r;
    std::size_t n = 0;
    double sq = 0;
    double log_sq = 0;
    std::size_t d1 = 0, d2 = 0, d3 = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        if (!is_set(valid, i)) {
            continue;
        }
        const double d = gt[i];
        const double e = pred[i];
        require(d > 0 && e > 0, Errc::invalid_input, "depths must be positive on valid pixels");
        const double diff = d - e;
        r.abs_rel += std::abs(diff) / d;
        r.sq_rel += diff * diff / d;
        sq += diff * diff;
        const double ld = std::log(d) - std::log(e);
        log_sq += ld * ld;
        const double ratio = std::max(d / e, e / d);
        d1 += ratio < 1.25 ? 1 : 0;
        d2 += ratio < 1.25 * 1.25 ? 1 : 0;
        d3 += ratio < 1.25 * 1.25 * 1.25 ? 1 : 0;
        ++n;
    }
    if (n == 0) {
        throw Error(Errc::empty_metric, "no valid pixels for depth metrics");
    }
    const double inv = 1.0 / static_cast<double>(n);
    r.abs_rel *= inv;
    r.sq_rel *= inv;
    r.rmse = std::sqrt(sq * inv);
    r.log_rmse = std::sqrt(log_sq * inv);
    r.delta1 = static_cast<double>(d1) * inv;
    r.delta2 = static_cast<double>(d2) * inv;
    r.delta3 = static_cast<double>(d3) * inv;
    return r;
}

/// Instance masks with per-instance class and (for predictions) score.
struct InstanceSet {
    InstanceMap map;
    std::map<std::int32_t, int> classes;
    std::map<std::int32_t, double> scores;

    std::set<std::int32_t> ids() const {
        std::set<std::int32_t> out;
        for (auto id : map.data()) {
            if (id > 0) {
                out.insert(id);
            }
        }
        return out;
    }
};

struct Match {
    std::int32_t pred_id = 0;
    std::int32_t gt_id = 0;
    double iou = 0;
};

struct Detection {
    std::int32_t pred_id = 0;
    double score = 0;
    bool true_positive = false;
};

struct MatchResult {
    std::vector<Match> matches;
    /// Every considered prediction in descending score order.
    std::vector<Detection> detections;
    std::size_t gt_count = 0;
};

inline constexpr double kDefaultIouMin = 0.5;

/// Greedy matching in descending score order (ties: lower prediction id).
/// Each prediction claims the unclaimed ground-truth instance of highest IoU
/// (ties: lower ground-truth id) if that IoU reaches iou_min. With
/// `only_class` set, both sides are restricted to that class.
inline MatchResult match_instances(const InstanceSet& pred, const InstanceSet& gt, double iou_min = kDefaultIouMin,
                                   std::optional<int> only_class = std::nullopt) {
    require(pred.map.same_shape(gt.map), Errc::invalid_input, "instance maps differ in shape");
    auto class_of = [](const InstanceSet& s, std::int32_t id) {
        const auto it = s.classes.find(id);
        return it == s.classes.end() ? -1 : it->second;
    };
    auto keep = [&](const InstanceSet& s, std::int32_t id) { return !only_class || class_of(s, id) == *only_class; };

    std::map<std::int32_t, std::size_t> pred_area, gt_area;
    std::map<std::pair<std::int32_t, std::int32_t>, std::size_t> inter;
    for (std::size_t i = 0; i < gt.map.size(); ++i) {
        const auto p = pred.map[i];
        const auto g = gt.map[i];
        const bool pk = p > 0 && keep(pred, p);
        const bool gk = g > 0 && keep(gt, g);
        if (pk) {
            ++pred_area[p];
        }
        if (gk) {
            ++gt_area[g];
        }
        if (pk && gk) {
            ++inter[{p, g}];
        }
    }

    std::vector<std::int32_t> order;
    for (const auto& [id, area] : pred_area) {
        order.push_back(id);
    }
    auto score_of = [&](std::int32_t id) {
        const auto it = pred.scores.find(id);
        return it == pred.scores.end() ? 0.0 : it->second;
    };
    std::stable_sort(order.begin(), order.end(),
                     [&](std::int32_t a, std::int32_t b) { return score_of(a) > score_of(b); });

    MatchResult out;
    out.gt_count = gt_area.size();
    std::set<std::int32_t> claimed;
    for (const auto pid : order) {
        Detection det{pid, score_of(pid), false};
        double best_iou = -1;
        std::int32_t best_gt = 0;
        for (const auto& [gid, garea] : gt_area) {
            if (claimed.count(gid)) {
                continue;
            }
            const auto it = inter.find({pid, gid});
            const std::size_t common = it == inter.end() ? 0 : it->second;
            const double iou =
                static_cast<double>(common) / static_cast<double>(pred_area[pid] + garea - common);
            if (iou > best_iou) {
                best_iou = iou;
                best_gt = gid;
            }
        }
        if (best_gt > 0 && best_iou >= iou_min) {
            claimed.insert(best_gt);
            out.matches.push_back({pid, best_gt, best_iou});
            det.true_positive = true;
        }
        out.detections.push_back(det);
    }
    return out;
}

/// Area under the all-point interpolated precision/recall curve.
inline double average_precision(std::vector<Detection> detections, std::size_t gt_count) {
    require(gt_count >= 1, Errc::invalid_input, "average precision needs at least one ground-truth instance");
    std::stable_sort(detections.begin(), detections.end(),
                     [](const Detection& a, const Detection& b) { return a.score > b.score; });
    std::vector<double> recall, precision;
    std::size_t tp = 0;
    for (std::size_t k = 0; k < detections.size(); ++k) {
        tp += detections[k].true_positive ? 1 : 0;
        recall.push_back(static_cast<double>(tp) / static_cast<double>(gt_count));
        precision.push_back(static_cast<double>(tp) / static_cast<double>(k + 1));
    }
    for (std::size_t k = precision.size(); k-- > 1;) {
        precision[k - 1] = std::max(precision[k - 1], precision[k]);
    }
    double ap = 0;
    double prev_recall = 0;
    for (std::size_t k = 0; k < recall.size(); ++k) {
        ap += (recall[k] - prev_recall) * precision[k];
        prev_recall = recall[k];
    }
    return ap;
}

struct DetectionReport {
    double ap = 0;
    double map = 0;
    std::map<int, double> per_class_ap;
    std::vector<Match> matches;
};

/// Mean of per-class AP over classes with at least one ground-truth instance.
inline double mean_ap(const InstanceSet& pred, const InstanceSet& gt, double iou_min,
                      std::map<int, double>* per_class = nullptr) {
    std::set<int> gt_classes;
    for (const auto id : gt.ids()) {
        const auto it = gt.classes.find(id);
        gt_classes.insert(it == gt.classes.end() ? -1 : it->second);
    }
    require(!gt_classes.empty(), Errc::invalid_input, "mean AP needs at least one ground-truth class");
    double sum = 0;
    for (const int c : gt_classes) {
        const auto m = match_instances(pred, gt, iou_min, c);
        const double ap = average_precision(m.detections, m.gt_count);
        if (per_class) {
            (*per_class)[c] = ap;
        }
        sum += ap;
    }
    return sum / static_cast<double>(gt_classes.size());
}

inline DetectionReport detection_metrics(const InstanceSet& pred, const InstanceSet& gt,
                                         double iou_min = kDefaultIouMin) {
    DetectionReport r;
    const auto m = match_instances(pred, gt, iou_min);
    r.matches = m.matches;
    r.ap = average_precision(m.detections, m.gt_count);
    r.map = mean_ap(pred, gt, iou_min, &r.per_class_ap);
    return r;
}

struct RecallCurve {
    std::vector<double> thresholds;
    std::vector<double> recall;
};

inline std::vector<double> default_recall_thresholds() {
    std::vector<double> t;
    for (int k = 1; k <= 12; ++k) {
        t.push_back(0.05 * k);
    }
    return t;
}

/// Fraction of ground-truth planar pixels that belong to a matched instance
/// and whose depth induced by the predicted plane map is within each
/// threshold of the ground-truth depth.
inline RecallCurve pixel_recall_curve(const VectorMap& pred_planes, const InstanceSet& pred, const InstanceSet& gt,
                                      const ScalarMap& gt_depth, const CameraIntrinsics& k,
                                      const std::vector<double>& thresholds, double iou_min = kDefaultIouMin) {
    require(std::is_sorted(thresholds.begin(), thresholds.end()), Errc::invalid_input,
            "recall thresholds must be ascending");
    require(pred_planes.channels() == 3 && pred_planes.same_shape(gt.map) && gt_depth.same_shape(gt.map) &&
                gt.map.same_shape(k.height, k.width),
            Errc::invalid_input, "recall inputs differ in shape");
    const auto m = match_instances(pred, gt, iou_min);
    std::set<std::int32_t> matched_gt;
    for (const auto& match : m.matches) {
        matched_gt.insert(match.gt_id);
    }
    std::vector<double> errors;
    std::size_t planar = 0;
    const int w = gt.map.width();
    for (std::size_t i = 0; i < gt.map.size(); ++i) {
        const auto g = gt.map[i];
        if (g <= 0) {
            continue;
        }
        ++planar;
        if (!matched_gt.count(g)) {
            continue;
        }
        const auto px = pred_planes.pixel(i);
        const auto depth = try_plane_induced_depth(k, Vec3(px[0], px[1], px[2]), static_cast<double>(i % w),
                                                   static_cast<double>(i / w));
        if (depth) {
            errors.push_back(std::abs(gt_depth[i] - *depth));
        }
    }
    if (planar == 0) {
        throw Error(Errc::empty_metric, "no ground-truth planar pixels");
    }
    std::sort(errors.begin(), errors.end());
    RecallCurve curve{thresholds, {}};
    for (const double t : thresholds) {
        const auto hits = std::upper_bound(errors.begin(), errors.end(), t) - errors.begin();
        curve.recall.push_back(static_cast<double>(hits) / static_cast<double>(planar));
    }
    return curve;
}

} // namespace planekit
