#pragma once

// Plane supervision losses (per-pixel plane parameters p = n d), the mask and
// category losses, and their analytic gradients.

#include <cmath>
#include <cstddef>
#include <vector>

#include "planekit/geometry.hpp"
#include "planekit/image.hpp"

namespace planekit {

enum class PlaneNorm { l1, euclidean };

enum class EdgeWeighting {
    /// Each depth/geometry term multiplied by G.
    literal,
    /// Each term multiplied by 1 + G.
    one_plus,
};

struct LossWeights {
    double mask_weight = 3.0;
    bool use_plane = true;
    bool use_surface = true;
    bool use_geom = true;
    bool use_depth = true;
    bool gradient_weighting = false;
    EdgeWeighting edge_weighting = EdgeWeighting::literal;
    PlaneNorm plane_norm = PlaneNorm::l1;
    double focal_alpha = 0.25;
    double focal_gamma = 2.0;

    void validate() const {
        require(mask_weight > 0, Errc::invalid_input, "mask weight must be positive");
        require(focal_alpha > 0 && focal_alpha < 1, Errc::invalid_input, "focal alpha must lie in (0, 1)");
        require(focal_gamma >= 0, Errc::invalid_input, "focal gamma must be non-negative");
    }
};

struct LossReport {
    double l_plane = 0;
    double l_surface = 0;
    double l_geom = 0;
    double l_depth = 0;
    double l_p = 0;
    double l_mask = 0;
    double l_category = 0;
    double l_total = 0;
    std::size_t valid_pixel_count = 0;
    std::size_t excluded_pixel_count = 0;
};

/// One map-level loss term with its gradient w.r.t. the predicted plane map.
struct PlaneTerm {
    double value = 0;
    std::size_t pixels = 0;
    std::size_t excluded = 0;
    VectorMap grad;
};

namespace detail {

inline void check_plane_maps(const VectorMap& pred, const VectorMap& gt) {
    require(pred.channels() == 3 && gt.channels() == 3, Errc::invalid_input, "plane maps need 3 channels");
    require(pred.same_shape(gt), Errc::invalid_input, "plane map shapes differ");
}

inline double sign(double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); }

inline Vec3 at3(const VectorMap& m, std::size_t i) {
    const auto px = m.pixel(i);
    return {px[0], px[1], px[2]};
}

inline void put3(VectorMap& m, std::size_t i, const Vec3& v) {
    auto px = m.pixel(i);
    px[0] = v.x();
    px[1] = v.y();
    px[2] = v.z();
}

/// Scales accumulated per-pixel gradients by 1/N and returns the mean.
inline void finish_mean(PlaneTerm& term, double sum, const char* name) {
    if (term.pixels == 0) {
        throw Error(Errc::empty_loss, std::string(name) + " has no valid pixels");
    }
    const double inv = 1.0 / static_cast<double>(term.pixels);
    term.value = sum * inv;
    for (auto& g : term.grad.data()) {
        g *= inv;
    }
}

inline double edge_weight(const ScalarMap* g, EdgeWeighting mode, std::size_t i) {
    if (g == nullptr) {
        return 1.0;
    }
    return mode == EdgeWeighting::literal ? (*g)[i] : 1.0 + (*g)[i];
}

} // namespace detail

/// Mean over valid pixels of |p - p*|_1 (or |p - p*|_2).
inline PlaneTerm l_plane(const VectorMap& pred, const VectorMap& gt, const Mask* valid = nullptr,
                         PlaneNorm norm = PlaneNorm::l1) {
    detail::check_plane_maps(pred, gt);
    PlaneTerm term{0, 0, 0, VectorMap(pred.height(), pred.width(), 3)};
    double sum = 0;
    for (std::size_t i = 0; i < pred.pixels(); ++i) {
        if (!is_set(valid, i)) {
            continue;
        }
        const Vec3 diff = detail::at3(pred, i) - detail::at3(gt, i);
        if (norm == PlaneNorm::l1) {
            sum += diff.cwiseAbs().sum();
            detail::put3(term.grad, i, Vec3(detail::sign(diff.x()), detail::sign(diff.y()), detail::sign(diff.z())));
        } else {
            const double len = diff.norm();
            sum += len;
            if (len > 0) {
                detail::put3(term.grad, i, diff / len);
            }
        }
        ++term.pixels;
    }
    detail::finish_mean(term, sum, "plane loss");
    return term;
}

/// Mean of 1 - cos(p, p*). Pixels with near-zero vectors are excluded.
inline PlaneTerm l_surface(const VectorMap& pred, const VectorMap& gt, const Mask* valid = nullptr) {
    detail::check_plane_maps(pred, gt);
    PlaneTerm term{0, 0, 0, VectorMap(pred.height(), pred.width(), 3)};
    double sum = 0;
    for (std::size_t i = 0; i < pred.pixels(); ++i) {
        if (!is_set(valid, i)) {
            continue;
        }
        const Vec3 p = detail::at3(pred, i);
        const Vec3 g = detail::at3(gt, i);
        const double np = p.norm();
        const double ng = g.norm();
        if (!(np > kPlaneEpsilon) || !(ng > kPlaneEpsilon)) {
            ++term.excluded;
            continue;
        }
        const double sim = p.dot(g) / (np * ng);
        sum += 1.0 - sim;
        detail::put3(term.grad, i, -(g / (np * ng) - sim * p / (np * np)));
        ++term.pixels;
    }
    detail::finish_mean(term, sum, "surface loss");
    return term;
}

/// Mean of w_i |D_i - D*_i| with D* the depth induced by the predicted plane.
/// Pixels whose predicted plane is zero, parallel to the ray or met behind the
/// camera (D* <= 0) are excluded.
inline PlaneTerm l_depth(const VectorMap& pred, const ScalarMap& gt_depth, const CameraIntrinsics& k,
                         const Mask* valid = nullptr, const ScalarMap* edge = nullptr,
                         EdgeWeighting mode = EdgeWeighting::literal) {
    require(pred.channels() == 3 && pred.same_shape(gt_depth), Errc::invalid_input, "depth loss shape mismatch");
    require(pred.same_shape(k.height, k.width), Errc::invalid_input, "depth loss intrinsics mismatch");
    require(edge == nullptr || edge->same_shape(pred), Errc::invalid_input, "edge weight shape mismatch");
    PlaneTerm term{0, 0, 0, VectorMap(pred.height(), pred.width(), 3)};
    double sum = 0;
    const int w = pred.width();
    for (std::size_t i = 0; i < pred.pixels(); ++i) {
        if (!is_set(valid, i)) {
            continue;
        }
        const Vec3 p = detail::at3(pred, i);
        const Vec3 ray = k.ray(static_cast<double>(i % w), static_cast<double>(i / w));
        const double pp = p.squaredNorm();
        const double pr = p.dot(ray);
        const double np = std::sqrt(pp);
        if (!(np > kPlaneEpsilon) || !(pr / np >= kRayEpsilon)) {
            ++term.excluded;
            continue;
        }
        const double induced = pp / pr;
        const double weight = detail::edge_weight(edge, mode, i);
        const double diff = gt_depth[i] - induced;
        sum += weight * std::abs(diff);
        // dD*/dp = 2p/(p.r) - D* r/(p.r)
        const Vec3 d_induced = (2.0 * p - induced * ray) / pr;
        detail::put3(term.grad, i, -weight * detail::sign(diff) * d_induced);
        ++term.pixels;
    }
    detail::finish_mean(term, sum, "depth loss");
    return term;
}

/// Mean of w_i |n*^T Q_i - d*| with Q_i = D_i K^-1 q_i from ground-truth depth.
inline PlaneTerm l_geom(const VectorMap& pred, const ScalarMap& gt_depth, const CameraIntrinsics& k,
                        const Mask* valid = nullptr, const ScalarMap* edge = nullptr,
                        EdgeWeighting mode = EdgeWeighting::literal) {
    require(pred.channels() == 3 && pred.same_shape(gt_depth), Errc::invalid_input, "geometry loss shape mismatch");
    require(pred.same_shape(k.height, k.width), Errc::invalid_input, "geometry loss intrinsics mismatch");
    require(edge == nullptr || edge->same_shape(pred), Errc::invalid_input, "edge weight shape mismatch");
    PlaneTerm term{0, 0, 0, VectorMap(pred.height(), pred.width(), 3)};
    double sum = 0;
    const int w = pred.width();
    for (std::size_t i = 0; i < pred.pixels(); ++i) {
        if (!is_set(valid, i)) {
            continue;
        }
        const Vec3 p = detail::at3(pred, i);
        const double np = p.norm();
        if (!(np > kPlaneEpsilon)) {
            ++term.excluded;
            continue;
        }
        const Vec3 q = gt_depth[i] * k.ray(static_cast<double>(i % w), static_cast<double>(i / w));
        const double pq = p.dot(q);
        const double residual = pq / np - np;
        const double weight = detail::edge_weight(edge, mode, i);
        sum += weight * std::abs(residual);
        const Vec3 d_residual = q / np - pq * p / (np * np * np) - p / np;
        detail::put3(term.grad, i, weight * detail::sign(residual) * d_residual);
        ++term.pixels;
    }
    detail::finish_mean(term, sum, "geometry loss");
    return term;
}

struct PlaneLossResult {
    LossReport report;
    VectorMap grad;
};

/// L_P = L_plane + L_surface + L_geom + L_depth over `valid`. The plane and
/// surface terms additionally need a labeled (nonzero) ground-truth plane;
/// the depth terms need positive ground-truth depth.
inline PlaneLossResult total_plane_loss(const VectorMap& pred, const VectorMap& gt_plane, const ScalarMap& gt_depth,
                                        const CameraIntrinsics& k, const Mask* valid, const LossWeights& weights,
                                        const ScalarMap* edge = nullptr) {
    weights.validate();
    detail::check_plane_maps(pred, gt_plane);
    require(pred.same_shape(gt_depth), Errc::invalid_input, "depth map shape mismatch");
    const int h = pred.height();
    const int w = pred.width();
    Mask labeled(h, w);
    Mask with_depth(h, w);
    PlaneLossResult out{{}, VectorMap(h, w, 3)};
    for (std::size_t i = 0; i < pred.pixels(); ++i) {
        if (!is_set(valid, i)) {
            continue;
        }
        ++out.report.valid_pixel_count;
        labeled[i] = detail::at3(gt_plane, i).norm() > kPlaneEpsilon ? 1 : 0;
        with_depth[i] = gt_depth[i] > 0 ? 1 : 0;
    }
    auto accumulate = [&](const PlaneTerm& term, double& slot) {
        slot = term.value;
        out.report.excluded_pixel_count += term.excluded;
        for (std::size_t j = 0; j < out.grad.size(); ++j) {
            out.grad[j] += term.grad[j];
        }
    };
    const ScalarMap* g = weights.gradient_weighting ? edge : nullptr;
    require(!weights.gradient_weighting || edge != nullptr, Errc::invalid_input,
            "gradient weighting enabled without an image-gradient map");
    if (weights.use_plane) {
        accumulate(l_plane(pred, gt_plane, &labeled, weights.plane_norm), out.report.l_plane);
    }
    if (weights.use_surface) {
        accumulate(l_surface(pred, gt_plane, &labeled), out.report.l_surface);
    }
    if (weights.use_geom) {
        accumulate(l_geom(pred, gt_depth, k, &with_depth, g, weights.edge_weighting), out.report.l_geom);
    }
    if (weights.use_depth) {
        accumulate(l_depth(pred, gt_depth, k, &with_depth, g, weights.edge_weighting), out.report.l_depth);
    }
    out.report.l_p = out.report.l_plane + out.report.l_surface + out.report.l_geom + out.report.l_depth;
    out.report.l_total = out.report.l_p;
    return out;
}

struct MaskTerm {
    double value = 0;
    ScalarMap grad;
};

inline constexpr double kDiceEpsilon = 1e-8;

/// 1 - 2 sum(m m*) / (sum m^2 + sum m*^2 + eps).
inline MaskTerm dice_loss(const ScalarMap& pred, const ScalarMap& gt) {
    require(pred.same_shape(gt) && pred.channels() == 1 && gt.channels() == 1, Errc::invalid_input,
            "dice loss shape mismatch");
    double inter = 0;
    double denom = kDiceEpsilon;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        inter += pred[i] * gt[i];
        denom += pred[i] * pred[i] + gt[i] * gt[i];
    }
    MaskTerm out{1.0 - 2.0 * inter / denom, ScalarMap(pred.height(), pred.width())};
    for (std::size_t i = 0; i < pred.size(); ++i) {
        out.grad[i] = -2.0 * gt[i] / denom + 4.0 * inter * pred[i] / (denom * denom);
    }
    return out;
}

/// SOLO-style category grid: S x S cells, per-cell class scores after sigmoid.
struct CategoryGrid {
    int size = 0;
    int classes = 0;
    /// size * size * classes, cell-major.
    std::vector<double> scores;
    /// size * size, -1 = no instance.
    std::vector<int> targets;

    void validate() const {
        require(size > 0 && classes > 0, Errc::invalid_input, "category grid needs positive size and class count");
        require(scores.size() == static_cast<std::size_t>(size) * size * classes &&
                    targets.size() == static_cast<std::size_t>(size) * size,
                Errc::invalid_input, "category grid array sizes do not match");
        for (int t : targets) {
            require(t >= -1 && t < classes, Errc::invalid_input, "category target out of range");
        }
    }
};

struct CategoryTerm {
    double value = 0;
    std::size_t positive_cells = 0;
    std::vector<double> grad;
};

/// Focal loss restricted to cells that contain an instance, averaged over
/// those cells. Every class at a positive cell contributes.
inline CategoryTerm focal_loss_positive(const CategoryGrid& grid, double alpha = 0.25, double gamma = 2.0) {
    grid.validate();
    constexpr double floor = 1e-12;
    CategoryTerm out{0, 0, std::vector<double>(grid.scores.size(), 0.0)};
    double sum = 0;
    for (std::size_t cell = 0; cell < grid.targets.size(); ++cell) {
        if (grid.targets[cell] < 0) {
            continue;
        }
        ++out.positive_cells;
        for (int c = 0; c < grid.classes; ++c) {
            const std::size_t idx = cell * grid.classes + c;
            const bool positive = c == grid.targets[cell];
            const double score = grid.scores[idx];
            const double pt = std::max(positive ? score : 1.0 - score, floor);
            const double log_pt = std::log(pt);
            const double one_minus = 1.0 - pt;
            sum += -alpha * std::pow(one_minus, gamma) * log_pt;
            // d/dpt of -alpha (1-pt)^gamma log pt
            double d_pt = -alpha * std::pow(one_minus, gamma) / pt;
            if (gamma > 0 && one_minus > 0) {
                d_pt += alpha * gamma * std::pow(one_minus, gamma - 1.0) * log_pt;
            }
            out.grad[idx] = positive ? d_pt : -d_pt;
        }
    }
    if (out.positive_cells == 0) {
        throw Error(Errc::empty_loss, "focal loss has no positive cells");
    }
    const double inv = 1.0 / static_cast<double>(out.positive_cells);
    out.value = sum * inv;
    for (auto& g : out.grad) {
        g *= inv;
    }
    return out;
}

/// L_total = w_M L_M + L_C + L_P.
inline LossReport combined_loss(LossReport plane, double mask_loss, double category_loss, const LossWeights& weights) {
    weights.validate();
    plane.l_mask = mask_loss;
    plane.l_category = category_loss;
    plane.l_total = plane.l_mask * weights.mask_weight + plane.l_category + plane.l_p;
    return plane;
}

} // namespace planekit
