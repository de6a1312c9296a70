#pragma once

// Pinhole camera math, plane-parameter algebra and cross-view warping.

#include <algorithm>
#include <cmath>
#include <optional>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "planekit/error.hpp"
#include "planekit/image.hpp"
#include "planekit/parallel.hpp"

namespace planekit {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

inline constexpr double kRayEpsilon = 1e-8;
inline constexpr double kPlaneEpsilon = 1e-8;
inline constexpr double kDefaultOcclusionTolerance = 0.05;

struct CameraIntrinsics {
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;
    int width = 0;
    int height = 0;

    bool valid() const {
        return fx > 0 && fy > 0 && cx > 0 && cx < width && cy > 0 && cy < height;
    }

    void validate() const { require(valid(), Errc::invalid_input, "camera intrinsics violate fx,fy > 0 and principal point inside image"); }

    /// K^-1 (u, v, 1).
    Vec3 ray(double u, double v) const { return {(u - cx) / fx, (v - cy) / fy, 1.0}; }

    Vec2 project(const Vec3& point) const {
        return {fx * point.x() / point.z() + cx, fy * point.y() / point.z() + cy};
    }

    bool in_bounds(double u, double v) const {
        return u >= 0.0 && v >= 0.0 && u <= width - 1 && v <= height - 1;
    }

    Mat3 matrix() const {
        Mat3 k;
        k << fx, 0, cx, 0, fy, cy, 0, 0, 1;
        return k;
    }

    /// Intrinsics of the grid that keeps every stride-th pixel (pixel j maps
    /// to full-resolution pixel stride * j).
    CameraIntrinsics subsampled(int stride) const {
        require(stride >= 1 && width % stride == 0 && height % stride == 0, Errc::invalid_input,
                "image size must be divisible by the feature stride");
        const double s = stride;
        return {fx / s, fy / s, cx / s, cy / s, width / stride, height / stride};
    }

    bool operator==(const CameraIntrinsics&) const = default;
};

/// Default pinhole camera for a W x H image (about 60 degrees horizontal FOV).
inline CameraIntrinsics default_camera(int width, int height) {
    const double f = 0.866 * width;
    return {f, f, (width - 1) / 2.0, (height - 1) / 2.0, width, height};
}

/// Rigid motion Q' = R Q + t.
struct RigidTransform {
    Mat3 R = Mat3::Identity();
    Vec3 t = Vec3::Zero();

    static RigidTransform identity() { return {}; }

    static RigidTransform from_matrix(const Mat4& m) {
        require(std::abs(m(3, 0)) < 1e-12 && std::abs(m(3, 1)) < 1e-12 && std::abs(m(3, 2)) < 1e-12 &&
                    std::abs(m(3, 3) - 1.0) < 1e-12,
                Errc::invalid_input, "4x4 transform bottom row must be (0,0,0,1)");
        RigidTransform out{m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>()};
        out.validate();
        return out;
    }

    Mat4 matrix() const {
        Mat4 m = Mat4::Identity();
        m.topLeftCorner<3, 3>() = R;
        m.topRightCorner<3, 1>() = t;
        return m;
    }

    bool valid(double tol = 1e-9) const {
        return (R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
               std::abs(R.determinant() - 1.0) <= tol && t.allFinite();
    }

    void validate() const { require(valid(), Errc::invalid_input, "rotation must be orthonormal with det 1"); }

    Vec3 apply(const Vec3& q) const { return R * q + t; }

    RigidTransform inverse() const {
        const Mat3 rt = R.transpose();
        return {rt, -rt * t};
    }
};

/// a ∘ b: apply b first, then a.
inline RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
    return {a.R * b.R, a.R * b.t + a.t};
}

/// Plane n^T Q = d stored as p = n * d (d > 0).
struct PlaneParams {
    Vec3 p = Vec3::Zero();

    static PlaneParams compose(const Vec3& normal, double offset) {
        require(normal.norm() > 0 && offset > 0, Errc::invalid_input, "plane needs a nonzero normal and positive offset");
        return {normal.normalized() * offset};
    }

    bool valid() const { return p.norm() > kPlaneEpsilon; }
    Vec3 normal() const { return p / p.norm(); }
    double offset() const { return p.norm(); }

    /// Signed distance-like residual n^T Q - d.
    double residual(const Vec3& q) const { return normal().dot(q) - offset(); }
};

inline Vec3 backproject(const CameraIntrinsics& k, double u, double v, double depth) {
    require(depth > 0, Errc::invalid_input, "backprojection depth must be positive");
    require(k.in_bounds(u, v), Errc::invalid_input, "pixel outside the image");
    return depth * k.ray(u, v);
}

/// Ray/plane depth d / (n^T K^-1 q); nullopt when |n^T K^-1 q| < kRayEpsilon.
inline std::optional<double> try_plane_induced_depth(const CameraIntrinsics& k, const Vec3& p, double u, double v) {
    const double norm = p.norm();
    if (!(norm > kPlaneEpsilon)) {
        return std::nullopt;
    }
    const double denom = p.dot(k.ray(u, v)) / norm;
    if (!(std::abs(denom) >= kRayEpsilon)) {
        return std::nullopt;
    }
    return norm / denom;
}

inline double plane_induced_depth(const CameraIntrinsics& k, const PlaneParams& plane, double u, double v) {
    require(plane.valid(), Errc::invalid_input, "plane parameters must be nonzero");
    const auto depth = try_plane_induced_depth(k, plane.p, u, v);
    if (!depth) {
        throw Error(Errc::degenerate_ray, "camera ray is parallel to the plane");
    }
    return *depth;
}

/// Re-expresses a plane under Q' = R Q + t: n' = R n, d' = d + (R n)^T t.
/// nullopt when the plane passes through (or behind) the new camera origin.
inline std::optional<Vec3> try_transform_plane(const RigidTransform& tf, const Vec3& p) {
    const double d = p.norm();
    if (!(d > kPlaneEpsilon)) {
        return std::nullopt;
    }
    const Vec3 n = tf.R * (p / d);
    const double d_new = d + n.dot(tf.t);
    if (!(d_new > 0)) {
        return std::nullopt;
    }
    return n * d_new;
}

inline PlaneParams transform_plane(const RigidTransform& tf, const PlaneParams& plane) {
    require(plane.valid(), Errc::invalid_input, "plane parameters must be nonzero");
    const auto out = try_transform_plane(tf, plane.p);
    if (!out) {
        throw Error(Errc::plane_through_origin, "transformed plane crosses the camera center");
    }
    return {*out};
}

/// Vector-Jacobian product of try_transform_plane: given dL/dp' returns dL/dp.
/// With w = R p:  p' = w + w (w.t) / (w.w).
inline Vec3 transform_plane_vjp(const RigidTransform& tf, const Vec3& p, const Vec3& grad_out) {
    const Vec3 w = tf.R * p;
    const double ww = w.squaredNorm();
    const double wt = w.dot(tf.t);
    // J = I + (wt I + w t^T) / ww - 2 wt w w^T / ww^2
    const Vec3 grad_w = grad_out + (wt * grad_out + tf.t * w.dot(grad_out)) / ww -
                        (2.0 * wt / (ww * ww)) * w * w.dot(grad_out);
    return tf.R.transpose() * grad_w;
}

struct WarpGrid {
    int height = 0;
    int width = 0;
    /// (u, v) sample location in the neighbour image, C = 2.
    VectorMap coords;
    Mask valid;
    /// z of the source point in neighbour camera coordinates.
    ScalarMap depth;
};

inline WarpGrid compute_warp_grid(const CameraIntrinsics& k_src, const CameraIntrinsics& k_nbr,
                                  const ScalarMap& depth_src, const RigidTransform& src_to_nbr) {
    require(depth_src.same_shape(k_src.height, k_src.width), Errc::invalid_input,
            "source depth must match source intrinsics");
    const int h = depth_src.height();
    const int w = depth_src.width();
    WarpGrid grid{h, w, VectorMap(h, w, 2), Mask(h, w), ScalarMap(h, w)};
    const bool identity_pose = src_to_nbr.R == Mat3::Identity() && src_to_nbr.t.isZero();
    const bool same_camera = identity_pose && k_src == k_nbr;
    parallel_rows(h, [&](int row) {
        for (int col = 0; col < w; ++col) {
            const double z = depth_src(row, col);
            if (!(z > 0)) {
                continue;
            }
            if (same_camera) {
                grid.coords(row, col, 0) = col;
                grid.coords(row, col, 1) = row;
                grid.depth(row, col) = z;
                grid.valid(row, col) = 1;
                continue;
            }
            const Vec3 q_nbr = src_to_nbr.apply(z * k_src.ray(col, row));
            grid.depth(row, col) = q_nbr.z();
            if (!(q_nbr.z() > 0)) {
                continue;
            }
            const Vec2 uv = k_nbr.project(q_nbr);
            grid.coords(row, col, 0) = uv.x();
            grid.coords(row, col, 1) = uv.y();
            grid.valid(row, col) = k_nbr.in_bounds(uv.x(), uv.y()) ? 1 : 0;
        }
    });
    return grid;
}

namespace detail {

struct BilinearTaps {
    int x0, x1, y0, y1;
    double ax, ay;
};

inline BilinearTaps taps(int height, int width, double u, double v) {
    BilinearTaps t{};
    t.x0 = std::min(static_cast<int>(std::floor(u)), std::max(width - 2, 0));
    t.y0 = std::min(static_cast<int>(std::floor(v)), std::max(height - 2, 0));
    t.x1 = std::min(t.x0 + 1, width - 1);
    t.y1 = std::min(t.y0 + 1, height - 1);
    t.ax = u - t.x0;
    t.ay = v - t.y0;
    return t;
}

} // namespace detail

/// Bilinear value of channel ch at in-bounds (u, v).
template <typename T>
double sample_bilinear(const Image<T>& src, double u, double v, int ch = 0) {
    const auto t = detail::taps(src.height(), src.width(), u, v);
    const double top = (1.0 - t.ax) * src(t.y0, t.x0, ch) + t.ax * src(t.y0, t.x1, ch);
    const double bottom = (1.0 - t.ax) * src(t.y1, t.x0, ch) + t.ax * src(t.y1, t.x1, ch);
    return (1.0 - t.ay) * top + t.ay * bottom;
}

struct SampledMap {
    VectorMap values;
    /// 1 where the grid entry was valid, else 0.
    ScalarMap weight;
};

inline SampledMap bilinear_sample(const VectorMap& src, const WarpGrid& grid) {
    require(grid.coords.same_shape(grid.height, grid.width), Errc::invalid_input, "malformed warp grid");
    SampledMap out{VectorMap(grid.height, grid.width, src.channels()), ScalarMap(grid.height, grid.width)};
    parallel_rows(grid.height, [&](int row) {
        for (int col = 0; col < grid.width; ++col) {
            if (!grid.valid(row, col)) {
                continue;
            }
            const double u = grid.coords(row, col, 0);
            const double v = grid.coords(row, col, 1);
            for (int c = 0; c < src.channels(); ++c) {
                out.values(row, col, c) = sample_bilinear(src, u, v, c);
            }
            out.weight(row, col) = 1.0;
        }
    });
    return out;
}

/// Valid warps whose neighbour-frame depth agrees with the neighbour depth map.
inline Mask outprojection_mask(const WarpGrid& grid, const ScalarMap& depth_src, const ScalarMap& depth_nbr,
                               double occlusion_tol = kDefaultOcclusionTolerance) {
    require(depth_src.same_shape(grid.height, grid.width), Errc::invalid_input, "source depth must match warp grid");
    require(occlusion_tol > 0, Errc::invalid_input, "occlusion tolerance must be positive");
    Mask mask(grid.height, grid.width);
    parallel_rows(grid.height, [&](int row) {
        for (int col = 0; col < grid.width; ++col) {
            if (!grid.valid(row, col) || !(depth_src(row, col) > 0)) {
                continue;
            }
            const double observed = sample_bilinear(depth_nbr, grid.coords(row, col, 0), grid.coords(row, col, 1));
            mask(row, col) = std::abs(grid.depth(row, col) - observed) <= occlusion_tol ? 1 : 0;
        }
    });
    return mask;
}

/// Sobel magnitude of luminance, normalized by its maximum (0 if flat).
inline ScalarMap image_gradient(const VectorMap& rgb) {
    require(rgb.channels() == 3, Errc::invalid_input, "image_gradient expects an RGB map");
    const int h = rgb.height();
    const int w = rgb.width();
    ScalarMap luma(h, w);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            luma(r, c) = 0.299 * rgb(r, c, 0) + 0.587 * rgb(r, c, 1) + 0.114 * rgb(r, c, 2);
        }
    }
    auto at = [&](int r, int c) { return luma(std::clamp(r, 0, h - 1), std::clamp(c, 0, w - 1)); };
    ScalarMap grad(h, w);
    double peak = 0.0;
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const double gx = (at(r - 1, c + 1) + 2 * at(r, c + 1) + at(r + 1, c + 1)) -
                              (at(r - 1, c - 1) + 2 * at(r, c - 1) + at(r + 1, c - 1));
            const double gy = (at(r + 1, c - 1) + 2 * at(r + 1, c) + at(r + 1, c + 1)) -
                              (at(r - 1, c - 1) + 2 * at(r - 1, c) + at(r - 1, c + 1));
            grad(r, c) = std::hypot(gx, gy);
            peak = std::max(peak, grad(r, c));
        }
    }
    if (peak > 0) {
        for (auto& g : grad.data()) {
            g /= peak;
        }
    } else {
        std::fill(grad.data().begin(), grad.data().end(), 0.0);
    }
    return grad;
}

/// Elementary rotations (radians).
inline Mat3 rot_x(double a) { return Eigen::AngleAxisd(a, Vec3::UnitX()).toRotationMatrix(); }
inline Mat3 rot_y(double a) { return Eigen::AngleAxisd(a, Vec3::UnitY()).toRotationMatrix(); }
inline Mat3 rot_z(double a) { return Eigen::AngleAxisd(a, Vec3::UnitZ()).toRotationMatrix(); }

} // namespace planekit
