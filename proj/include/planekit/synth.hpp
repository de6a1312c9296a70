#pragma once

// Synthetic piece-wise planar rooms and an exact ray-cast renderer. Every
// rendered quantity (depth, plane map, instance ids) is analytic, which makes
// the renderer the ground-truth oracle for geometry, loss and metric tests.

#include <array>
#include <cstdint>
#include <map>
#include <numbers>
#include <vector>

#include "planekit/geometry.hpp"
#include "planekit/rng.hpp"

namespace planekit {

namespace semantic {
inline constexpr int floor = 0;
inline constexpr int ceiling = 1;
inline constexpr int wall = 2;
/// Box classes are first_object .. first_object + object_kinds - 1.
inline constexpr int first_object = 3;
inline constexpr int object_kinds = 3;
inline constexpr int count = first_object + object_kinds;
} // namespace semantic

inline bool is_room_shell_class(int class_id) { return class_id < semantic::first_object; }

struct PlaneRect {
    PlaneParams plane;
    /// c0 -> c1 -> c2 -> c3 around the rectangle.
    std::array<Vec3, 4> corners;
    int class_id = 0;
    int instance_id = 1;
    Vec3 albedo = Vec3::Constant(0.5);

    /// Point-in-rectangle test for a point already on the plane.
    bool contains(const Vec3& q, double tol = 1e-9) const {
        const Vec3 e1 = corners[1] - corners[0];
        const Vec3 e2 = corners[3] - corners[0];
        const Vec3 rel = q - corners[0];
        const double a = rel.dot(e1) / e1.squaredNorm();
        const double b = rel.dot(e2) / e2.squaredNorm();
        return a >= -tol && a <= 1.0 + tol && b >= -tol && b <= 1.0 + tol;
    }
};

/// Axis-aligned room in world coordinates (x right, y down, z forward) that
/// contains the world origin, plus boxes resting on the floor.
struct PlanarScene {
    std::vector<PlaneRect> rects;
    std::uint64_t seed = 0;
    Vec3 room_min = Vec3::Zero();
    Vec3 room_max = Vec3::Zero();

    bool contains(const Vec3& point) const {
        return (point.array() > room_min.array()).all() && (point.array() < room_max.array()).all();
    }
};

struct RenderedView {
    CameraIntrinsics camera;
    /// world -> camera.
    RigidTransform pose;
    VectorMap rgb;
    ScalarMap depth;
    InstanceMap instances;
    /// Per-pixel p = n d in camera coordinates; zero where unlabeled.
    VectorMap plane_map;
    /// instance id -> semantic class.
    std::map<std::int32_t, int> classes;
};

struct StereoSample {
    RenderedView source;
    RenderedView neighbour;
    RigidTransform nbr_to_src;
    RigidTransform src_to_nbr;
};

namespace detail {

inline PlaneRect make_rect(const std::array<Vec3, 4>& corners, int class_id, int instance_id, const Vec3& albedo) {
    Vec3 n = (corners[1] - corners[0]).cross(corners[3] - corners[0]).normalized();
    double d = n.dot(corners[0]);
    if (d < 0) {
        n = -n;
        d = -d;
    }
    return {PlaneParams{n * d}, corners, class_id, instance_id, albedo};
}

/// Six faces of [lo, hi] in the order -x, +x, -y, +y, -z, +z.
inline std::array<std::array<Vec3, 4>, 6> box_faces(const Vec3& lo, const Vec3& hi) {
    auto p = [&](int ix, int iy, int iz) {
        return Vec3(ix ? hi.x() : lo.x(), iy ? hi.y() : lo.y(), iz ? hi.z() : lo.z());
    };
    return {{
        {p(0, 0, 0), p(0, 1, 0), p(0, 1, 1), p(0, 0, 1)},
        {p(1, 0, 0), p(1, 1, 0), p(1, 1, 1), p(1, 0, 1)},
        {p(0, 0, 0), p(1, 0, 0), p(1, 0, 1), p(0, 0, 1)},
        {p(0, 1, 0), p(1, 1, 0), p(1, 1, 1), p(0, 1, 1)},
        {p(0, 0, 0), p(1, 0, 0), p(1, 1, 0), p(0, 1, 0)},
        {p(0, 0, 1), p(1, 0, 1), p(1, 1, 1), p(0, 1, 1)},
    }};
}

/// Albedos with pairwise max-channel distance >= 0.1.
inline std::vector<Vec3> distinct_albedos(Rng& rng, std::size_t n) {
    std::vector<Vec3> out;
    while (out.size() < n) {
        Vec3 candidate;
        bool ok = false;
        for (int attempt = 0; attempt < 1000 && !ok; ++attempt) {
            candidate = Vec3(rng.uniform(0.15, 0.95), rng.uniform(0.15, 0.95), rng.uniform(0.15, 0.95));
            ok = true;
            for (const auto& other : out) {
                if ((candidate - other).cwiseAbs().maxCoeff() < 0.1) {
                    ok = false;
                    break;
                }
            }
        }
        require(ok, Errc::invalid_input, "too many instances for distinct albedos");
        out.push_back(candidate);
    }
    return out;
}

} // namespace detail

inline PlanarScene generate_scene(std::uint64_t seed, int n_boxes) {
    require(n_boxes >= 0, Errc::invalid_input, "box count must be non-negative");
    Rng rng(seed);
    PlanarScene scene;
    scene.seed = seed;
    scene.room_min = Vec3(-rng.uniform(2.0, 3.0), -rng.uniform(1.2, 1.6), -rng.uniform(1.0, 1.5));
    scene.room_max = Vec3(rng.uniform(2.0, 3.0), rng.uniform(1.2, 1.5), rng.uniform(3.0, 4.5));
    const auto albedos = detail::distinct_albedos(rng, 6 + 6 * static_cast<std::size_t>(n_boxes));

    const auto shell = detail::box_faces(scene.room_min, scene.room_max);
    // -y is the ceiling, +y the floor (y points down).
    const std::array<int, 6> shell_class = {semantic::wall, semantic::wall, semantic::ceiling,
                                            semantic::floor, semantic::wall, semantic::wall};
    int next_id = 1;
    for (int f = 0; f < 6; ++f) {
        scene.rects.push_back(detail::make_rect(shell[f], shell_class[f], next_id, albedos[next_id - 1]));
        ++next_id;
    }

    const double floor_y = scene.room_max.y();
    for (int b = 0; b < n_boxes; ++b) {
        Vec3 lo, hi;
        for (int attempt = 0; attempt < 100; ++attempt) {
            const double sx = rng.uniform(0.3, 1.0);
            const double sz = rng.uniform(0.3, 1.0);
            const double height = rng.uniform(0.3, 0.9);
            const double x = rng.uniform(scene.room_min.x() + 0.3, scene.room_max.x() - 0.3 - sx);
            const double z = rng.uniform(0.8, scene.room_max.z() - 0.3 - sz);
            lo = Vec3(x, floor_y - height, z);
            hi = Vec3(x + sx, floor_y, z + sz);
            // No face plane may pass near the world origin.
            if (std::abs(lo.x()) > 0.05 && std::abs(hi.x()) > 0.05) {
                break;
            }
        }
        const int class_id = semantic::first_object + rng.uniform_int(0, semantic::object_kinds - 1);
        for (const auto& face : detail::box_faces(lo, hi)) {
            scene.rects.push_back(detail::make_rect(face, class_id, next_id, albedos[next_id - 1]));
            ++next_id;
        }
    }
    return scene;
}

/// Camera near the back of the room looking roughly along +z.
inline RigidTransform sample_camera_pose(const PlanarScene& scene, Rng& rng) {
    const Vec3 center(rng.uniform(-0.4, 0.4), rng.uniform(-0.2, 0.2), scene.room_min.z() + rng.uniform(0.6, 1.0));
    const Mat3 cam_to_world = rot_y(rng.uniform(-0.15, 0.15)) * rot_x(rng.uniform(-0.25, 0.05));
    RigidTransform pose;
    pose.R = cam_to_world.transpose();
    pose.t = -pose.R * center;
    return pose;
}

inline Vec3 camera_center(const RigidTransform& world_to_camera) {
    return -world_to_camera.R.transpose() * world_to_camera.t;
}

inline RenderedView render_view(const PlanarScene& scene, const CameraIntrinsics& camera, const RigidTransform& pose) {
    camera.validate();
    pose.validate();
    const Vec3 center = camera_center(pose);
    require(scene.contains(center), Errc::invalid_input, "camera center must lie strictly inside the room");

    const int h = camera.height;
    const int w = camera.width;
    RenderedView view{camera, pose, VectorMap(h, w, 3), ScalarMap(h, w), InstanceMap(h, w), VectorMap(h, w, 3), {}};

    std::vector<Vec3> cam_planes;
    cam_planes.reserve(scene.rects.size());
    for (const auto& rect : scene.rects) {
        // n' d' is the same vector whichever side of the plane the camera is
        // on, so the camera-frame encoding always has a positive offset.
        const Vec3 n = pose.R * rect.plane.normal();
        const double d = rect.plane.offset() + n.dot(pose.t);
        require(std::abs(d) > kPlaneEpsilon, Errc::invalid_input, "camera center lies on a scene plane");
        cam_planes.push_back(n * d);
        view.classes[rect.instance_id] = rect.class_id;
    }

    const Mat3 cam_to_world = pose.R.transpose();
    parallel_rows(h, [&](int row) {
        for (int col = 0; col < w; ++col) {
            const Vec3 ray_cam = camera.ray(col, row);
            const Vec3 ray_world = cam_to_world * ray_cam;
            double best = std::numeric_limits<double>::infinity();
            int hit = -1;
            for (std::size_t i = 0; i < scene.rects.size(); ++i) {
                const auto& rect = scene.rects[i];
                const Vec3 n = rect.plane.normal();
                const double denom = n.dot(ray_world);
                if (std::abs(denom) < kRayEpsilon) {
                    continue;
                }
                // Ray z-component is 1 in camera coordinates, so s is the depth.
                const double s = (rect.plane.offset() - n.dot(center)) / denom;
                if (s > 1e-9 && s < best && rect.contains(center + s * ray_world)) {
                    best = s;
                    hit = static_cast<int>(i);
                }
            }
            if (hit < 0) {
                continue;
            }
            const auto& rect = scene.rects[hit];
            view.depth(row, col) = best;
            view.instances(row, col) = rect.instance_id;
            const Vec3& p = cam_planes[hit];
            for (int c = 0; c < 3; ++c) {
                view.plane_map(row, col, c) = p[c];
            }
            const double shade = 0.5 + 0.5 * std::abs(rect.plane.normal().dot(ray_world.normalized()));
            for (int c = 0; c < 3; ++c) {
                view.rgb(row, col, c) = rect.albedo[c] * shade;
            }
        }
    });
    for (const auto d : view.depth.data()) {
        require(d > 0, Errc::invalid_input, "ray escaped the closed room");
    }
    return view;
}

inline constexpr double kDefaultBaseline = 0.2;
inline constexpr double kDefaultYawDegrees = 5.0;

/// Source->neighbour motion for a neighbour camera displaced by `baseline`
/// (source camera frame, meters) and rotated by `yaw_deg` about the camera y axis.
inline RigidTransform relative_motion(const Vec3& baseline, double yaw_deg) {
    const Mat3 rel = rot_y(yaw_deg * std::numbers::pi / 180.0);
    return {rel.transpose(), -rel.transpose() * baseline};
}

inline StereoSample make_pair(const PlanarScene& scene, const CameraIntrinsics& camera, const RigidTransform& pose_src,
                              const Vec3& baseline, double yaw_deg) {
    StereoSample sample;
    sample.src_to_nbr = relative_motion(baseline, yaw_deg);
    sample.nbr_to_src = sample.src_to_nbr.inverse();
    sample.source = render_view(scene, camera, pose_src);
    sample.neighbour = render_view(scene, camera, compose(sample.src_to_nbr, pose_src));
    return sample;
}

/// Same pair seen from the other side: the neighbour becomes the source.
inline StereoSample swapped(const StereoSample& sample) {
    return {sample.neighbour, sample.source, sample.src_to_nbr, sample.nbr_to_src};
}

/// Removes each non-room instance with probability drop_prob (label maps only).
inline RenderedView drop_instances(const RenderedView& view, double drop_prob, std::uint64_t seed) {
    require(drop_prob >= 0.0 && drop_prob <= 1.0, Errc::invalid_input, "drop probability must be in [0, 1]");
    RenderedView out = view;
    std::map<std::int32_t, bool> dropped;
    for (const auto& [id, class_id] : view.classes) {
        Rng rng(mix_seed(seed, static_cast<std::uint64_t>(id)));
        dropped[id] = !is_room_shell_class(class_id) && rng.bernoulli(drop_prob);
    }
    for (std::size_t i = 0; i < out.instances.size(); ++i) {
        const auto id = out.instances[i];
        if (id > 0 && dropped[id]) {
            out.instances[i] = 0;
            for (auto& v : out.plane_map.pixel(i)) {
                v = 0.0;
            }
        }
    }
    return out;
}

} // namespace planekit
