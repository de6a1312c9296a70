#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "planekit/geometry.hpp"
#include "planekit/synth.hpp"
#include "test_support.hpp"

using namespace planekit;
using planekit::test::camera;

namespace {

constexpr double kPi = std::numbers::pi;

Mat3 random_rotation(Rng& rng) {
    const Vec3 axis = Vec3(rng.normal(), rng.normal(), rng.normal()).normalized();
    return Eigen::AngleAxisd(rng.uniform(-kPi, kPi), axis).toRotationMatrix();
}

RigidTransform random_transform(Rng& rng, double max_t = 0.5) {
    return {random_rotation(rng), Vec3(rng.uniform(-max_t, max_t), rng.uniform(-max_t, max_t), rng.uniform(-max_t, max_t))};
}

PlaneParams random_plane(Rng& rng) {
    return PlaneParams::compose(Vec3(rng.normal(), rng.normal(), rng.normal()), rng.uniform(1.0, 5.0));
}

// Plane through three points, oriented so the offset is positive.
Vec3 fit_plane(const Vec3& a, const Vec3& b, const Vec3& c) {
    Vec3 n = (b - a).cross(c - a).normalized();
    double d = n.dot(a);
    if (d < 0) {
        n = -n;
        d = -d;
    }
    return n * d;
}

// Three non-collinear points on plane p.
std::array<Vec3, 3> points_on(const Vec3& p) {
    const Vec3 n = p.normalized();
    const Vec3 base = n * p.norm();
    const Vec3 e1 = n.unitOrthogonal();
    const Vec3 e2 = n.cross(e1);
    return {base, base + 0.7 * e1 - 0.2 * e2, base - 0.4 * e1 + 0.9 * e2};
}

} // namespace

TEST(Backproject, PrincipalPointIsOpticalAxis) {
    const auto k = camera(100, 100, 50, 50, 101, 101);
    EXPECT_EQ(backproject(k, 50, 50, 2.0), Vec3(0, 0, 2));
}

TEST(Backproject, UnitOffsetRay) {
    const auto k = camera(100, 100, 50, 50, 201, 101);
    EXPECT_EQ(backproject(k, 150, 50, 2.0), Vec3(2, 0, 2));
}

TEST(Backproject, MatchesExplicitInverse) {
    const auto k = camera(200, 100, 60, 40, 120, 100);
    Mat3 kinv;
    kinv << 1.0 / 200, 0, -60.0 / 200, 0, 1.0 / 100, -40.0 / 100, 0, 0, 1;
    const Vec3 expected = 3.0 * (kinv * Vec3(80, 90, 1));
    const Vec3 q = backproject(k, 80, 90, 3.0);
    EXPECT_NEAR((q - expected).norm(), 0.0, 1e-12);
    EXPECT_DOUBLE_EQ(q.z(), 3.0);
}

TEST(Backproject, RejectsNonPositiveDepth) {
    const auto k = camera(100, 100, 50, 50, 101, 101);
    EXPECT_THROW(backproject(k, 10, 10, 0.0), Error);
    EXPECT_THROW(backproject(k, 10, 10, -1.0), Error);
}

TEST(PlaneInducedDepth, FrontoParallel) {
    const auto k = camera(100, 100, 50, 50, 101, 101);
    const auto plane = PlaneParams::compose({0, 0, 1}, 2.0);
    for (const auto& [u, v] : {std::pair{0.0, 0.0}, {50.0, 50.0}, {100.0, 37.5}}) {
        EXPECT_NEAR(plane_induced_depth(k, plane, u, v), 2.0, 1e-12);
    }
    EXPECT_NEAR(plane_induced_depth(k, PlaneParams::compose({0, 0, 1}, 4.0), 13, 77), 4.0, 1e-12);
}

TEST(PlaneInducedDepth, TiltedPlaneMatchesRayIntersection) {
    const auto k = camera(100, 100, 50, 50, 101, 101);
    const double theta = kPi / 6;
    const Vec3 n(0, -std::sin(theta), std::cos(theta));
    const double d = 2.0;
    // Parametric ray s * (0, 0.5, 1) hits n.x = d at s = d / (n . dir).
    const Vec3 dir(0, (100.0 - 50.0) / 100.0, 1.0);
    const double s = d / n.dot(dir);
    const Vec3 hit = s * dir;
    EXPECT_NEAR(plane_induced_depth(k, PlaneParams::compose(n, d), 50, 100), hit.z(), 1e-12);
}

TEST(PlaneInducedDepth, DegenerateRayIsFlagged) {
    const auto k = camera(100, 100, 50, 50, 101, 101);
    // Plane y = 1 viewed along the optical axis: the ray is parallel.
    const auto plane = PlaneParams::compose({0, 1, 0}, 1.0);
    EXPECT_FALSE(try_plane_induced_depth(k, plane.p, 50, 50).has_value());
    try {
        plane_induced_depth(k, plane, 50, 50);
        FAIL() << "expected a degenerate-ray error";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::degenerate_ray);
    }
}

TEST(PlaneInducedDepth, RoundTripLiesOnPlane) {
    Rng rng(7);
    const auto k = default_camera(128, 96);
    int checked = 0;
    for (int trial = 0; trial < 2000; ++trial) {
        const auto plane = random_plane(rng);
        const double u = rng.uniform(0, 127);
        const double v = rng.uniform(0, 95);
        const auto depth = try_plane_induced_depth(k, plane.p, u, v);
        if (!depth || *depth <= 0) {
            continue;
        }
        const Vec3 q = backproject(k, u, v, *depth);
        EXPECT_LT(std::abs(plane.residual(q)), 1e-9 * plane.offset());
        ++checked;
    }
    EXPECT_GT(checked, 500);
}

TEST(PlaneParams, ComposeDecompose) {
    const auto plane = PlaneParams::compose({3, 0, 4}, 2.5);
    EXPECT_NEAR(plane.normal().norm(), 1.0, 1e-12);
    EXPECT_NEAR((plane.normal() - Vec3(0.6, 0, 0.8)).norm(), 0.0, 1e-12);
    EXPECT_NEAR(plane.offset(), 2.5, 1e-12);
    EXPECT_THROW(PlaneParams::compose({0, 0, 0}, 1.0), Error);
    EXPECT_THROW(PlaneParams::compose({0, 0, 1}, 0.0), Error);
}

TEST(CameraIntrinsics, Validity) {
    EXPECT_TRUE(camera(100, 100, 50, 50, 101, 101).valid());
    EXPECT_FALSE(camera(0, 100, 50, 50, 101, 101).valid());
    EXPECT_FALSE(camera(100, 100, 0, 50, 101, 101).valid());
    EXPECT_FALSE(camera(100, 100, 50, 120, 101, 101).valid());
}

TEST(RigidTransform, Validity) {
    EXPECT_TRUE(RigidTransform::identity().valid());
    RigidTransform scaled;
    scaled.R = 1.01 * Mat3::Identity();
    EXPECT_FALSE(scaled.valid());
    RigidTransform mirror;
    mirror.R = Vec3(1, 1, -1).asDiagonal();
    EXPECT_FALSE(mirror.valid());
    Mat4 m = Mat4::Identity();
    m(3, 0) = 0.5;
    EXPECT_THROW(RigidTransform::from_matrix(m), Error);
}

TEST(TransformPlane, Identity) {
    const auto plane = PlaneParams::compose({0.2, -0.3, 1}, 1.7);
    EXPECT_EQ(transform_plane(RigidTransform::identity(), plane).p, plane.p);
}

TEST(TransformPlane, PureTranslation) {
    const RigidTransform tf{Mat3::Identity(), Vec3(0, 0, 1)};
    const auto out = transform_plane(tf, PlaneParams::compose({0, 0, 1}, 2.0));
    EXPECT_NEAR((out.normal() - Vec3(0, 0, 1)).norm(), 0.0, 1e-12);
    EXPECT_NEAR(out.offset(), 3.0, 1e-12);
}

TEST(TransformPlane, RotationMatchesThreePointFit) {
    const RigidTransform tf{rot_x(kPi / 2), Vec3(0.3, -0.2, 0.5)};
    const Vec3 p(0, 0, 2);
    const auto pts = points_on(p);
    const Vec3 expected = fit_plane(tf.apply(pts[0]), tf.apply(pts[1]), tf.apply(pts[2]));
    EXPECT_NEAR((transform_plane(tf, {p}).p - expected).norm(), 0.0, 1e-12);
}

TEST(TransformPlane, RandomDrawsMatchThreePointFit) {
    Rng rng(11);
    int checked = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const auto tf = random_transform(rng);
        const auto plane = random_plane(rng);
        const auto out = try_transform_plane(tf, plane.p);
        const auto pts = points_on(plane.p);
        const Vec3 a = tf.apply(pts[0]), b = tf.apply(pts[1]), c = tf.apply(pts[2]);
        const double d_new = (b - a).cross(c - a).normalized().dot(a);
        if (!out) {
            // Only excluded when the plane ends up through or behind the new origin.
            const Vec3 n_new = tf.R * plane.normal();
            EXPECT_LE(n_new.dot(a), 1e-12);
            continue;
        }
        EXPECT_GT(std::abs(d_new), 0.0);
        EXPECT_NEAR((*out - fit_plane(a, b, c)).norm(), 0.0, 1e-9);
        ++checked;
    }
    EXPECT_GT(checked, 800);
}

TEST(TransformPlane, ComposesAndInverts) {
    Rng rng(12);
    for (int trial = 0; trial < 500; ++trial) {
        const auto t1 = random_transform(rng, 0.3);
        const auto t2 = random_transform(rng, 0.3);
        const auto plane = random_plane(rng);
        const auto a = try_transform_plane(t1, plane.p);
        if (!a) {
            continue;
        }
        const auto b = try_transform_plane(t2, *a);
        const auto direct = try_transform_plane(compose(t2, t1), plane.p);
        ASSERT_EQ(b.has_value(), direct.has_value());
        if (b) {
            EXPECT_NEAR((*b - *direct).norm(), 0.0, 1e-9);
        }
        const auto back = try_transform_plane(t1.inverse(), *a);
        ASSERT_TRUE(back.has_value());
        EXPECT_NEAR((*back - plane.p).norm(), 0.0, 1e-9);
    }
}

TEST(TransformPlane, ThroughOriginIsFlagged) {
    // Moving the camera onto the plane z = 2.
    const RigidTransform tf{Mat3::Identity(), Vec3(0, 0, -2)};
    try {
        transform_plane(tf, PlaneParams::compose({0, 0, 1}, 2.0));
        FAIL() << "expected a plane-through-origin error";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::plane_through_origin);
    }
}

TEST(WarpGrid, IdentityIsExact) {
    const auto k = default_camera(32, 24);
    ScalarMap depth(24, 32, 1, 2.5);
    const auto grid = compute_warp_grid(k, k, depth, RigidTransform::identity());
    for (int r = 0; r < 24; ++r) {
        for (int c = 0; c < 32; ++c) {
            EXPECT_EQ(grid.coords(r, c, 0), c);
            EXPECT_EQ(grid.coords(r, c, 1), r);
            EXPECT_TRUE(grid.valid(r, c));
        }
    }
}

TEST(WarpGrid, FrontoParallelDisparity) {
    const auto k = camera(100, 100, 50, 40, 101, 81);
    ScalarMap depth(81, 101, 1, 2.0);
    const RigidTransform tf{Mat3::Identity(), Vec3(0.5, 0, 0)};
    const auto grid = compute_warp_grid(k, k, depth, tf);
    const double disparity = 100 * 0.5 / 2;
    for (int r = 0; r < 81; r += 5) {
        for (int c = 0; c < 101; c += 5) {
            EXPECT_NEAR(grid.coords(r, c, 0) - c, disparity, 1e-9);
            EXPECT_NEAR(grid.coords(r, c, 1), r, 1e-9);
            EXPECT_EQ(grid.valid(r, c) != 0, c + disparity <= 100);
        }
    }
}

TEST(WarpGrid, PointBehindNeighbourIsInvalid) {
    const auto k = default_camera(16, 12);
    ScalarMap depth(12, 16, 1, 1.0);
    const RigidTransform tf{Mat3::Identity(), Vec3(0, 0, -3)};
    const auto grid = compute_warp_grid(k, k, depth, tf);
    EXPECT_EQ(count(grid.valid), 0u);
}

TEST(Bilinear, IntegerCoordsAreExact) {
    Rng rng(3);
    VectorMap src(6, 7, 2);
    for (auto& v : src.data()) {
        v = rng.uniform(-1, 1);
    }
    const auto k = default_camera(7, 6);
    const auto grid = compute_warp_grid(k, k, ScalarMap(6, 7, 1, 1.0), RigidTransform::identity());
    EXPECT_EQ(bilinear_sample(src, grid).values, src);
}

TEST(Bilinear, Midpoint) {
    ScalarMap src(1, 2);
    src(0, 0) = 1;
    src(0, 1) = 3;
    EXPECT_DOUBLE_EQ(sample_bilinear(src, 0.5, 0.0), 2.0);
}

TEST(Bilinear, MatchesFourTexelOracleAndIsLinear) {
    Rng rng(5);
    ScalarMap a(8, 8), b(8, 8);
    for (std::size_t i = 0; i < a.size(); ++i) {
        a[i] = rng.uniform(-2, 2);
        b[i] = rng.uniform(-2, 2);
    }
    for (int trial = 0; trial < 500; ++trial) {
        const double u = rng.uniform(0, 7);
        const double v = rng.uniform(0, 7);
        const int x0 = std::min(static_cast<int>(u), 6);
        const int y0 = std::min(static_cast<int>(v), 6);
        const double fx = u - x0, fy = v - y0;
        const double oracle = a(y0, x0) * (1 - fx) * (1 - fy) + a(y0, x0 + 1) * fx * (1 - fy) +
                              a(y0 + 1, x0) * (1 - fx) * fy + a(y0 + 1, x0 + 1) * fx * fy;
        EXPECT_NEAR(sample_bilinear(a, u, v), oracle, 1e-12);

        const double alpha = rng.uniform(-3, 3), beta = rng.uniform(-3, 3);
        ScalarMap mix(8, 8);
        for (std::size_t i = 0; i < mix.size(); ++i) {
            mix[i] = alpha * a[i] + beta * b[i];
        }
        EXPECT_NEAR(sample_bilinear(mix, u, v), alpha * sample_bilinear(a, u, v) + beta * sample_bilinear(b, u, v),
                    1e-12);
    }
}

TEST(Outprojection, IdentityIsAllTrue) {
    const auto k = default_camera(16, 12);
    ScalarMap depth(12, 16, 1, 3.0);
    const auto grid = compute_warp_grid(k, k, depth, RigidTransform::identity());
    EXPECT_EQ(count(outprojection_mask(grid, depth, depth)), depth.size());
}

TEST(Outprojection, OutOfBoundsIsFalse) {
    const auto k = camera(100, 100, 50, 40, 101, 81);
    ScalarMap depth(81, 101, 1, 2.0);
    const RigidTransform tf{Mat3::Identity(), Vec3(0.5, 0, 0)};
    const auto grid = compute_warp_grid(k, k, depth, tf);
    const auto mask = outprojection_mask(grid, depth, depth);
    EXPECT_FALSE(mask(10, 100));
    EXPECT_TRUE(mask(10, 10));
}

TEST(Outprojection, MonotoneInTolerance) {
    const auto scene = generate_scene(4, 3);
    Rng rng(mix_seed(4, 1));
    const auto pair = make_pair(scene, default_camera(64, 48), sample_camera_pose(scene, rng), {0.3, 0, 0.1}, 8);
    const auto grid = compute_warp_grid(pair.source.camera, pair.neighbour.camera, pair.source.depth, pair.src_to_nbr);
    Mask previous;
    for (const double tau : {0.001, 0.01, 0.05, 0.2, 1.0}) {
        const auto mask = outprojection_mask(grid, pair.source.depth, pair.neighbour.depth, tau);
        if (!previous.empty()) {
            for (std::size_t i = 0; i < mask.size(); ++i) {
                EXPECT_LE(previous[i], mask[i]);
            }
        }
        previous = mask;
    }
}

namespace {

// Distance to the first surface along the segment from `from` toward `to`.
double first_hit(const PlanarScene& scene, const Vec3& from, const Vec3& to) {
    const Vec3 dir = (to - from).normalized();
    double best = std::numeric_limits<double>::infinity();
    for (const auto& rect : scene.rects) {
        const Vec3 n = rect.plane.normal();
        const double denom = n.dot(dir);
        if (std::abs(denom) < 1e-12) {
            continue;
        }
        const double s = (rect.plane.offset() - n.dot(from)) / denom;
        if (s > 1e-9 && s < best && rect.contains(from + s * dir)) {
            best = s;
        }
    }
    return best;
}

} // namespace

TEST(Outprojection, OccludedFloorMatchesRenderedVisibility) {
    // The source looks past a box at the floor; from the neighbour the box
    // hides part of that floor.
    PlanarScene scene = generate_scene(21, 0);
    const Vec3 lo(0.2, scene.room_max.y() - 0.8, 1.2);
    const Vec3 hi(0.8, scene.room_max.y(), 1.6);
    int id = static_cast<int>(scene.rects.size()) + 1;
    for (const auto& face : detail::box_faces(lo, hi)) {
        scene.rects.push_back(detail::make_rect(face, semantic::first_object, id++, Vec3(0.9, 0.2, 0.2)));
    }
    // Pitched down toward the floor; the neighbour sits right behind the box.
    RigidTransform pose;
    pose.R = rot_x(-0.5).transpose();
    pose.t = -pose.R * Vec3(-0.8, 0, 0);
    const auto pair = make_pair(scene, default_camera(64, 48), pose, {1.3, 0, 0}, 0);
    const auto& src = pair.source;
    const auto grid = compute_warp_grid(src.camera, pair.neighbour.camera, src.depth, pair.src_to_nbr);
    const auto mask = outprojection_mask(grid, src.depth, pair.neighbour.depth);

    const Vec3 nbr_center = camera_center(pair.neighbour.pose);
    const RigidTransform cam_to_world = src.pose.inverse();
    int occluded_floor = 0, visible = 0, agree = 0;
    for (int r = 0; r < 48; ++r) {
        for (int c = 0; c < 64; ++c) {
            if (!grid.valid(r, c) || scene.rects[src.instances(r, c) - 1].class_id != semantic::floor) {
                continue;
            }
            const Vec3 world = cam_to_world.apply(backproject(src.camera, c, r, src.depth(r, c)));
            const double dist = (world - nbr_center).norm();
            const double hit = first_hit(scene, nbr_center, world);
            if (hit < dist - 0.2) {
                ++occluded_floor;
                EXPECT_FALSE(mask(r, c)) << "occluded floor pixel marked visible at " << r << "," << c;
            } else if (hit > dist - 1e-6) {
                ++visible;
                agree += mask(r, c) ? 1 : 0;
            }
        }
    }
    EXPECT_GT(occluded_floor, 10);
    // Visible pixels only miss the mask where bilinear depth blends across a depth edge.
    EXPECT_GE(agree, 0.95 * visible);
}

TEST(ImageGradient, ConstantIsZero) {
    VectorMap rgb(10, 12, 3, 0.4);
    const auto g = image_gradient(rgb);
    for (const double v : g.data()) {
        EXPECT_EQ(v, 0.0);
    }
}

TEST(ImageGradient, VerticalStepEdge) {
    VectorMap rgb(10, 20, 3, 0.0);
    for (int r = 0; r < 10; ++r) {
        for (int c = 10; c < 20; ++c) {
            for (int k = 0; k < 3; ++k) {
                rgb(r, c, k) = 1.0;
            }
        }
    }
    const auto g = image_gradient(rgb);
    for (int r = 0; r < 10; ++r) {
        EXPECT_DOUBLE_EQ(g(r, 9), 1.0);
        EXPECT_DOUBLE_EQ(g(r, 10), 1.0);
        EXPECT_EQ(g(r, 0), 0.0);
        EXPECT_EQ(g(r, 5), 0.0);
        EXPECT_EQ(g(r, 15), 0.0);
    }
}

TEST(ImageGradient, PeaksSitOnInstanceBoundaries) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto view = test::random_view(seed, 128, 96);
        const auto g = image_gradient(view.rgb);
        const auto& ids = view.instances;
        auto near_boundary = [&](int r, int c) {
            for (int dr = -1; dr <= 1; ++dr) {
                for (int dc = -1; dc <= 1; ++dc) {
                    const int rr = std::clamp(r + dr, 0, 95), cc = std::clamp(c + dc, 0, 127);
                    if (ids(rr, cc) != ids(r, c)) {
                        return true;
                    }
                }
            }
            return false;
        };
        // Global maximum and the maximum of every row and column that has one.
        for (int r = 0; r < 96; ++r) {
            int best = 0;
            for (int c = 1; c < 128; ++c) {
                best = g(r, c) > g(r, best) ? c : best;
            }
            if (g(r, best) > 0.05) {
                EXPECT_TRUE(near_boundary(r, best)) << "seed " << seed << " row " << r;
            }
        }
        for (int c = 0; c < 128; ++c) {
            int best = 0;
            for (int r = 1; r < 96; ++r) {
                best = g(r, c) > g(best, c) ? r : best;
            }
            if (g(best, c) > 0.05) {
                EXPECT_TRUE(near_boundary(best, c)) << "seed " << seed << " col " << c;
            }
        }
    }
}
