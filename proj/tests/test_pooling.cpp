#include <gtest/gtest.h>

#include <algorithm>

#include "planekit/pooling.hpp"
#include "planekit/rng.hpp"

using namespace planekit;

namespace {

VectorMap planes_1x2(double a, double b) {
    VectorMap m(1, 2, 3);
    m(0, 0, 2) = a;
    m(0, 1, 2) = b;
    return m;
}

ScalarMap mask_1x2(double a, double b) {
    ScalarMap m(1, 2);
    m[0] = a;
    m[1] = b;
    return m;
}

InstancePrediction instance(const ScalarMap& mask, double score, int class_id = 0) {
    InstancePrediction p;
    p.soft_mask = mask;
    p.score = score;
    p.class_id = class_id;
    return p;
}

} // namespace

TEST(Binarize, Examples) {
    EXPECT_EQ(count(binarize(ScalarMap(4, 4, 1, 1.0), 0.5)), 16u);
    EXPECT_EQ(count(binarize(ScalarMap(4, 4, 1, 0.0), 0.5)), 0u);
    ScalarMap half(4, 4);
    for (int r = 0; r < 2; ++r) {
        for (int c = 0; c < 4; ++c) {
            half(r, c) = 0.6;
        }
    }
    const auto m = binarize(half, 0.5);
    for (int r = 0; r < 4; ++r) {
        for (int c = 0; c < 4; ++c) {
            EXPECT_EQ(m(r, c) != 0, r < 2);
        }
    }
    // Strictly greater than the threshold.
    EXPECT_EQ(count(binarize(ScalarMap(2, 2, 1, 0.5), 0.5)), 0u);
}

TEST(SoftPool, ConstantPlaneIsExact) {
    VectorMap planes(3, 3, 3);
    const Vec3 c(0.1, -0.7, 2.3);
    for (std::size_t i = 0; i < planes.pixels(); ++i) {
        for (int k = 0; k < 3; ++k) {
            planes.pixel(i)[k] = c[k];
        }
    }
    ScalarMap mask(3, 3);
    for (std::size_t i = 0; i < mask.size(); ++i) {
        mask[i] = 0.51 + 0.05 * static_cast<double>(i);
    }
    EXPECT_EQ(soft_pool(planes, mask).p, c);
}

TEST(SoftPool, WorkedExamples) {
    EXPECT_EQ(soft_pool(planes_1x2(1, 3), mask_1x2(0.5, 0.5), 0.4).p, Vec3(0, 0, 2));
    // Bit-equal to the weighted mean evaluated directly (1.8 up to rounding).
    EXPECT_EQ(soft_pool(planes_1x2(1, 3), mask_1x2(0.9, 0.6), 0.5).p, Vec3(0, 0, (0.9 * 1 + 0.6 * 3) / 1.5));
    EXPECT_NEAR(soft_pool(planes_1x2(1, 3), mask_1x2(0.9, 0.6), 0.5).p.z(), 1.8, 1e-15);
}

TEST(SoftPool, EmptyRegionIsAnError) {
    try {
        soft_pool(planes_1x2(1, 3), mask_1x2(0.2, 0.3), 0.5);
        FAIL() << "expected an empty-instance error";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::empty_instance);
    }
}

TEST(SoftPool, ConvexHullAndScaleInvariance) {
    Rng rng(1);
    for (int trial = 0; trial < 1000; ++trial) {
        const int h = rng.uniform_int(1, 5);
        const int w = rng.uniform_int(1, 5);
        VectorMap planes(h, w, 3);
        ScalarMap mask(h, w);
        for (auto& v : planes.data()) {
            v = rng.uniform(-5, 5);
        }
        for (auto& v : mask.data()) {
            v = rng.uniform();
        }
        mask[0] = 0.75;
        const Vec3 pooled = soft_pool(planes, mask).p;
        Vec3 lo = Vec3::Constant(1e300), hi = Vec3::Constant(-1e300);
        for (std::size_t i = 0; i < mask.size(); ++i) {
            if (mask[i] > 0.5) {
                for (int k = 0; k < 3; ++k) {
                    lo[k] = std::min(lo[k], planes.pixel(i)[k]);
                    hi[k] = std::max(hi[k], planes.pixel(i)[k]);
                }
            }
        }
        for (int k = 0; k < 3; ++k) {
            EXPECT_GE(pooled[k], lo[k] - 1e-12);
            EXPECT_LE(pooled[k], hi[k] + 1e-12);
        }
        // Scaling the weights inside the region, keeping it unchanged.
        const double s = rng.uniform(0.2, 1.0);
        ScalarMap scaled = mask;
        for (std::size_t i = 0; i < scaled.size(); ++i) {
            scaled[i] = mask[i] > 0.5 ? mask[i] * s : 0.0;
        }
        const Vec3 again = soft_pool(planes, scaled, 0.5 * s).p;
        EXPECT_LT((again - pooled).norm(), 1e-12 * std::max(1.0, pooled.norm()));
    }
}

TEST(AssembleOutput, NoInstancesKeepsPerPixel) {
    VectorMap per_pixel(2, 3, 3, 0.4);
    std::vector<InstancePrediction> none;
    const auto out = assemble_output(none, per_pixel);
    EXPECT_EQ(out.plane_map, per_pixel);
    EXPECT_EQ(out.instances, InstanceMap(2, 3));
}

TEST(AssembleOutput, FullImageInstance) {
    VectorMap per_pixel(2, 2, 3);
    for (std::size_t i = 0; i < per_pixel.pixels(); ++i) {
        per_pixel.pixel(i)[2] = 2.0;
    }
    std::vector<InstancePrediction> list = {instance(ScalarMap(2, 2, 1, 1.0), 0.9)};
    const auto out = assemble_output(list, per_pixel);
    EXPECT_EQ(out.plane_map, per_pixel);
    EXPECT_EQ(count(binarize(ScalarMap(2, 2, 1, 1.0))), 4u);
    for (const auto id : out.instances.data()) {
        EXPECT_EQ(id, 1);
    }
}

TEST(AssembleOutput, HigherScoreOwnsOverlap) {
    VectorMap per_pixel(1, 3, 3);
    per_pixel(0, 0, 2) = 1;
    per_pixel(0, 1, 2) = 2;
    per_pixel(0, 2, 2) = 3;
    ScalarMap a(1, 3), b(1, 3);
    a[0] = a[1] = 1;
    b[1] = b[2] = 1;
    std::vector<InstancePrediction> list = {instance(a, 0.9), instance(b, 0.8)};
    const auto out = assemble_output(list, per_pixel);
    EXPECT_EQ(out.instances[0], 1);
    EXPECT_EQ(out.instances[1], 1);
    EXPECT_EQ(out.instances[2], 2);
    EXPECT_DOUBLE_EQ(out.plane_map(0, 1, 2), 1.5);
    EXPECT_DOUBLE_EQ(out.plane_map(0, 2, 2), 2.5);
}

TEST(AssembleOutput, LowScoresAndEmptyMasksAreSkipped) {
    VectorMap per_pixel(1, 2, 3, 1.0);
    std::vector<InstancePrediction> list = {instance(mask_1x2(0.1, 0.2), 0.9), instance(mask_1x2(1, 1), 0.1)};
    const auto out = assemble_output(list, per_pixel);
    EXPECT_EQ(out.instances, InstanceMap(1, 2));
    EXPECT_FALSE(list[0].pooled_plane.has_value());
}

TEST(AssembleOutput, RequiresDescendingScores) {
    VectorMap per_pixel(1, 2, 3);
    std::vector<InstancePrediction> list = {instance(mask_1x2(1, 1), 0.5), instance(mask_1x2(1, 1), 0.8)};
    EXPECT_THROW(assemble_output(list, per_pixel), Error);
}

TEST(AssembleOutput, Idempotent) {
    Rng rng(2);
    VectorMap per_pixel(4, 4, 3);
    for (auto& v : per_pixel.data()) {
        v = rng.uniform(-1, 1);
    }
    std::vector<InstancePrediction> list;
    for (const double score : {0.9, 0.6, 0.4}) {
        ScalarMap m(4, 4);
        for (auto& v : m.data()) {
            v = rng.uniform();
        }
        list.push_back(instance(m, score));
    }
    auto copy = list;
    const auto a = assemble_output(list, per_pixel);
    const auto b = assemble_output(copy, per_pixel);
    EXPECT_EQ(a.plane_map, b.plane_map);
    EXPECT_EQ(a.instances, b.instances);
    const auto c = assemble_output(list, per_pixel);
    EXPECT_EQ(a.plane_map, c.plane_map);
}
