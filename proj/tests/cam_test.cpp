#include "svgen/cam.hpp"

#include <gtest/gtest.h>

#include "svgen/oracles.hpp"
#include "svgen/rng.hpp"

using namespace svgen;

namespace {

CamConfig small_cfg() {
    CamConfig cfg;
    cfg.d_v = 6;
    cfg.d_a = 4;
    cfg.d = 8;
    cfg.groups = 4;
    return cfg;
}

}  // namespace

TEST(Attend, SingleKeyValueReturnsThatRow) {
    RngStream rng(2);
    Tensor q = Tensor::randn({1, 4}, rng);
    Tensor k = Tensor::randn({1, 4}, rng);
    Tensor v = Tensor::from_values({1, 4}, {1.5, -2.0, 0.25, 9.0});
    AttendResult r = attend(q, k, v);
    for (int64_t c = 0; c < 4; ++c) EXPECT_DOUBLE_EQ(r.out.at({0, c}), v.at({0, c}));
    EXPECT_DOUBLE_EQ(r.weights.at({0, 0}), 1.0);
}

TEST(Attend, EqualLogitsGiveMeanOfValues) {
    // Zero query -> all logits equal -> convex weights 1/m.
    Tensor q = Tensor::zeros({1, 3});
    RngStream rng(5);
    Tensor k = Tensor::randn({4, 3}, rng);
    Tensor v = Tensor::randn({4, 3}, rng);
    AttendResult r = attend(q, k, v);
    for (int64_t c = 0; c < 3; ++c) {
        double mean = 0;
        for (int64_t j = 0; j < 4; ++j) mean += v.at({j, c});
        mean /= 4.0;
        EXPECT_NEAR(r.out.at({0, c}), mean, 1e-12);
    }
}

TEST(Attend, WeightsMatchScalarOracle) {
    RngStream rng(8);
    Tensor q = Tensor::randn({3, 5}, rng);
    Tensor k = Tensor::randn({7, 5}, rng);
    Tensor v = Tensor::randn({7, 5}, rng);
    AttendResult r = attend(q, k, v);
    auto expect = oracle::attention_naive(q.values(), 3, k.values(), 7, v.values(), 5, 5.0);
    for (size_t i = 0; i < expect.weights.size(); ++i) {
        EXPECT_NEAR(r.weights.values()[i], expect.weights[i], 1e-12);
    }
    for (size_t i = 0; i < expect.out.size(); ++i) {
        EXPECT_NEAR(r.out.values()[i], expect.out[i], 1e-12);
    }
}

TEST(Attend, DimMismatchRejected) {
    Tensor q = Tensor::zeros({1, 3});
    Tensor k = Tensor::zeros({2, 4});
    Tensor v = Tensor::zeros({2, 4});
    EXPECT_THROW(attend(q, k, v), ShapeError);
}

TEST(CamForward, ConstantVisualGridIgnoresQuery) {
    // Every visual position identical -> h_v is a convex combination of equal
    // rows, so changing the audio input cannot change it.
    CamConfig cfg = small_cfg();
    CrossModalAttention cam(cfg);
    RngStream rng(3);
    std::vector<double> const_grid(static_cast<size_t>(cfg.d_v * 4 * 4));
    for (int64_t c = 0; c < cfg.d_v; ++c) {
        double v = rng.uniform(-1.0, 1.0);
        for (int64_t p = 0; p < 16; ++p) const_grid[static_cast<size_t>(c * 16 + p)] = v;
    }
    Tensor z_v = Tensor::from_values({cfg.d_v, 4, 4}, const_grid);
    Tensor z_a1 = Tensor::randn({cfg.d_a, 2, 2}, rng);
    Tensor z_a2 = Tensor::randn({cfg.d_a, 2, 2}, rng);
    CamOutput o1 = cam.forward(z_v, z_a1);
    CamOutput o2 = cam.forward(z_v, z_a2);
    for (int64_t c = 0; c < cfg.d; ++c) EXPECT_NEAR(o1.h_v.at({c}), o2.h_v.at({c}), 1e-12);
}

TEST(CamForward, PaperScaleShapes) {
    CamConfig cfg;
    cfg.d_v = 256;
    cfg.d_a = 256;
    cfg.d = 256;
    CrossModalAttention cam(cfg);
    RngStream rng(4);
    Tensor z_v = Tensor::randn({256, 8, 8}, rng);
    Tensor z_a = Tensor::randn({256, 5, 5}, rng);
    CamOutput out = cam.forward(z_v, z_a);
    EXPECT_EQ(out.h_v.shape(), (Shape{256}));
    EXPECT_EQ(out.h_a.shape(), (Shape{256}));
    EXPECT_EQ(out.attn_visual.shape(), (Shape{8, 8}));
    EXPECT_EQ(out.attn_audio.shape(), (Shape{5, 5}));
}

TEST(CamForward, MatchesStagedOracle) {
    CamConfig cfg = small_cfg();
    CrossModalAttention cam(cfg);
    RngStream rng(11);
    for (int iter = 0; iter < 5; ++iter) {
        Tensor z_v = Tensor::randn({cfg.d_v, 4, 4}, rng);
        Tensor z_a = Tensor::randn({cfg.d_a, 2, 2}, rng);
        CamOutput got = cam.forward(z_v, z_a);
        oracle::cam_naive::CamOracleResult expect = oracle::cam_naive::cam_forward_naive(cam, z_v, z_a);
        for (int64_t c = 0; c < cfg.d; ++c) {
            EXPECT_NEAR(got.h_v.at({c}), expect.h_v[static_cast<size_t>(c)], 1e-10);
            EXPECT_NEAR(got.h_a.at({c}), expect.h_a[static_cast<size_t>(c)], 1e-10);
        }
        for (size_t i = 0; i < expect.attn_visual.size(); ++i) {
            EXPECT_NEAR(got.attn_visual.values()[i], expect.attn_visual[i], 1e-10);
        }
        for (size_t i = 0; i < expect.attn_audio.size(); ++i) {
            EXPECT_NEAR(got.attn_audio.values()[i], expect.attn_audio[i], 1e-10);
        }
    }
}

TEST(CamForward, UnitNormOutputs) {
    CamConfig cfg = small_cfg();
    CrossModalAttention cam(cfg);
    RngStream rng(13);
    Tensor z_v = Tensor::randn({cfg.d_v, 4, 4}, rng);
    Tensor z_a = Tensor::randn({cfg.d_a, 2, 2}, rng);
    CamOutput out = cam.forward(z_v, z_a);
    double nv = 0, na = 0;
    for (int64_t c = 0; c < cfg.d; ++c) {
        nv += out.h_v.at({c}) * out.h_v.at({c});
        na += out.h_a.at({c}) * out.h_a.at({c});
    }
    EXPECT_NEAR(std::sqrt(nv), 1.0, 1e-9);
    EXPECT_NEAR(std::sqrt(na), 1.0, 1e-9);
}

TEST(AttentionMaps, SumToOneAndDegenerateCase) {
    CamConfig cfg = small_cfg();
    CrossModalAttention cam(cfg);
    RngStream rng(17);
    Tensor z_v = Tensor::randn({cfg.d_v, 3, 3}, rng);
    Tensor z_a = Tensor::randn({cfg.d_a, 2, 2}, rng);
    CamOutput out = cam.forward(z_v, z_a);
    double sv = 0, sa = 0;
    for (double v : out.attn_visual.values()) sv += v;
    for (double v : out.attn_audio.values()) sa += v;
    EXPECT_NEAR(sv, 1.0, 1e-9);
    EXPECT_NEAR(sa, 1.0, 1e-9);

    // Single-position grids: the only weight is 1.
    Tensor z_v1 = Tensor::randn({cfg.d_v, 1, 1}, rng);
    Tensor z_a1 = Tensor::randn({cfg.d_a, 1, 1}, rng);
    CamOutput deg = cam.forward(z_v1, z_a1);
    EXPECT_NEAR(deg.attn_visual.at({0, 0}), 1.0, 1e-12);
    EXPECT_NEAR(deg.attn_audio.at({0, 0}), 1.0, 1e-12);
}

TEST(CamForward, PermutingPositionsLeavesGlobalFeatureUnchanged) {
    CamConfig cfg = small_cfg();
    CrossModalAttention cam(cfg);
    RngStream rng(19);
    Tensor z_v = Tensor::randn({cfg.d_v, 2, 2}, rng);
    Tensor z_a = Tensor::randn({cfg.d_a, 2, 2}, rng);
    CamOutput base = cam.forward(z_v, z_a);

    // Reverse the 4 spatial positions of the visual grid.
    std::vector<double> perm(z_v.values().size());
    for (int64_t c = 0; c < cfg.d_v; ++c)
        for (int64_t p = 0; p < 4; ++p)
            perm[static_cast<size_t>(c * 4 + p)] = z_v.values()[static_cast<size_t>(c * 4 + (3 - p))];
    CamOutput permuted = cam.forward(Tensor::from_values({cfg.d_v, 2, 2}, perm), z_a);
    for (int64_t c = 0; c < cfg.d; ++c) {
        EXPECT_NEAR(base.h_v.at({c}), permuted.h_v.at({c}), 1e-10);
        EXPECT_NEAR(base.h_a.at({c}), permuted.h_a.at({c}), 1e-10);
    }
}

TEST(CamForward, GradientsReachBothModalityInputs) {
    CamConfig cfg = small_cfg();
    CrossModalAttention cam(cfg);
    RngStream rng(23);
    Tensor z_v = Tensor::randn({cfg.d_v, 3, 3}, rng, 1.0, true);
    Tensor z_a = Tensor::randn({cfg.d_a, 2, 2}, rng, 1.0, true);
    CamOutput out = cam.forward(z_v, z_a);
    backward(add(sum(out.h_v), sum(out.h_a)));
    double gv = 0, ga = 0;
    for (double g : z_v.grad()) gv += g * g;
    for (double g : z_a.grad()) ga += g * g;
    EXPECT_GT(gv, 0.0);
    EXPECT_GT(ga, 0.0);
}

TEST(CamForward, FiniteDifferenceGradients) {
    CamConfig cfg;
    cfg.d_v = 3;
    cfg.d_a = 3;
    cfg.d = 4;
    cfg.groups = 2;
    CrossModalAttention cam(cfg);
    RngStream rng(29);
    std::vector<Tensor> params{Tensor::randn({cfg.d_v, 2, 2}, rng, 1.0, true),
                               Tensor::randn({cfg.d_a, 2, 2}, rng, 1.0, true)};
    double err = oracle::fd_max_rel_error(
        [&](const std::vector<Tensor>& p) {
            CamOutput o = cam.forward(p[0], p[1]);
            return add(sum(mul(o.h_v, o.h_v)), sum(mul(o.h_a, o.h_a)));
        },
        params);
    EXPECT_LT(err, 1e-4);
}
