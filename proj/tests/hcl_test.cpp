#include "svgen/hcl.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "context_util.hpp"
#include "svgen/oracles.hpp"
#include "svgen/rng.hpp"

using namespace svgen;
using testutil::ContextCase;
using testutil::random_context_case;

namespace {

// Two clips, two frames, both modalities; convenient hand-checkable context.
SelectionContext two_clip_ctx(int64_t window = 2, double sim_01 = 0.5) {
    SelectionContext ctx;
    ctx.window = window;
    ctx.text_sim = {{1.0, sim_01}, {sim_01, 1.0}};
    for (int64_t mod = 0; mod < 2; ++mod) {
        for (int64_t clip = 0; clip < 2; ++clip) {
            for (int64_t frame = 0; frame < 2; ++frame) {
                ctx.clip_id.push_back(clip);
                ctx.frame_index.push_back(frame);
                ctx.modality.push_back(mod == 0 ? Modality::visual : Modality::audio);
                ctx.vaf_score.push_back(25.0);
            }
        }
    }
    return ctx;
}

std::vector<int64_t> all_indices(const SelectionContext& ctx) {
    std::vector<int64_t> idx(ctx.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int64_t>(i);
    return idx;
}

}  // namespace

TEST(PositiveMask, WindowTwoFramePairs) {
    SelectionContext ctx;
    ctx.window = 2;
    ctx.text_sim = {{1.0}};
    // One clip, frames 0,1,3, visual only.
    for (int64_t f : {0, 1, 3}) {
        ctx.clip_id.push_back(0);
        ctx.frame_index.push_back(f);
        ctx.modality.push_back(Modality::visual);
        ctx.vaf_score.push_back(25.0);
    }
    auto pos = build_positive_mask(ctx);
    auto at = [&](int64_t l, int64_t m) { return pos[static_cast<size_t>(l * 3 + m)] != 0; };
    EXPECT_TRUE(at(0, 1));   // |0-1| < 2, both directions
    EXPECT_TRUE(at(1, 0));
    EXPECT_FALSE(at(0, 2));  // |0-3| >= 2
    EXPECT_FALSE(at(2, 0));
    EXPECT_FALSE(at(0, 0));  // self-self excluded
}

TEST(PositiveMask, WindowOneLeavesOnlyCrossModalSameFrame) {
    SelectionContext ctx = two_clip_ctx(/*window=*/1);
    auto pos = build_positive_mask(ctx);
    int64_t b = static_cast<int64_t>(ctx.size());
    for (int64_t l = 0; l < b; ++l) {
        for (int64_t m = 0; m < b; ++m) {
            bool expected = ctx.clip_id[static_cast<size_t>(l)] == ctx.clip_id[static_cast<size_t>(m)] &&
                            ctx.frame_index[static_cast<size_t>(l)] == ctx.frame_index[static_cast<size_t>(m)] &&
                            ctx.modality[static_cast<size_t>(l)] != ctx.modality[static_cast<size_t>(m)];
            EXPECT_EQ(pos[static_cast<size_t>(l * b + m)] != 0, expected) << l << "," << m;
            // Intra-modal positives vanish at window 1.
            if (ctx.modality[static_cast<size_t>(l)] == ctx.modality[static_cast<size_t>(m)]) {
                EXPECT_FALSE(pos[static_cast<size_t>(l * b + m)] != 0);
            }
        }
    }
}

TEST(NegativeMask, TnsThresholdLogic) {
    // sim 0.5 < 0.85: mutual negatives across clips.
    SelectionContext ctx = two_clip_ctx(2, 0.5);
    auto neg = build_negative_mask(ctx);
    int64_t b = static_cast<int64_t>(ctx.size());
    for (int64_t l = 0; l < b; ++l)
        for (int64_t m = 0; m < b; ++m) {
            bool cross_clip = ctx.clip_id[static_cast<size_t>(l)] != ctx.clip_id[static_cast<size_t>(m)];
            EXPECT_EQ(neg[static_cast<size_t>(l * b + m)] != 0, cross_clip);
        }

    // sim 0.9 >= 0.85: excluded entirely (neither positive nor negative).
    SelectionContext similar = two_clip_ctx(2, 0.9);
    auto neg2 = build_negative_mask(similar);
    auto pos2 = build_positive_mask(similar);
    for (int64_t l = 0; l < b; ++l)
        for (int64_t m = 0; m < b; ++m) {
            if (similar.clip_id[static_cast<size_t>(l)] != similar.clip_id[static_cast<size_t>(m)]) {
                EXPECT_FALSE(neg2[static_cast<size_t>(l * b + m)] != 0);
                EXPECT_FALSE(pos2[static_cast<size_t>(l * b + m)] != 0);
            }
        }
}

TEST(Masks, MatchBruteForceOnRandomContexts) {
    RngStream rng(41);
    for (int iter = 0; iter < 30; ++iter) {
        int64_t clips = 1 + rng.randint(4), frames = 1 + rng.randint(4);
        int64_t window = 1 + rng.randint(4);
        ContextCase cc = random_context_case(rng, clips, frames, 4, window);
        auto idx = all_indices(cc.ctx);
        MaskSet m = build_masks(cc.ctx, idx, idx);
        int64_t b = static_cast<int64_t>(cc.ctx.size());
        for (int64_t l = 0; l < b; ++l) {
            for (int64_t c = 0; c < b; ++c) {
                bool pos = l != c && oracle::hcl_naive::wps(cc.ctx, l, c);
                bool neg = oracle::hcl_naive::tns(cc.ctx, l, c);
                EXPECT_EQ(m.pos(l, c), pos);
                EXPECT_EQ(m.neg(l, c), neg);
                // Mask exclusivity.
                EXPECT_FALSE(m.pos(l, c) && m.neg(l, c));
            }
            EXPECT_FALSE(m.pos(l, l));
        }
    }
}

TEST(Zeta, CountsAndEdgeCases) {
    // 3 clips pairwise dissimilar, window 2; anchor in clip 0, candidates are
    // 6 audio features (2 frames x 3 clips): 4 negatives -> zeta = 1.5.
    SelectionContext ctx;
    ctx.window = 2;
    ctx.text_sim = {{1.0, 0.1, 0.2}, {0.1, 1.0, 0.3}, {0.2, 0.3, 1.0}};
    for (int64_t mod = 0; mod < 2; ++mod)
        for (int64_t clip = 0; clip < 3; ++clip)
            for (int64_t frame = 0; frame < 2; ++frame) {
                ctx.clip_id.push_back(clip);
                ctx.frame_index.push_back(frame);
                ctx.modality.push_back(mod == 0 ? Modality::visual : Modality::audio);
                ctx.vaf_score.push_back(25.0);
            }
    std::vector<int64_t> audio_cands{6, 7, 8, 9, 10, 11};
    EXPECT_DOUBLE_EQ(zeta(ctx, 0, audio_cands), 1.5);

    // All candidates negative -> zeta = 1.
    std::vector<int64_t> other_clips{8, 9, 10, 11};  // clips 1 and 2 audio
    EXPECT_DOUBLE_EQ(zeta(ctx, 0, other_clips), 1.0);

    // No negatives -> NoNegativesError.
    std::vector<int64_t> same_clip{6, 7};
    EXPECT_THROW(zeta(ctx, 0, same_clip), NoNegativesError);

    // Random contexts match the direct count.
    RngStream rng(43);
    for (int iter = 0; iter < 20; ++iter) {
        ContextCase cc = random_context_case(rng, 3, 2, 4);
        auto idx = all_indices(cc.ctx);
        for (int64_t l = 0; l < static_cast<int64_t>(cc.ctx.size()); ++l) {
            int64_t count = 0;
            for (int64_t c : idx) count += oracle::hcl_naive::tns(cc.ctx, l, c) ? 1 : 0;
            if (count == 0) {
                EXPECT_THROW(zeta(cc.ctx, l, idx), NoNegativesError);
            } else {
                EXPECT_DOUBLE_EQ(zeta(cc.ctx, l, idx),
                                 static_cast<double>(idx.size()) / static_cast<double>(count));
            }
        }
    }
}

TEST(ContrastiveLossSingle, LogRatioAlgebra) {
    // One positive with similarity s_p and one negative with s_n. With
    // |H2| = 2 and one negative, zeta = 2, so the Eq. 8-10 algebra gives
    // (s_n - s_p)/tau + log(zeta); with zeta forced to 1 it is (s_n - s_p)/tau.
    SelectionContext ctx;
    ctx.window = 2;
    ctx.text_sim = {{1.0, 0.2}, {0.2, 1.0}};
    // anchor: clip 0 frame 0 visual; positive: clip 0 frame 0 audio; negative: clip 1 audio.
    ctx.clip_id = {0, 0, 1};
    ctx.frame_index = {0, 0, 0};
    ctx.modality = {Modality::visual, Modality::audio, Modality::audio};
    ctx.vaf_score = {25.0, 25.0, 25.0};

    double tau = 0.1;
    Tensor feats = l2_normalize_rows(Tensor::from_values(
        {3, 2}, {1.0, 0.0, 0.8, 0.6, -0.6, 0.8}));
    double s_p = feats.at({0, 0}) * feats.at({1, 0}) + feats.at({0, 1}) * feats.at({1, 1});
    double s_n = feats.at({0, 0}) * feats.at({2, 0}) + feats.at({0, 1}) * feats.at({2, 1});

    std::vector<int64_t> cands{1, 2};
    Tensor loss = contrastive_loss_single(feats, 0, cands, ctx, tau);
    EXPECT_NEAR(loss.item(), (s_n - s_p) / tau + std::log(2.0), 1e-9);

    // zeta = 1 algebra via a candidate set where every entry is negative plus
    // the positive supplied through a wider set is impossible by construction
    // (positives share the clip), so pin the zeta=1 form directly:
    // -log(exp(s_p/tau) / (1 * exp(s_n/tau))) == (s_n - s_p)/tau.
    double direct = -std::log(std::exp(s_p / tau) / (1.0 * std::exp(s_n / tau)));
    EXPECT_NEAR(direct, (s_n - s_p) / tau, 1e-9);
}

TEST(ContrastiveLossSingle, ErrorsOnDegenerateAnchors) {
    SelectionContext ctx = two_clip_ctx();
    RngStream rng(7);
    Tensor feats = l2_normalize_rows(Tensor::randn({8, 4}, rng));
    // Candidates only from the same clip: no negatives.
    std::vector<int64_t> same_clip{1, 4, 5};  // clip 0 features
    EXPECT_THROW(contrastive_loss_single(feats, 0, same_clip, ctx, 0.1), NoNegativesError);
    // Candidates only from the other clip: no positives.
    std::vector<int64_t> other_clip{2, 3, 6, 7};
    EXPECT_THROW(contrastive_loss_single(feats, 0, other_clip, ctx, 0.1), NoPositivesError);
}

TEST(ContrastiveLossSingle, MatchesDoubleLoopOracle) {
    RngStream rng(47);
    for (int iter = 0; iter < 40; ++iter) {
        ContextCase cc = random_context_case(rng, 2, 2, 4);
        auto idx = all_indices(cc.ctx);
        for (int64_t l = 0; l < static_cast<int64_t>(cc.ctx.size()); ++l) {
            auto t = oracle::hcl_naive::anchor_terms(cc.raw, cc.ctx, l, idx, 0.1, false);
            if (t.n_pos == 0 || t.n_neg == 0) continue;
            Tensor loss = contrastive_loss_single(cc.features, l, idx, cc.ctx, 0.1);
            EXPECT_NEAR(loss.item(), -std::log(t.p / t.n), 1e-9);
        }
    }
}

TEST(ContrastiveLoss, VafUniformWeightsReduceToMean) {
    RngStream rng(53);
    ContextCase cc = random_context_case(rng, 3, 2, 4, 2, /*corrupt_fraction=*/0.0);
    std::vector<int64_t> h_v, h_a;
    for (size_t i = 0; i < cc.ctx.size(); ++i) {
        (cc.ctx.modality[i] == Modality::visual ? h_v : h_a).push_back(static_cast<int64_t>(i));
    }
    Tensor inter = contrastive_loss(cc.features, h_v, h_a, cc.ctx, 0.1, true);
    double expect = oracle::hcl_naive::contrastive(cc.raw, cc.ctx, h_v, h_a, 0.1, true);
    EXPECT_NEAR(inter.item(), expect, 1e-9);

    // Plain mean over anchors when nothing is filtered.
    double manual = 0;
    int64_t kept = 0;
    for (int64_t l : h_v) {
        auto t = oracle::hcl_naive::anchor_terms(cc.raw, cc.ctx, l, h_a, 0.1, false);
        if (t.n_pos == 0 || t.n_neg == 0) continue;
        manual += -std::log(t.p / t.n);
        ++kept;
    }
    EXPECT_NEAR(inter.item(), manual / static_cast<double>(kept), 1e-9);
}

TEST(ContrastiveLoss, SingleSurvivingAnchorGetsFullWeight) {
    SelectionContext ctx = two_clip_ctx();
    // Two visual anchors from clip 0 and clip 1; clip 1 fails VAF.
    for (size_t i = 0; i < ctx.size(); ++i) {
        if (ctx.clip_id[i] == 1) ctx.vaf_score[i] = 10.0;
    }
    RngStream rng(57);
    Tensor feats = l2_normalize_rows(Tensor::randn({8, 4}, rng));
    std::vector<int64_t> h_v{0, 1, 2, 3}, h_a{4, 5, 6, 7};
    Tensor loss = contrastive_loss(feats, h_v, h_a, ctx, 0.1, true);

    // Survivors are exactly the clip-0 visual anchors (0 and 1).
    std::vector<std::vector<double>> raw;
    for (int64_t i = 0; i < 8; ++i)
        raw.emplace_back(feats.values().begin() + i * 4, feats.values().begin() + (i + 1) * 4);
    auto t0 = oracle::hcl_naive::anchor_terms(raw, ctx, 0, h_a, 0.1, false);
    auto t1 = oracle::hcl_naive::anchor_terms(raw, ctx, 1, h_a, 0.1, false);
    double expect = (-std::log(t0.p / t0.n) - std::log(t1.p / t1.n)) / 2.0;
    EXPECT_NEAR(loss.item(), expect, 1e-9);
}

TEST(ContrastiveLoss, AllAnchorsFilteredReturnsZero) {
    SelectionContext ctx = two_clip_ctx();
    for (double& v : ctx.vaf_score) v = 5.0;  // everything below threshold
    RngStream rng(59);
    Tensor feats = l2_normalize_rows(Tensor::randn({8, 4}, rng));
    std::vector<int64_t> h_v{0, 1, 2, 3}, h_a{4, 5, 6, 7};
    Tensor loss = contrastive_loss(feats, h_v, h_a, ctx, 0.1, true);
    EXPECT_DOUBLE_EQ(loss.item(), 0.0);
}

TEST(HclLoss, SplitEqualsSumOfFourTerms) {
    RngStream rng(61);
    ContextCase cc = random_context_case(rng, 3, 2, 4);
    HCLConfig cfg;
    cfg.tau = 0.1;
    Tensor total = hcl_loss(cc.features, cc.ctx, cfg);

    std::vector<int64_t> h_v, h_a;
    for (size_t i = 0; i < cc.ctx.size(); ++i) {
        (cc.ctx.modality[i] == Modality::visual ? h_v : h_a).push_back(static_cast<int64_t>(i));
    }
    Tensor t1 = contrastive_loss(cc.features, h_v, h_v, cc.ctx, cfg.tau, false);
    Tensor t2 = contrastive_loss(cc.features, h_a, h_a, cc.ctx, cfg.tau, false);
    Tensor t3 = contrastive_loss(cc.features, h_v, h_a, cc.ctx, cfg.tau, true);
    Tensor t4 = contrastive_loss(cc.features, h_a, h_v, cc.ctx, cfg.tau, true);
    EXPECT_NEAR(total.item(), t1.item() + t2.item() + t3.item() + t4.item(), 1e-12);
}

TEST(HclLoss, BothVariantsMatchDoubleLoopOracle) {
    RngStream rng(67);
    for (int iter = 0; iter < 30; ++iter) {
        int64_t clips = 2 + rng.randint(3), frames = 1 + rng.randint(3);
        int64_t window = 1 + rng.randint(3);
        ContextCase cc = random_context_case(rng, clips, frames, 4, window);
        for (HclVariant variant : {HclVariant::modality_split, HclVariant::modality_gathered}) {
            HCLConfig cfg;
            cfg.tau = 0.05 + rng.uniform(0.0, 0.3);
            cfg.variant = variant;
            Tensor got = hcl_loss(cc.features, cc.ctx, cfg);
            double expect = oracle::hcl_naive::hcl(cc.raw, cc.ctx, cfg);
            EXPECT_NEAR(got.item(), expect, 1e-9) << "variant " << static_cast<int>(variant);
        }
    }
}

TEST(HclLoss, SingleClipTwoFramesStructure) {
    // B=1 clip, L=2 frames, both modalities: intra-modal positives exist via
    // the window, but there are no negatives anywhere, so every anchor is
    // skipped and the loss degrades to 0 with a warning.
    SelectionContext ctx;
    ctx.window = 2;
    ctx.text_sim = {{1.0}};
    for (int64_t mod = 0; mod < 2; ++mod)
        for (int64_t f = 0; f < 2; ++f) {
            ctx.clip_id.push_back(0);
            ctx.frame_index.push_back(f);
            ctx.modality.push_back(mod == 0 ? Modality::visual : Modality::audio);
            ctx.vaf_score.push_back(25.0);
        }
    RngStream rng(71);
    Tensor feats = l2_normalize_rows(Tensor::randn({4, 4}, rng));
    HCLConfig cfg;
    Tensor loss = hcl_loss(feats, ctx, cfg);
    EXPECT_DOUBLE_EQ(loss.item(), 0.0);

    // Adding a dissimilar second clip restores positives and negatives:
    // inter-modal anchors are positive-rich (same-frame and cross-frame
    // within the window), intra-modal anchors pair the two frames.
    SelectionContext ctx2 = two_clip_ctx(2, 0.3);
    Tensor feats2 = l2_normalize_rows(Tensor::randn({8, 4}, rng));
    Tensor loss2 = hcl_loss(feats2, ctx2, cfg);
    EXPECT_TRUE(std::isfinite(loss2.item()));
    EXPECT_NE(loss2.item(), 0.0);
}

TEST(HclInvariants, VafAndTnsMonotonicity) {
    RngStream rng(73);
    for (int iter = 0; iter < 10; ++iter) {
        ContextCase cc = random_context_case(rng, 4, 2, 4);
        auto idx = all_indices(cc.ctx);

        // Lowering vaf_threshold never shrinks the set of passing anchors.
        SelectionContext lo = cc.ctx;
        lo.vaf_threshold = 8.0;  // below both oracle values
        MaskSet m_hi = build_masks(cc.ctx, idx, idx);
        MaskSet m_lo = build_masks(lo, idx, idx);
        for (size_t i = 0; i < m_hi.vaf_anchor.size(); ++i) {
            EXPECT_GE(m_lo.vaf_anchor[i], m_hi.vaf_anchor[i]);
        }

        // Raising tns_threshold never shrinks the negative set.
        SelectionContext hi_tns = cc.ctx;
        hi_tns.tns_threshold = 0.99;
        MaskSet m_tns = build_masks(hi_tns, idx, idx);
        for (size_t i = 0; i < m_tns.negative.size(); ++i) {
            EXPECT_GE(m_tns.negative[i], m_hi.negative[i]);
        }
    }
}

TEST(HclInvariants, LossRespondsToSimilarityPerturbations) {
    // Increasing a positive pair's similarity decreases the loss; increasing
    // a negative's similarity increases it.
    SelectionContext ctx;
    ctx.window = 2;
    ctx.text_sim = {{1.0, 0.1}, {0.1, 1.0}};
    ctx.clip_id = {0, 0, 1};
    ctx.frame_index = {0, 0, 0};
    ctx.modality = {Modality::visual, Modality::audio, Modality::audio};
    ctx.vaf_score = {25.0, 25.0, 25.0};
    std::vector<int64_t> cands{1, 2};

    auto loss_with = [&](double pos_x, double neg_x) {
        Tensor feats = l2_normalize_rows(Tensor::from_values(
            {3, 2}, {1.0, 0.0, pos_x, std::sqrt(1.0 - pos_x * pos_x), neg_x,
                     std::sqrt(1.0 - neg_x * neg_x)}));
        return contrastive_loss_single(feats, 0, cands, ctx, 0.1).item();
    };
    EXPECT_LT(loss_with(0.9, 0.1), loss_with(0.5, 0.1));  // better positive -> lower loss
    EXPECT_GT(loss_with(0.5, 0.6), loss_with(0.5, 0.1));  // better negative -> higher loss
}

TEST(HclLoss, GradientsFlowToFeatures) {
    RngStream rng(79);
    ContextCase cc = random_context_case(rng, 3, 2, 4);
    HCLConfig cfg;
    Tensor loss = hcl_loss(cc.features, cc.ctx, cfg);
    backward(loss);
    double g2 = 0;
    for (double g : cc.features.grad()) g2 += g * g;
    EXPECT_GT(g2, 0.0);
}

TEST(HclLoss, InfonceOptionBoundedBelow) {
    RngStream rng(83);
    ContextCase cc = random_context_case(rng, 3, 2, 4);
    HCLConfig cfg;
    cfg.infonce_denominator = true;
    Tensor loss = hcl_loss(cc.features, cc.ctx, cfg);
    // -log(P/(P+N)) per anchor is positive; sums of means stay positive.
    EXPECT_GT(loss.item(), 0.0);
}
