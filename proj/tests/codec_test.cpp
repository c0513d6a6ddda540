#include "svgen/codec.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "context_util.hpp"
#include "svgen/cam.hpp"
#include "svgen/hcl.hpp"
#include "svgen/oracles.hpp"

using namespace svgen;

TEST(CodecConfig, PaperScalePresetValidatesEq2Shapes) {
    CodecConfig paper = CodecConfig::paper_scale();
    paper.validate();
    EXPECT_EQ(paper.grid_h(), 8);  // 128/16
    EXPECT_EQ(paper.grid_w(), 8);
    EXPECT_EQ(paper.grid_f(), 5);  // 80/16
    EXPECT_EQ(paper.grid_t(), 5);  // 800/(10*16)
    EXPECT_EQ(paper.N_v, 8192);
    EXPECT_EQ(paper.N_a, 4096);
    EXPECT_EQ(paper.d_v, 256);
}

TEST(CodecConfig, DeskPresetShapes) {
    CodecConfig desk = CodecConfig::desk();
    desk.validate();
    EXPECT_EQ(desk.grid_h(), 4);  // 16/4
    EXPECT_EQ(desk.grid_t(), 4);  // 80/(5*4)
}

TEST(CodecConfig, RejectsIndivisibleShapes) {
    CodecConfig bad = CodecConfig::desk();
    bad.H = 15;
    EXPECT_THROW(bad.validate(), ValueError);
    CodecConfig bad2 = CodecConfig::desk();
    bad2.channels_v = {8};  // ds_v=4 needs two stages
    EXPECT_THROW(bad2.validate(), ValueError);
}

TEST(Encode, ShapesPerEq2) {
    TwoStreamCodec codec(CodecConfig::desk());
    const CodecConfig& cfg = codec.config();
    RngStream rng(3);

    Tensor frames = Tensor::rand_uniform({2, 3, cfg.H, cfg.W}, rng, 0.0, 1.0);
    Tensor z_v = codec.encode_visual(frames);
    EXPECT_EQ(z_v.shape(), (Shape{2, cfg.d_v, cfg.grid_h(), cfg.grid_w()}));

    // Two contiguous audio frames concatenated in time.
    int64_t cols = 2 * (cfg.T / cfg.L);
    Tensor mel = Tensor::rand_uniform({1, 1, cfg.F, cols}, rng, 0.0, 1.0);
    Tensor z_a = codec.encode_audio(mel);
    EXPECT_EQ(z_a.shape(), (Shape{1, cfg.d_a, cfg.grid_f(), 2 * cfg.grid_t()}));

    EXPECT_THROW(codec.encode_visual(Tensor::zeros({1, 3, 8, 8})), ShapeError);
    EXPECT_THROW(codec.encode_audio(Tensor::zeros({1, 1, cfg.F, 7})), ShapeError);
}

TEST(Encode, ShapeAlgebraOverRandomConfigs) {
    RngStream rng(5);
    for (int iter = 0; iter < 6; ++iter) {
        CodecConfig cfg = CodecConfig::desk();
        int64_t stages = 1 + rng.randint(2);
        cfg.ds_v = int64_t{1} << stages;
        cfg.ds_a = cfg.ds_v;
        cfg.channels_v.assign(static_cast<size_t>(stages), 4);
        cfg.channels_a.assign(static_cast<size_t>(stages), 4);
        cfg.disc_channels = {4, 4};
        cfg.d_v = 4;
        cfg.d_a = 4;
        cfg.groups = 2;
        cfg.H = cfg.ds_v * (1 + rng.randint(3));
        cfg.W = cfg.ds_v * (1 + rng.randint(3));
        cfg.L = 2;
        cfg.F = cfg.ds_a * (1 + rng.randint(2));
        cfg.T = cfg.L * cfg.ds_a * (1 + rng.randint(2));
        cfg.validate();
        TwoStreamCodec codec(cfg);
        Tensor frames = Tensor::rand_uniform({1, 3, cfg.H, cfg.W}, rng, 0.0, 1.0);
        EXPECT_EQ(codec.encode_visual(frames).shape(),
                  (Shape{1, cfg.d_v, cfg.H / cfg.ds_v, cfg.W / cfg.ds_v}));
        Tensor mel = Tensor::rand_uniform({1, 1, cfg.F, cfg.T / cfg.L}, rng, 0.0, 1.0);
        EXPECT_EQ(codec.encode_audio(mel).shape(),
                  (Shape{1, cfg.d_a, cfg.F / cfg.ds_a, (cfg.T / cfg.L) / cfg.ds_a}));
    }
}

TEST(RoundTrip, EncodeQuantizeDecodePreservesShape) {
    TwoStreamCodec codec(CodecConfig::desk());
    const CodecConfig& cfg = codec.config();
    RngStream rng(7);

    Tensor frames = Tensor::rand_uniform({2, 3, cfg.H, cfg.W}, rng, 0.0, 1.0);
    VqganLossParts parts = vqgan_loss_visual(codec, frames, 1.0);
    EXPECT_EQ(parts.recon_media.shape(), frames.shape());
    EXPECT_TRUE(std::isfinite(parts.mse));

    Tensor mel = Tensor::rand_uniform({1, 1, cfg.F, cfg.T / cfg.L}, rng, 0.0, 1.0);
    VqganLossParts aparts = vqgan_loss_audio(codec, mel, 1.0);
    EXPECT_EQ(aparts.recon_media.shape(), mel.shape());
    EXPECT_TRUE(std::isfinite(aparts.mse));
}

TEST(Perceptual, IdentityAndSymmetry) {
    RngStream rng(11);
    PerceptualNet perc(3, rng);
    Tensor x = Tensor::rand_uniform({1, 3, 16, 16}, rng, 0.0, 1.0);
    Tensor y = Tensor::rand_uniform({1, 3, 16, 16}, rng, 0.0, 1.0);
    EXPECT_DOUBLE_EQ(perc.distance(x, x).item(), 0.0);
    EXPECT_NEAR(perc.distance(x, y).item(), perc.distance(y, x).item(), 1e-9);
    EXPECT_GT(perc.distance(x, y).item(), 0.0);
}

TEST(Perceptual, CorrelatesWithPixelMseOverPerturbations) {
    RngStream rng(13);
    PerceptualNet perc(3, rng);
    Tensor x = Tensor::rand_uniform({1, 3, 16, 16}, rng, 0.2, 0.8);
    std::vector<double> mses, percs;
    for (int i = 1; i <= 12; ++i) {
        double eps = 0.02 * static_cast<double>(i);
        std::vector<double> pert = x.values();
        RngStream noise(100 + static_cast<uint64_t>(i));
        for (double& v : pert) v += eps * noise.uniform(-1.0, 1.0);
        Tensor y = Tensor::from_values(x.shape(), pert);
        Tensor d = sub(x, y);
        mses.push_back(sum(mul(d, d)).item());
        percs.push_back(perc.distance(x, y).item());
    }
    EXPECT_GT(oracle::spearman(mses, percs), 0.5);
}

TEST(Adversarial, HalfProbabilityArithmetic) {
    // D outputting probability 0.5 everywhere means zero logits.
    Tensor zeros = Tensor::zeros({1, 1, 2, 2});
    AdvTerms t = adversarial_terms(zeros, zeros, zeros);
    EXPECT_NEAR(t.d_loss.item(), 2.0 * std::log(2.0), 1e-12);
    EXPECT_NEAR(t.eq3_value, -2.0 * std::log(2.0), 1e-12);  // 2*log(0.5) per patch
    EXPECT_NEAR(t.g_loss.item(), std::log(2.0), 1e-12);
}

TEST(Adversarial, PerfectDiscriminatorZerosEq3Term) {
    Tensor real = Tensor::full({1, 1, 2, 2}, 40.0);   // sigmoid ~ 1
    Tensor fake = Tensor::full({1, 1, 2, 2}, -40.0);  // sigmoid ~ 0
    AdvTerms t = adversarial_terms(real, fake, fake);
    EXPECT_NEAR(t.eq3_value, 0.0, 1e-9);
    EXPECT_NEAR(t.d_loss.item(), 0.0, 1e-9);
}

TEST(Adversarial, GeneratorLossGradientPassesFiniteDifferences) {
    RngStream rng(17);
    std::vector<Tensor> params{Tensor::randn({1, 1, 3, 3}, rng, 1.0, true)};
    double err = oracle::fd_max_rel_error(
        [](const std::vector<Tensor>& p) {
            return mean(softplus(neg(p[0])));  // g_loss on fake logits
        },
        params);
    EXPECT_LT(err, 1e-4);
}

TEST(VqganLoss, ComponentsRecomposeToTotal) {
    TwoStreamCodec codec(CodecConfig::desk());
    const CodecConfig& cfg = codec.config();
    RngStream rng(19);
    Tensor frames = Tensor::rand_uniform({2, 3, cfg.H, cfg.W}, rng, 0.0, 1.0);
    double w = 0.7;
    VqganLossParts parts = vqgan_loss_visual(codec, frames, w);
    double recomposed = parts.recon.item() + parts.perceptual.item() + parts.codebook.item() +
                        w * parts.g_adv.item();
    EXPECT_NEAR(parts.total.item(), recomposed, 1e-9);
    EXPECT_NEAR(parts.eq3_adversarial, -parts.d_loss.item(), 1e-12);
}

TEST(SvgTotalLoss, AlphaZeroDropsHclExactly) {
    TwoStreamCodec codec(CodecConfig::desk());
    const CodecConfig& cfg = codec.config();
    RngStream rng(23);
    Tensor frames = Tensor::rand_uniform({1, 3, cfg.H, cfg.W}, rng, 0.0, 1.0);
    Tensor mel = Tensor::rand_uniform({1, 1, cfg.F, cfg.T / cfg.L}, rng, 0.0, 1.0);
    VqganLossParts v = vqgan_loss_visual(codec, frames, 1.0);
    VqganLossParts a = vqgan_loss_audio(codec, mel, 1.0);
    Tensor fake_hcl = Tensor::scalar(123.0);
    SvgLossParts off = svg_total_loss(v, a, fake_hcl, 0.0);
    EXPECT_DOUBLE_EQ(off.total.item(), v.total.item() + a.total.item());
    SvgLossParts on = svg_total_loss(v, a, fake_hcl, 1.0);
    EXPECT_NEAR(on.total.item(), v.total.item() + a.total.item() + 123.0, 1e-9);
}

TEST(GradFlow, GeneratorAndDiscriminatorStayIsolated) {
    TwoStreamCodec codec(CodecConfig::desk());
    const CodecConfig& cfg = codec.config();
    RngStream rng(29);
    Tensor frames = Tensor::rand_uniform({1, 3, cfg.H, cfg.W}, rng, 0.0, 1.0);

    auto grad_norm = [](const std::vector<NamedTensor>& named) {
        double s = 0;
        for (const auto& [name, t] : named) {
            if (!t.requires_grad()) continue;
            for (double g : t.grad()) s += g * g;
        }
        return s;
    };
    auto zero_all = [](const std::vector<NamedTensor>& named) {
        for (const auto& [name, t] : named) {
            Tensor tt = t;
            if (tt.requires_grad()) tt.zero_grad();
        }
    };

    std::vector<NamedTensor> gen = codec.named_generator_params();
    std::vector<NamedTensor> disc = codec.named_discriminator_params();

    VqganLossParts parts = vqgan_loss_visual(codec, frames, 1.0);
    backward(parts.total);
    EXPECT_GT(grad_norm(gen), 0.0);
    EXPECT_DOUBLE_EQ(grad_norm(disc), 0.0);

    zero_all(gen);
    backward(parts.d_loss);
    EXPECT_DOUBLE_EQ(grad_norm(gen), 0.0);
    EXPECT_GT(grad_norm(disc), 0.0);
}

TEST(GradFlow, ReconstructionAndContrastivePathsBothReachEncoder) {
    // With alpha=1 the total loss must feed encoder parameters through both
    // the reconstruction path and the HCL path; probe each in isolation.
    TwoStreamCodec codec(CodecConfig::desk());
    const CodecConfig& cfg = codec.config();
    CamConfig cam_cfg;
    cam_cfg.d_v = cfg.d_v;
    cam_cfg.d_a = cfg.d_a;
    cam_cfg.d = cfg.d_v;
    CrossModalAttention cam(cam_cfg);
    RngStream rng(31);

    // Two clips, one frame each.
    Tensor frames = Tensor::rand_uniform({2, 3, cfg.H, cfg.W}, rng, 0.0, 1.0);
    Tensor mel = Tensor::rand_uniform({2, 1, cfg.F, cfg.T / cfg.L}, rng, 0.0, 1.0);

    std::vector<NamedTensor> gen = codec.named_generator_params();
    auto enc_grad_norm = [&]() {
        double s = 0;
        for (const auto& [name, t] : gen) {
            if (name.find("/enc/") == std::string::npos || !t.requires_grad()) continue;
            for (double g : t.grad()) s += g * g;
        }
        return s;
    };
    auto zero_gen = [&]() {
        for (auto& [name, t] : gen) {
            Tensor tt = t;
            if (tt.requires_grad()) tt.zero_grad();
        }
    };

    // Path 1: reconstruction only.
    VqganLossParts v = vqgan_loss_visual(codec, frames, 0.0);
    backward(v.recon);
    EXPECT_GT(enc_grad_norm(), 0.0);
    zero_gen();

    // Path 2: HCL only, via CAM on encoder features.
    Tensor z_v = codec.encode_visual(frames);
    Tensor z_a = codec.encode_audio(mel);
    SelectionContext ctx;
    ctx.window = 2;
    ctx.text_sim = {{1.0, 0.2}, {0.2, 1.0}};
    std::vector<Tensor> rows;
    for (int64_t clip = 0; clip < 2; ++clip) {
        Tensor zv_k = reshape(slice(z_v, 0, clip, 1), {cfg.d_v, cfg.grid_h(), cfg.grid_w()});
        Tensor za_k = reshape(slice(z_a, 0, clip, 1), {cfg.d_a, cfg.grid_f(), cfg.grid_t()});
        CamOutput out = cam.forward(zv_k, za_k);
        rows.push_back(reshape(out.h_v, {1, cam_cfg.d}));
        ctx.clip_id.push_back(clip);
        ctx.frame_index.push_back(0);
        ctx.modality.push_back(Modality::visual);
        ctx.vaf_score.push_back(25.0);
    }
    for (int64_t clip = 0; clip < 2; ++clip) {
        Tensor zv_k = reshape(slice(z_v, 0, clip, 1), {cfg.d_v, cfg.grid_h(), cfg.grid_w()});
        Tensor za_k = reshape(slice(z_a, 0, clip, 1), {cfg.d_a, cfg.grid_f(), cfg.grid_t()});
        CamOutput out = cam.forward(zv_k, za_k);
        rows.push_back(reshape(out.h_a, {1, cam_cfg.d}));
        ctx.clip_id.push_back(clip);
        ctx.frame_index.push_back(0);
        ctx.modality.push_back(Modality::audio);
        ctx.vaf_score.push_back(25.0);
    }
    Tensor features = concat(rows, 0);
    HCLConfig hcl_cfg;
    Tensor hcl = hcl_loss(features, ctx, hcl_cfg);
    backward(hcl);
    EXPECT_GT(enc_grad_norm(), 0.0);
}
