#pragma once

// Two-stream convolutional VQGAN: per-modality encoder/decoder pairs with
// self-attention tails, patch discriminators, a frozen random perceptual
// extractor, and the four-component loss stacks.

#include <cstdint>
#include <string>
#include <vector>

#include "svgen/nn.hpp"
#include "svgen/quantizer.hpp"
#include "svgen/rng.hpp"
#include "svgen/tensor.hpp"

namespace svgen {

struct CodecConfig {
    // media shapes
    int64_t H = 16, W = 16, C = 3;  // frame height/width/channels
    int64_t F = 16, T = 80, L = 5;  // mel bins, mel width, frame count
    // architecture
    int64_t ds_v = 4, ds_a = 4;      // downsampling rates (power of two)
    int64_t d_v = 16, d_a = 16;      // feature dims
    int64_t N_v = 64, N_a = 32;      // codebook sizes
    std::vector<int64_t> channels_v{8, 16};  // width after each downsample stage
    std::vector<int64_t> channels_a{8, 16};
    std::vector<int64_t> disc_channels{8, 16};
    int64_t res_blocks = 1;
    int64_t attn_layers = 2;
    int64_t groups = 8;
    // loss weights
    double beta = 0.25;
    double alpha = 1.0;
    CodebookUpdate update = CodebookUpdate::ema;
    uint64_t init_seed = 1234;

    int64_t grid_h() const { return H / ds_v; }
    int64_t grid_w() const { return W / ds_v; }
    int64_t grid_f() const { return F / ds_a; }
    int64_t grid_t() const { return T / (L * ds_a); }

    static bool is_pow2(int64_t v) { return v > 0 && (v & (v - 1)) == 0; }

    void validate() const {
        auto fail = [](const std::string& msg) { throw ValueError("CodecConfig: " + msg); };
        if (!is_pow2(ds_v) || !is_pow2(ds_a)) fail("downsampling rates must be powers of two");
        if (H % ds_v != 0 || W % ds_v != 0) fail("H and W must be divisible by ds_v");
        if (T % L != 0) fail("T must be divisible by L");
        if (F % ds_a != 0 || (T / L) % ds_a != 0) fail("F and T/L must be divisible by ds_a");
        auto stages = [](int64_t ds) {
            int64_t s = 0;
            while ((int64_t{1} << s) < ds) ++s;
            return s;
        };
        if (static_cast<int64_t>(channels_v.size()) != stages(ds_v)) {
            fail("channels_v must list one width per visual downsample stage");
        }
        if (static_cast<int64_t>(channels_a.size()) != stages(ds_a)) {
            fail("channels_a must list one width per audio downsample stage");
        }
        if (disc_channels.size() != 2) fail("disc_channels must list two widths");
        if (d_v < 1 || d_a < 1 || N_v < 1 || N_a < 1) fail("dims and codebook sizes must be positive");
        if (res_blocks < 0 || attn_layers < 1) fail("need at least one attention layer");
        if (beta < 0.0) fail("beta must be non-negative");
    }

    // Shape-level mirror of the paper-scale model; validates but is not meant
    // to be trained here.
    static CodecConfig paper_scale() {
        CodecConfig c;
        c.H = 128;
        c.W = 128;
        c.F = 80;
        c.T = 800;
        c.L = 10;
        c.ds_v = 16;
        c.ds_a = 16;
        c.d_v = 256;
        c.d_a = 256;
        c.N_v = 8192;
        c.N_a = 4096;
        c.channels_v = {64, 128, 256, 256};
        c.channels_a = {64, 128, 256, 256};
        c.disc_channels = {64, 128};
        c.res_blocks = 2;
        return c;
    }

    static CodecConfig desk() { return CodecConfig{}; }
};

// ---------------------------------------------------------------------------
// encoder / decoder / discriminator / perceptual stacks
// ---------------------------------------------------------------------------

class Encoder {
public:
    Encoder() = default;
    Encoder(int64_t in_ch, const std::vector<int64_t>& channels, int64_t d, int64_t res_blocks,
            int64_t attn_layers, int64_t groups, RngStream& rng) {
        stem_ = Conv2d(in_ch, channels.front(), 3, 1, 1, rng);
        int64_t prev = channels.front();
        for (int64_t ch : channels) {
            Stage st;
            st.down = Conv2d(prev, ch, 4, 2, 1, rng);
            for (int64_t r = 0; r < res_blocks; ++r) st.res.emplace_back(ch, groups, rng);
            stages_.push_back(std::move(st));
            prev = ch;
        }
        proj_norm_ = GroupNorm(prev, groups);
        proj_ = Conv2d(prev, d, 1, 1, 0, rng);
        for (int64_t a = 0; a < attn_layers; ++a) attn_.emplace_back(d, groups, rng);
    }

    // (B, in_ch, H, W) -> (B, d, H/ds, W/ds); the trailing self-attention
    // outputs are the encoder outputs.
    Tensor forward(const Tensor& x) const {
        Tensor h = stem_.forward(x);
        for (const Stage& st : stages_) {
            h = st.down.forward(h);
            for (const ResBlock& r : st.res) h = r.forward(h);
        }
        h = proj_.forward(relu(proj_norm_.forward(h)));
        for (const SelfAttention2d& a : attn_) h = a.forward(h);
        return h;
    }

    void collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
        stem_.collect(prefix + "/stem", out);
        for (size_t i = 0; i < stages_.size(); ++i) {
            stages_[i].down.collect(prefix + "/down" + std::to_string(i), out);
            for (size_t r = 0; r < stages_[i].res.size(); ++r) {
                stages_[i].res[r].collect(prefix + "/down" + std::to_string(i) + "/res" + std::to_string(r), out);
            }
        }
        proj_norm_.collect(prefix + "/proj_norm", out);
        proj_.collect(prefix + "/proj", out);
        for (size_t i = 0; i < attn_.size(); ++i) attn_[i].collect(prefix + "/attn" + std::to_string(i), out);
    }

private:
    struct Stage {
        Conv2d down;
        std::vector<ResBlock> res;
    };
    Conv2d stem_;
    std::vector<Stage> stages_;
    GroupNorm proj_norm_;
    Conv2d proj_;
    std::vector<SelfAttention2d> attn_;
};

class Decoder {
public:
    Decoder() = default;
    Decoder(int64_t out_ch, const std::vector<int64_t>& channels, int64_t d, int64_t res_blocks,
            int64_t attn_layers, int64_t groups, RngStream& rng) {
        for (int64_t a = 0; a < attn_layers; ++a) attn_.emplace_back(d, groups, rng);
        proj_ = Conv2d(d, channels.back(), 1, 1, 0, rng);
        for (size_t i = channels.size(); i-- > 0;) {
            Stage st;
            for (int64_t r = 0; r < res_blocks; ++r) st.res.emplace_back(channels[i], groups, rng);
            int64_t next = i > 0 ? channels[i - 1] : channels[0];
            st.up_conv = Conv2d(channels[i], next, 3, 1, 1, rng);
            stages_.push_back(std::move(st));
        }
        out_norm_ = GroupNorm(channels.front(), groups);
        out_ = Conv2d(channels.front(), out_ch, 3, 1, 1, rng);
    }

    // Mirrors the encoder; upsampling is nearest-neighbor followed by conv.
    Tensor forward(const Tensor& zq) const {
        Tensor h = zq;
        for (const SelfAttention2d& a : attn_) h = a.forward(h);
        h = proj_.forward(h);
        for (const Stage& st : stages_) {
            for (const ResBlock& r : st.res) h = r.forward(h);
            h = st.up_conv.forward(upsample_nearest2(h, 2));
        }
        return out_.forward(relu(out_norm_.forward(h)));
    }

    void collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
        for (size_t i = 0; i < attn_.size(); ++i) attn_[i].collect(prefix + "/attn" + std::to_string(i), out);
        proj_.collect(prefix + "/proj", out);
        for (size_t i = 0; i < stages_.size(); ++i) {
            for (size_t r = 0; r < stages_[i].res.size(); ++r) {
                stages_[i].res[r].collect(prefix + "/up" + std::to_string(i) + "/res" + std::to_string(r), out);
            }
            stages_[i].up_conv.collect(prefix + "/up" + std::to_string(i), out);
        }
        out_norm_.collect(prefix + "/out_norm", out);
        out_.collect(prefix + "/out", out);
    }

private:
    struct Stage {
        std::vector<ResBlock> res;
        Conv2d up_conv;
    };
    std::vector<SelfAttention2d> attn_;
    Conv2d proj_;
    std::vector<Stage> stages_;
    GroupNorm out_norm_;
    Conv2d out_;
};

// Three-layer strided conv stack; one logit per receptive-field patch.
class PatchDiscriminator {
public:
    PatchDiscriminator() = default;
    PatchDiscriminator(int64_t in_ch, const std::vector<int64_t>& channels, RngStream& rng)
        : c1_(in_ch, channels[0], 4, 2, 1, rng),
          c2_(channels[0], channels[1], 4, 2, 1, rng),
          head_(channels[1], 1, 1, 1, 0, rng) {}

    Tensor forward(const Tensor& x) const {  // (B, 1, h', w') logits
        return head_.forward(leaky_relu(c2_.forward(leaky_relu(c1_.forward(x)))));
    }

    void collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
        c1_.collect(prefix + "/c1", out);
        c2_.collect(prefix + "/c2", out);
        head_.collect(prefix + "/head", out);
    }

    std::vector<Tensor> params() const {
        std::vector<NamedTensor> named;
        collect("", named);
        std::vector<Tensor> out;
        collect_params(named, out);
        return out;
    }

private:
    Conv2d c1_, c2_, head_;
};

// Frozen random 3-stage conv features; stands in for a pretrained perceptual
// network. Gradients flow through to the inputs but the weights never move.
class PerceptualNet {
public:
    PerceptualNet() = default;
    PerceptualNet(int64_t in_ch, RngStream& rng)
        : c1_(in_ch, 8, 3, 2, 1, rng), c2_(8, 16, 3, 2, 1, rng), c3_(16, 32, 3, 2, 1, rng) {
        for (Conv2d* c : {&c1_, &c2_, &c3_}) {
            c->w.set_requires_grad(false);
            c->b.set_requires_grad(false);
        }
    }

    // Sum of squared feature-map distances over the three stages.
    Tensor distance(const Tensor& x, const Tensor& y) const {
        Tensor fx1 = relu(c1_.forward(x)), fy1 = relu(c1_.forward(y));
        Tensor fx2 = relu(c2_.forward(fx1)), fy2 = relu(c2_.forward(fy1));
        Tensor fx3 = c3_.forward(fx2), fy3 = c3_.forward(fy2);
        Tensor d1 = sub(fx1, fy1), d2 = sub(fx2, fy2), d3 = sub(fx3, fy3);
        return add(add(sum(mul(d1, d1)), sum(mul(d2, d2))), sum(mul(d3, d3)));
    }

    void collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
        c1_.collect(prefix + "/c1", out);
        c2_.collect(prefix + "/c2", out);
        c3_.collect(prefix + "/c3", out);
    }

private:
    Conv2d c1_, c2_, c3_;
};

// ---------------------------------------------------------------------------
// streams
// ---------------------------------------------------------------------------

struct VqganStream {
    Encoder enc;
    Decoder dec;
    PatchDiscriminator disc;
    PerceptualNet perc;
    Codebook codebook;

    VqganStream() = default;
    VqganStream(int64_t media_ch, const std::vector<int64_t>& channels,
                const std::vector<int64_t>& disc_channels, int64_t d, int64_t n_entries,
                double beta, CodebookUpdate update, int64_t res_blocks, int64_t attn_layers,
                int64_t groups, RngStream& rng) {
        enc = Encoder(media_ch, channels, d, res_blocks, attn_layers, groups, rng);
        dec = Decoder(media_ch, channels, d, res_blocks, attn_layers, groups, rng);
        disc = PatchDiscriminator(media_ch, disc_channels, rng);
        perc = PerceptualNet(media_ch, rng);
        CodebookConfig cb;
        cb.num_entries = n_entries;
        cb.dim = d;
        cb.beta = beta;
        cb.update = update;
        codebook = Codebook(cb, rng);
    }

    void collect_generator(const std::string& prefix, std::vector<NamedTensor>& out) const {
        enc.collect(prefix + "/enc", out);
        dec.collect(prefix + "/dec", out);
    }

    void collect_discriminator(const std::string& prefix, std::vector<NamedTensor>& out) const {
        disc.collect(prefix + "/disc", out);
    }
};

class TwoStreamCodec {
public:
    explicit TwoStreamCodec(CodecConfig cfg) : cfg_(cfg) {
        cfg_.validate();
        RngStream rng_v(derive_seed(cfg.init_seed, "codec-visual"));
        RngStream rng_a(derive_seed(cfg.init_seed, "codec-audio"));
        visual_ = VqganStream(cfg.C, cfg.channels_v, cfg.disc_channels, cfg.d_v, cfg.N_v, cfg.beta,
                              cfg.update, cfg.res_blocks, cfg.attn_layers, cfg.groups, rng_v);
        audio_ = VqganStream(1, cfg.channels_a, cfg.disc_channels, cfg.d_a, cfg.N_a, cfg.beta,
                             cfg.update, cfg.res_blocks, cfg.attn_layers, cfg.groups, rng_a);
    }

    const CodecConfig& config() const { return cfg_; }
    VqganStream& visual() { return visual_; }
    VqganStream& audio() { return audio_; }

    // Frames are encoded separately: (B, C, H, W) -> (B, d_v, h, w).
    Tensor encode_visual(const Tensor& frames) {
        if (frames.rank() != 4 || frames.dim(1) != cfg_.C || frames.dim(2) != cfg_.H ||
            frames.dim(3) != cfg_.W) {
            throw ShapeError("encode_visual: expected (B," + std::to_string(cfg_.C) + "," +
                             std::to_string(cfg_.H) + "," + std::to_string(cfg_.W) + "), got " +
                             shape_str(frames.shape()));
        }
        return visual_.enc.forward(frames);
    }

    // Contiguous audio frames are concatenated in time and encoded together:
    // (B, 1, F, n*T/L) -> (B, d_a, f, n*t).
    Tensor encode_audio(const Tensor& mel) {
        if (mel.rank() != 4 || mel.dim(1) != 1 || mel.dim(2) != cfg_.F) {
            throw ShapeError("encode_audio: expected (B,1," + std::to_string(cfg_.F) +
                             ",n*T/L), got " + shape_str(mel.shape()));
        }
        int64_t frame_cols = cfg_.T / cfg_.L;
        if (mel.dim(3) % frame_cols != 0 || mel.dim(3) == 0) {
            throw ShapeError("encode_audio: mel width " + std::to_string(mel.dim(3)) +
                             " is not a whole number of " + std::to_string(frame_cols) +
                             "-column audio frames");
        }
        return audio_.enc.forward(mel);
    }

    Tensor decode_visual(const Tensor& zq) { return visual_.dec.forward(zq); }
    Tensor decode_audio(const Tensor& zq) { return audio_.dec.forward(zq); }

    std::vector<NamedTensor> named_generator_params() const {
        std::vector<NamedTensor> out;
        visual_.collect_generator("codec/visual", out);
        audio_.collect_generator("codec/audio", out);
        if (cfg_.update == CodebookUpdate::loss) {
            out.emplace_back("codec/visual/codebook/entries", visual_.codebook.entries());
            out.emplace_back("codec/audio/codebook/entries", audio_.codebook.entries());
        }
        return out;
    }

    std::vector<NamedTensor> named_discriminator_params() const {
        std::vector<NamedTensor> out;
        visual_.collect_discriminator("codec/visual", out);
        audio_.collect_discriminator("codec/audio", out);
        return out;
    }

private:
    CodecConfig cfg_;
    VqganStream visual_;
    VqganStream audio_;
};

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

struct AdvTerms {
    Tensor d_loss;  // for the discriminator step; graph touches only D params
    Tensor g_loss;  // non-saturating -log D(fake); graph touches only G params
    double eq3_value;  // log D(real) + log(1 - D(fake)) as the paper writes it
};

// real/fake are patch logit grids. d_loss = mean softplus(-real) + mean
// softplus(fake); g_loss = mean softplus(-fake_g). Both averaged over patches.
inline AdvTerms adversarial_terms(const Tensor& real_logits, const Tensor& fake_logits_d,
                                  const Tensor& fake_logits_g) {
    AdvTerms t;
    t.d_loss = add(mean(softplus(neg(real_logits))), mean(softplus(fake_logits_d)));
    t.g_loss = mean(softplus(neg(fake_logits_g)));
    t.eq3_value = -t.d_loss.item();
    return t;
}

struct VqganLossParts {
    Tensor total;       // recon + perceptual + codebook + adv_weight * g_adv
    Tensor recon;       // ||x - x_hat||^2
    Tensor perceptual;  // ||CNN(x) - CNN(x_hat)||^2
    Tensor codebook;    // commit + beta * embed
    Tensor g_adv;       // non-saturating generator term
    Tensor d_loss;      // discriminator objective (separate step)
    double eq3_adversarial = 0.0;
    double mse = 0.0;   // recon / numel, for logging
    std::vector<int64_t> indices;
    Tensor feature_rows;  // detached (B*h*w, d) rows for EMA updates
    Tensor quantized;     // (B, d, h, w)
    Tensor recon_media;   // (B, C, H, W)
};

// Full per-stream loss stack from precomputed encoder features z. The
// generator-side discriminator pass runs with D frozen and the D-side pass on
// detached reconstructions, so the two objectives never share gradients.
inline VqganLossParts vqgan_loss_from_features(VqganStream& stream, const Tensor& media,
                                               const Tensor& z, double adv_weight) {
    VqganLossParts parts;
    int64_t B = z.dim(0), d = z.dim(1), h = z.dim(2), w = z.dim(3);

    Tensor rows = nchw_to_rows(z);
    QuantizeResult q = stream.codebook.quantize(rows);
    parts.indices = q.indices;
    parts.feature_rows = rows.detach();
    parts.codebook = q.codebook_loss;
    parts.quantized = rows_to_nchw(q.quantized, B, d, h, w);
    parts.recon_media = stream.dec.forward(parts.quantized);

    Tensor diff = sub(media, parts.recon_media);
    parts.recon = sum(mul(diff, diff));
    parts.mse = parts.recon.item() / static_cast<double>(media.numel());
    parts.perceptual = stream.perc.distance(media, parts.recon_media);

    std::vector<Tensor> disc_params = stream.disc.params();
    set_requires_grad(disc_params, false);
    Tensor fake_logits_g = stream.disc.forward(parts.recon_media);
    set_requires_grad(disc_params, true);
    Tensor real_logits = stream.disc.forward(media);
    Tensor fake_logits_d = stream.disc.forward(parts.recon_media.detach());
    AdvTerms adv = adversarial_terms(real_logits, fake_logits_d, fake_logits_g);
    parts.g_adv = adv.g_loss;
    parts.d_loss = adv.d_loss;
    parts.eq3_adversarial = adv.eq3_value;

    parts.total = add(add(parts.recon, parts.perceptual), parts.codebook);
    if (adv_weight != 0.0) parts.total = add(parts.total, mul(parts.g_adv, adv_weight));
    return parts;
}

inline VqganLossParts vqgan_loss_visual(TwoStreamCodec& codec, const Tensor& frames,
                                        double adv_weight = 1.0) {
    Tensor z = codec.encode_visual(frames);
    return vqgan_loss_from_features(codec.visual(), frames, z, adv_weight);
}

inline VqganLossParts vqgan_loss_audio(TwoStreamCodec& codec, const Tensor& mel,
                                       double adv_weight = 1.0) {
    Tensor z = codec.encode_audio(mel);
    return vqgan_loss_from_features(codec.audio(), mel, z, adv_weight);
}

struct SvgLossParts {
    Tensor total;  // L_v + L_a + alpha * L_HCL
    Tensor hcl;
};

// L = L^v + L^a + alpha * L_HCL. With alpha == 0 the HCL term is dropped from
// the graph entirely and the total equals L^v + L^a exactly.
inline SvgLossParts svg_total_loss(const VqganLossParts& visual, const VqganLossParts& audio,
                                   const Tensor& hcl_loss, double alpha) {
    SvgLossParts out;
    out.hcl = hcl_loss;
    out.total = add(visual.total, audio.total);
    if (alpha != 0.0 && hcl_loss.defined()) {
        out.total = add(out.total, mul(hcl_loss, alpha));
    }
    return out;
}

}  // namespace svgen
