#pragma once

// Cross-modal Attention Module: maps per-frame encoder features into a
// common space, then runs audio-to-visual attention with the pooled audio
// feature as query, and visual-to-audio attention queried by the resulting
// global visual feature.

#include <cstdint>
#include <string>
#include <vector>

#include "svgen/nn.hpp"
#include "svgen/tensor.hpp"

namespace svgen {

struct CamConfig {
    int64_t d_v = 16;  // visual encoder feature dim
    int64_t d_a = 16;  // audio encoder feature dim
    int64_t d = 16;    // common-space dim
    int64_t groups = 8;
    bool unit_norm = true;  // L2-normalize h_v/h_a for the contrastive loss
    uint64_t init_seed = 77;
};

struct AttendResult {
    Tensor out;      // (m_q, d): convex combinations of value rows
    Tensor weights;  // (m_q, m_k): softmax rows, each summing to 1
};

// h = softmax(q k^T / sqrt(d_in)) v on already-projected rows.
inline AttendResult attend(const Tensor& q, const Tensor& k, const Tensor& v) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) {
        throw ShapeError("attend: expected rank-2 q/k/v");
    }
    if (q.dim(1) != k.dim(1)) {
        throw ShapeError("attend: query dim " + shape_str(q.shape()) + " does not match key dim " +
                         shape_str(k.shape()));
    }
    if (k.dim(0) != v.dim(0)) {
        throw ShapeError("attend: " + std::to_string(k.dim(0)) + " keys vs " +
                         std::to_string(v.dim(0)) + " values");
    }
    double scale = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
    AttendResult r;
    r.weights = softmax_axis(mul(matmul(q, transpose(k)), scale), 1);
    r.out = matmul(r.weights, v);
    return r;
}

struct CamOutput {
    Tensor h_v;          // (d,) audio-associated global visual feature
    Tensor h_a;          // (d,) visual-associated global audio feature
    Tensor attn_visual;  // (h, w) audio-to-visual attention map
    Tensor attn_audio;   // (f, t) visual-to-audio attention map
};

class CrossModalAttention {
public:
    CrossModalAttention() = default;

    explicit CrossModalAttention(CamConfig cfg) : cfg_(cfg) {
        RngStream rng(derive_seed(cfg.init_seed, "cam"));
        v_proj1_ = Conv2d(cfg.d_v, cfg.d, 1, 1, 0, rng);
        v_norm1_ = GroupNorm(cfg.d, cfg.groups);
        v_proj2_ = Conv2d(cfg.d, cfg.d, 1, 1, 0, rng);
        v_norm2_ = GroupNorm(cfg.d, cfg.groups);
        a_proj1_ = Conv2d(cfg.d_a, cfg.d, 1, 1, 0, rng);
        a_norm1_ = GroupNorm(cfg.d, cfg.groups);
        a_proj2_ = Conv2d(cfg.d, cfg.d, 1, 1, 0, rng);
        a_norm2_ = GroupNorm(cfg.d, cfg.groups);
        a2v_q_ = Linear(cfg.d, cfg.d, rng);
        a2v_k_ = Linear(cfg.d, cfg.d, rng);
        a2v_v_ = Linear(cfg.d, cfg.d, rng);
        v2a_q_ = Linear(cfg.d, cfg.d, rng);
        v2a_k_ = Linear(cfg.d, cfg.d, rng);
        v2a_v_ = Linear(cfg.d, cfg.d, rng);
    }

    const CamConfig& config() const { return cfg_; }

    // Common-space projection: two 1x1 convs with group norm per modality.
    Tensor common_visual(const Tensor& z_v) const {  // (d_v, h, w) -> (d, h, w)
        return project(z_v, v_proj1_, v_norm1_, v_proj2_, v_norm2_);
    }

    Tensor common_audio(const Tensor& z_a) const {  // (d_a, f, t) -> (d, f, t)
        return project(z_a, a_proj1_, a_norm1_, a_proj2_, a_norm2_);
    }

    // Single-frame pipeline: project both grids, pool g_a into one query,
    // attend over visual positions (one attended vector, so the spatial
    // average of Fig. 3 is the identity here), then attend over audio
    // positions with h_v as the query.
    CamOutput forward(const Tensor& z_v_k, const Tensor& z_a_k) const {
        if (z_v_k.rank() != 3 || z_v_k.dim(0) != cfg_.d_v) {
            throw ShapeError("cam_forward: expected visual features (" + std::to_string(cfg_.d_v) +
                             ",h,w), got " + shape_str(z_v_k.shape()));
        }
        if (z_a_k.rank() != 3 || z_a_k.dim(0) != cfg_.d_a) {
            throw ShapeError("cam_forward: expected audio features (" + std::to_string(cfg_.d_a) +
                             ",f,t), got " + shape_str(z_a_k.shape()));
        }
        int64_t h = z_v_k.dim(1), w = z_v_k.dim(2);
        int64_t f = z_a_k.dim(1), t = z_a_k.dim(2);

        Tensor g_v = common_visual(z_v_k);  // (d, h, w)
        Tensor g_a = common_audio(z_a_k);   // (d, f, t)
        Tensor g_v_rows = grid_to_rows(g_v);  // (h*w, d)
        Tensor g_a_rows = grid_to_rows(g_a);  // (f*t, d)

        // Time-averaged (fully pooled) audio query.
        Tensor q_a = mean_axis(g_a_rows, 0, true);  // (1, d)

        AttendResult a2v = attend(a2v_q_.forward(q_a), a2v_k_.forward(g_v_rows),
                                  a2v_v_.forward(g_v_rows));
        Tensor h_v = a2v.out;  // (1, d)

        AttendResult v2a = attend(v2a_q_.forward(h_v), v2a_k_.forward(g_a_rows),
                                  v2a_v_.forward(g_a_rows));
        Tensor h_a = v2a.out;  // (1, d)

        CamOutput out;
        if (cfg_.unit_norm) {
            h_v = l2_normalize_rows(h_v);
            h_a = l2_normalize_rows(h_a);
        }
        out.h_v = reshape(h_v, {cfg_.d});
        out.h_a = reshape(h_a, {cfg_.d});
        out.attn_visual = reshape(a2v.weights, {h, w});
        out.attn_audio = reshape(v2a.weights, {f, t});
        return out;
    }

    void collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
        v_proj1_.collect(prefix + "/v_proj1", out);
        v_norm1_.collect(prefix + "/v_norm1", out);
        v_proj2_.collect(prefix + "/v_proj2", out);
        v_norm2_.collect(prefix + "/v_norm2", out);
        a_proj1_.collect(prefix + "/a_proj1", out);
        a_norm1_.collect(prefix + "/a_norm1", out);
        a_proj2_.collect(prefix + "/a_proj2", out);
        a_norm2_.collect(prefix + "/a_norm2", out);
        a2v_q_.collect(prefix + "/a2v_q", out);
        a2v_k_.collect(prefix + "/a2v_k", out);
        a2v_v_.collect(prefix + "/a2v_v", out);
        v2a_q_.collect(prefix + "/v2a_q", out);
        v2a_k_.collect(prefix + "/v2a_k", out);
        v2a_v_.collect(prefix + "/v2a_v", out);
    }

private:
    static Tensor project(const Tensor& z, const Conv2d& p1, const GroupNorm& n1, const Conv2d& p2,
                          const GroupNorm& n2) {
        Tensor x = reshape(z, {1, z.dim(0), z.dim(1), z.dim(2)});
        x = relu(n1.forward(p1.forward(x)));
        x = n2.forward(p2.forward(x));
        return reshape(x, {x.dim(1), x.dim(2), x.dim(3)});
    }

    CamConfig cfg_;
    Conv2d v_proj1_, v_proj2_, a_proj1_, a_proj2_;
    GroupNorm v_norm1_, v_norm2_, a_norm1_, a_norm2_;
    Linear a2v_q_, a2v_k_, a2v_v_;
    Linear v2a_q_, v2a_k_, v2a_v_;
};

}  // namespace svgen
