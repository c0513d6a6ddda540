#pragma once

// Small layer toolkit shared by the codec, CAM and the autoregressive
// decoder. Layers own their parameters as Tensor leaves and expose them
// through collect() for optimizers and checkpoints.

#include <string>
#include <utility>
#include <vector>

#include "svgen/tensor.hpp"

namespace svgen {

using NamedTensor = std::pair<std::string, Tensor>;

inline void collect_params(const std::vector<NamedTensor>& named, std::vector<Tensor>& out) {
    for (const auto& [name, t] : named) out.push_back(t);
}

// Largest divisor of c that is <= want; group-norm group count for a layer
// whose channel width may be narrower than the configured group count.
inline int64_t norm_groups_for(int64_t c, int64_t want) {
    for (int64_t g = std::min(want, c); g > 1; --g) {
        if (c % g == 0) return g;
    }
    return 1;
}

struct Linear {
    Tensor w;  // (in, out)
    Tensor b;  // (out)

    Linear() = default;
    Linear(int64_t in, int64_t out, RngStream& rng) {
        w = Tensor::randn({in, out}, rng, std::sqrt(2.0 / static_cast<double>(in)), true);
        b = Tensor::zeros({out}, true);
    }

    Tensor forward(const Tensor& x) const {  // x: (n, in)
        return add(matmul(x, w), reshape(b, {1, b.numel()}));
    }

    void collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
        out.emplace_back(prefix + "/w", w);
        out.emplace_back(prefix + "/b", b);
    }
};

struct Conv2d {
    Tensor w;  // (out_ch, in_ch, k, k)
    Tensor b;  // (out_ch)
    int64_t stride = 1;
    int64_t pad = 0;

    Conv2d() = default;
    Conv2d(int64_t in_ch, int64_t out_ch, int64_t k, int64_t stride_, int64_t pad_, RngStream& rng)
        : stride(stride_), pad(pad_) {
        double std = std::sqrt(2.0 / static_cast<double>(in_ch * k * k));
        w = Tensor::randn({out_ch, in_ch, k, k}, rng, std, true);
        b = Tensor::zeros({out_ch}, true);
    }

    Tensor forward(const Tensor& x) const { return conv2d(x, w, b, stride, pad); }

    void collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
        out.emplace_back(prefix + "/w", w);
        out.emplace_back(prefix + "/b", b);
    }
};

struct GroupNorm {
    Tensor gain;
    Tensor bias;
    int64_t groups = 8;

    GroupNorm() = default;
    GroupNorm(int64_t channels, int64_t want_groups) : groups(norm_groups_for(channels, want_groups)) {
        gain = Tensor::full({channels}, 1.0, true);
        bias = Tensor::zeros({channels}, true);
    }

    Tensor forward(const Tensor& x) const { return group_norm(x, groups, gain, bias); }

    void collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
        out.emplace_back(prefix + "/gain", gain);
        out.emplace_back(prefix + "/bias", bias);
    }
};

struct LayerNorm {
    Tensor gain;
    Tensor bias;

    LayerNorm() = default;
    explicit LayerNorm(int64_t dim) {
        gain = Tensor::full({dim}, 1.0, true);
        bias = Tensor::zeros({dim}, true);
    }

    Tensor forward(const Tensor& x) const { return layer_norm(x, gain, bias); }

    void collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
        out.emplace_back(prefix + "/gain", gain);
        out.emplace_back(prefix + "/bias", bias);
    }
};

struct ResBlock {
    GroupNorm n1, n2;
    Conv2d c1, c2;

    ResBlock() = default;
    ResBlock(int64_t channels, int64_t groups, RngStream& rng)
        : n1(channels, groups),
          n2(channels, groups),
          c1(channels, channels, 3, 1, 1, rng),
          c2(channels, channels, 3, 1, 1, rng) {}

    Tensor forward(const Tensor& x) const {
        Tensor h = c1.forward(relu(n1.forward(x)));
        h = c2.forward(relu(n2.forward(h)));
        return add(x, h);
    }

    void collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
        n1.collect(prefix + "/n1", out);
        n2.collect(prefix + "/n2", out);
        c1.collect(prefix + "/c1", out);
        c2.collect(prefix + "/c2", out);
    }
};

// (d, h*w) channel-major slab -> (h*w, d) position rows.
inline Tensor grid_to_rows(const Tensor& x_chw) {
    if (x_chw.rank() != 3) {
        throw ShapeError("grid_to_rows: expected (C,H,W), got " + shape_str(x_chw.shape()));
    }
    int64_t c = x_chw.dim(0), h = x_chw.dim(1), w = x_chw.dim(2);
    return transpose(reshape(x_chw, {c, h * w}));
}

// (N, C, H, W) -> (N*H*W, C) feature rows, batch-major then position-major.
inline Tensor nchw_to_rows(const Tensor& x) {
    if (x.rank() != 4) {
        throw ShapeError("nchw_to_rows: expected rank-4 input, got " + shape_str(x.shape()));
    }
    int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    std::vector<Tensor> rows;
    rows.reserve(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        rows.push_back(grid_to_rows(reshape(slice(x, 0, i, 1), {c, h, w})));
    }
    return rows.size() == 1 ? rows[0] : concat(rows, 0);
}

// Inverse of nchw_to_rows.
inline Tensor rows_to_nchw(const Tensor& rows, int64_t n, int64_t c, int64_t h, int64_t w) {
    if (rows.rank() != 2 || rows.dim(0) != n * h * w || rows.dim(1) != c) {
        throw ShapeError("rows_to_nchw: rows " + shape_str(rows.shape()) + " do not pack to (" +
                         std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) +
                         "," + std::to_string(w) + ")");
    }
    std::vector<Tensor> items;
    items.reserve(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        Tensor item = slice(rows, 0, i * h * w, h * w);           // (HW, C)
        items.push_back(reshape(transpose(item), {1, c, h, w}));  // (1, C, H, W)
    }
    return items.size() == 1 ? items[0] : concat(items, 0);
}

inline void set_requires_grad(std::vector<Tensor>& params, bool rg) {
    for (Tensor& p : params) p.set_requires_grad(rg);
}

// Single-head spatial self-attention with residual; operates per batch item.
struct SelfAttention2d {
    GroupNorm norm;
    Conv2d q, k, v, proj;  // all 1x1

    SelfAttention2d() = default;
    SelfAttention2d(int64_t channels, int64_t groups, RngStream& rng)
        : norm(channels, groups),
          q(channels, channels, 1, 1, 0, rng),
          k(channels, channels, 1, 1, 0, rng),
          v(channels, channels, 1, 1, 0, rng),
          proj(channels, channels, 1, 1, 0, rng) {}

    Tensor forward(const Tensor& x) const {  // (N, C, H, W)
        int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
        Tensor h = norm.forward(x);
        Tensor qm = q.forward(h), km = k.forward(h), vm = v.forward(h);
        double scale = 1.0 / std::sqrt(static_cast<double>(C));
        std::vector<Tensor> outs;
        outs.reserve(static_cast<size_t>(N));
        for (int64_t n = 0; n < N; ++n) {
            Tensor qr = grid_to_rows(reshape(slice(qm, 0, n, 1), {C, H, W}));  // (HW, C)
            Tensor kr = grid_to_rows(reshape(slice(km, 0, n, 1), {C, H, W}));
            Tensor vr = grid_to_rows(reshape(slice(vm, 0, n, 1), {C, H, W}));
            Tensor attn = softmax_axis(mul(matmul(qr, transpose(kr)), scale), 1);
            Tensor o = matmul(attn, vr);  // (HW, C)
            outs.push_back(reshape(transpose(o), {1, C, H, W}));
        }
        Tensor merged = outs.size() == 1 ? outs[0] : concat(outs, 0);
        return add(x, proj.forward(merged));
    }

    void collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
        norm.collect(prefix + "/norm", out);
        q.collect(prefix + "/q", out);
        k.collect(prefix + "/k", out);
        v.collect(prefix + "/v", out);
        proj.collect(prefix + "/proj", out);
    }
};

}  // namespace svgen
