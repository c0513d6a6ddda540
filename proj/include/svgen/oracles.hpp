#pragma once

// Reference implementations kept deliberately naive and independent of the
// library's compute paths. Tests and the `svgen oracle-check` subcommand
// compare the production code against these.

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "svgen/cam.hpp"
#include "svgen/hcl.hpp"
#include "svgen/tensor.hpp"

namespace svgen::oracle {

// Central finite differences against analytic gradients. Returns the largest
// relative error over every element of every parameter. `loss_fn` must
// rebuild the graph from the given leaves on each call.
inline double fd_max_rel_error(const std::function<Tensor(const std::vector<Tensor>&)>& loss_fn,
                               std::vector<Tensor>& params, double h = 1e-5) {
    for (Tensor& p : params) p.zero_grad();
    Tensor loss = loss_fn(params);
    backward(loss);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const Tensor& p : params) analytic.push_back(p.grad());

    double worst = 0.0;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        std::vector<double>& vals = params[pi].values_mut();
        for (size_t j = 0; j < vals.size(); ++j) {
            double orig = vals[j];
            vals[j] = orig + h;
            double fp = loss_fn(params).item();
            vals[j] = orig - h;
            double fm = loss_fn(params).item();
            vals[j] = orig;
            double fd = (fp - fm) / (2.0 * h);
            double an = analytic[pi][j];
            double scale = std::max({std::abs(fd), std::abs(an), 1e-6});
            worst = std::max(worst, std::abs(fd - an) / scale);
        }
    }
    return worst;
}

// Quintuple-loop convolution; shares nothing with svgen::conv2d.
inline std::vector<double> conv2d_naive(const std::vector<double>& x, int64_t N, int64_t Ci,
                                        int64_t H, int64_t W, const std::vector<double>& w,
                                        int64_t Co, int64_t kh, int64_t kw,
                                        const std::vector<double>& bias, int64_t stride,
                                        int64_t pad) {
    int64_t Ho = (H + 2 * pad - kh) / stride + 1;
    int64_t Wo = (W + 2 * pad - kw) / stride + 1;
    std::vector<double> out(static_cast<size_t>(N * Co * Ho * Wo), 0.0);
    for (int64_t n = 0; n < N; ++n)
        for (int64_t co = 0; co < Co; ++co)
            for (int64_t oh = 0; oh < Ho; ++oh)
                for (int64_t ow = 0; ow < Wo; ++ow) {
                    double acc = bias.empty() ? 0.0 : bias[static_cast<size_t>(co)];
                    for (int64_t ci = 0; ci < Ci; ++ci)
                        for (int64_t u = 0; u < kh; ++u)
                            for (int64_t v = 0; v < kw; ++v) {
                                int64_t ih = oh * stride - pad + u;
                                int64_t iw = ow * stride - pad + v;
                                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                                acc += x[static_cast<size_t>(((n * Ci + ci) * H + ih) * W + iw)] *
                                       w[static_cast<size_t>(((co * Ci + ci) * kh + u) * kw + v)];
                            }
                    out[static_cast<size_t>(((n * Co + co) * Ho + oh) * Wo + ow)] = acc;
                }
    return out;
}

// Scalar double-loop attention: out[i] = sum_j softmax_j(q_i.k_j / sqrt(d)) v_j.
// Returns the weights as well so attention maps can be checked.
struct AttentionOracleResult {
    std::vector<double> out;      // (mq, d)
    std::vector<double> weights;  // (mq, mk)
};

inline AttentionOracleResult attention_naive(const std::vector<double>& q, int64_t mq,
                                             const std::vector<double>& k, int64_t mk,
                                             const std::vector<double>& v, int64_t d,
                                             double scale_dim) {
    AttentionOracleResult r;
    r.out.assign(static_cast<size_t>(mq * d), 0.0);
    r.weights.assign(static_cast<size_t>(mq * mk), 0.0);
    double inv = 1.0 / std::sqrt(scale_dim);
    for (int64_t i = 0; i < mq; ++i) {
        double mx = -1e308;
        std::vector<double> logits(static_cast<size_t>(mk));
        for (int64_t j = 0; j < mk; ++j) {
            double dot = 0.0;
            for (int64_t c = 0; c < d; ++c)
                dot += q[static_cast<size_t>(i * d + c)] * k[static_cast<size_t>(j * d + c)];
            logits[static_cast<size_t>(j)] = dot * inv;
            mx = std::max(mx, logits[static_cast<size_t>(j)]);
        }
        double z = 0.0;
        for (int64_t j = 0; j < mk; ++j) z += std::exp(logits[static_cast<size_t>(j)] - mx);
        for (int64_t j = 0; j < mk; ++j) {
            double wgt = std::exp(logits[static_cast<size_t>(j)] - mx) / z;
            r.weights[static_cast<size_t>(i * mk + j)] = wgt;
            for (int64_t c = 0; c < d; ++c)
                r.out[static_cast<size_t>(i * d + c)] += wgt * v[static_cast<size_t>(j * d + c)];
        }
    }
    return r;
}

// Exhaustive nearest-entry scan, ties to the lowest index.
inline std::vector<int64_t> nearest_naive(const std::vector<double>& entries, int64_t n_entries,
                                          int64_t dim, const std::vector<double>& z,
                                          int64_t n_vectors) {
    std::vector<int64_t> idx(static_cast<size_t>(n_vectors));
    for (int64_t i = 0; i < n_vectors; ++i) {
        double best = 1e308;
        int64_t arg = 0;
        for (int64_t e = 0; e < n_entries; ++e) {
            double d2 = 0.0;
            for (int64_t c = 0; c < dim; ++c) {
                double diff = z[static_cast<size_t>(i * dim + c)] -
                              entries[static_cast<size_t>(e * dim + c)];
                d2 += diff * diff;
            }
            if (d2 < best) {
                best = d2;
                arg = e;
            }
        }
        idx[static_cast<size_t>(i)] = arg;
    }
    return idx;
}

// exp(entropy) of the empirical index histogram.
inline double perplexity_naive(const std::vector<int64_t>& indices, int64_t n_entries) {
    std::vector<double> counts(static_cast<size_t>(n_entries), 0.0);
    for (int64_t i : indices) counts[static_cast<size_t>(i)] += 1.0;
    double total = static_cast<double>(indices.size());
    double ent = 0.0;
    for (double c : counts) {
        if (c > 0.0) {
            double p = c / total;
            ent -= p * std::log(p);
        }
    }
    return std::exp(ent);
}

// ---------------------------------------------------------------------------
// HCL double-loop transcription (Eqs. 8-11), scalar arithmetic only
// ---------------------------------------------------------------------------

namespace hcl_naive {

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline bool wps(const SelectionContext& ctx, int64_t l, int64_t m) {
    return ctx.clip_id[static_cast<size_t>(l)] == ctx.clip_id[static_cast<size_t>(m)] &&
           std::llabs(ctx.frame_index[static_cast<size_t>(l)] - ctx.frame_index[static_cast<size_t>(m)]) <
               ctx.window;
}

inline bool tns(const SelectionContext& ctx, int64_t l, int64_t n) {
    if (ctx.clip_id[static_cast<size_t>(l)] == ctx.clip_id[static_cast<size_t>(n)]) return false;
    return ctx.text_sim[static_cast<size_t>(ctx.clip_id[static_cast<size_t>(l)])]
                       [static_cast<size_t>(ctx.clip_id[static_cast<size_t>(n)])] < ctx.tns_threshold;
}

inline bool cross_gated_out(const SelectionContext& ctx, int64_t l, int64_t m, bool gate) {
    return gate && ctx.modality[static_cast<size_t>(l)] != ctx.modality[static_cast<size_t>(m)] &&
           ctx.vaf_score[static_cast<size_t>(l)] < ctx.vaf_threshold;
}

struct AnchorTerms {
    double p = 0.0;       // Eq. 8
    double n = 0.0;       // Eq. 9 (zeta-weighted)
    double zeta = 0.0;    // Eq. 9 coefficient
    int64_t n_pos = 0;
    int64_t n_neg = 0;
};

inline AnchorTerms anchor_terms(const std::vector<std::vector<double>>& h,
                                const SelectionContext& ctx, int64_t l,
                                const std::vector<int64_t>& cands, double tau,
                                bool gate_cross_positive) {
    AnchorTerms t;
    for (int64_t m : cands) {
        // Eq. 8: h_m in H2, h_m != h_l, 1_WPS
        if (m == l) continue;  // self-self excluded
        if (!wps(ctx, l, m)) continue;
        if (cross_gated_out(ctx, l, m, gate_cross_positive)) continue;
        t.p += std::exp(dot(h[static_cast<size_t>(l)], h[static_cast<size_t>(m)]) / tau);
        ++t.n_pos;
    }
    double raw_n = 0.0;
    for (int64_t n : cands) {
        if (!tns(ctx, l, n)) continue;
        raw_n += std::exp(dot(h[static_cast<size_t>(l)], h[static_cast<size_t>(n)]) / tau);
        ++t.n_neg;
    }
    if (t.n_neg > 0) {
        t.zeta = static_cast<double>(cands.size()) / static_cast<double>(t.n_neg);
        t.n = t.zeta * raw_n;
    }
    return t;
}

// Eq. 11 with the repo's skip-and-renormalize rule for degenerate anchors.
inline double contrastive(const std::vector<std::vector<double>>& h, const SelectionContext& ctx,
                          const std::vector<int64_t>& anchors, const std::vector<int64_t>& cands,
                          double tau, bool inter_modal, bool gate_cross_positive = false,
                          bool* all_filtered = nullptr) {
    double total = 0.0;
    int64_t kept = 0;
    for (int64_t l : anchors) {
        if (inter_modal && ctx.vaf_score[static_cast<size_t>(l)] < ctx.vaf_threshold) continue;
        AnchorTerms t = anchor_terms(h, ctx, l, cands, tau, gate_cross_positive);
        if (t.n_pos == 0 || t.n_neg == 0) continue;
        total += -std::log(t.p / t.n);  // Eq. 10
        ++kept;
    }
    if (all_filtered) *all_filtered = kept == 0;
    if (kept == 0) return 0.0;
    return total / static_cast<double>(kept);
}

// Eq. 6 / Eq. 7.
inline double hcl(const std::vector<std::vector<double>>& h, const SelectionContext& ctx,
                  const HCLConfig& cfg) {
    std::vector<int64_t> h_v, h_a, all;
    for (size_t i = 0; i < ctx.size(); ++i) {
        all.push_back(static_cast<int64_t>(i));
        (ctx.modality[i] == Modality::visual ? h_v : h_a).push_back(static_cast<int64_t>(i));
    }
    if (cfg.variant == HclVariant::modality_gathered) {
        return contrastive(h, ctx, all, all, cfg.tau, false, /*gate_cross_positive=*/true);
    }
    return contrastive(h, ctx, h_v, h_v, cfg.tau, false) +
           contrastive(h, ctx, h_a, h_a, cfg.tau, false) +
           contrastive(h, ctx, h_v, h_a, cfg.tau, true) +
           contrastive(h, ctx, h_a, h_v, cfg.tau, true);
}

}  // namespace hcl_naive

// ---------------------------------------------------------------------------
// CAM staged-pipeline oracle: scalar re-execution of every stage
// ---------------------------------------------------------------------------

namespace cam_naive {

using Grid = std::vector<double>;  // (C, P) channel-major positions

inline const Tensor& find_param(const std::vector<NamedTensor>& named, const std::string& suffix) {
    for (const auto& [name, t] : named) {
        if (name.size() >= suffix.size() &&
            name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
            return t;
        }
    }
    throw ValueError("cam oracle: missing parameter " + suffix);
}

inline Grid conv1x1(const Grid& in, int64_t c_in, int64_t p, const Tensor& w, const Tensor& b) {
    int64_t c_out = w.dim(0);
    Grid out(static_cast<size_t>(c_out * p), 0.0);
    for (int64_t co = 0; co < c_out; ++co)
        for (int64_t pos = 0; pos < p; ++pos) {
            double acc = b.values()[static_cast<size_t>(co)];
            for (int64_t ci = 0; ci < c_in; ++ci)
                acc += w.values()[static_cast<size_t>(co * c_in + ci)] *
                       in[static_cast<size_t>(ci * p + pos)];
            out[static_cast<size_t>(co * p + pos)] = acc;
        }
    return out;
}

inline Grid group_norm(const Grid& in, int64_t c, int64_t p, int64_t groups, const Tensor& gain,
                       const Tensor& bias, double eps = 1e-5) {
    Grid out(in.size());
    int64_t per = c / groups;
    for (int64_t g = 0; g < groups; ++g) {
        double mean = 0;
        for (int64_t ci = g * per; ci < (g + 1) * per; ++ci)
            for (int64_t pos = 0; pos < p; ++pos) mean += in[static_cast<size_t>(ci * p + pos)];
        mean /= static_cast<double>(per * p);
        double var = 0;
        for (int64_t ci = g * per; ci < (g + 1) * per; ++ci)
            for (int64_t pos = 0; pos < p; ++pos) {
                double d = in[static_cast<size_t>(ci * p + pos)] - mean;
                var += d * d;
            }
        var /= static_cast<double>(per * p);
        for (int64_t ci = g * per; ci < (g + 1) * per; ++ci)
            for (int64_t pos = 0; pos < p; ++pos) {
                double v = (in[static_cast<size_t>(ci * p + pos)] - mean) / std::sqrt(var + eps);
                out[static_cast<size_t>(ci * p + pos)] =
                    v * gain.values()[static_cast<size_t>(ci)] + bias.values()[static_cast<size_t>(ci)];
            }
    }
    return out;
}

inline std::vector<double> linear(const std::vector<double>& x, const Tensor& w, const Tensor& b) {
    int64_t in = w.dim(0), out_dim = w.dim(1);
    std::vector<double> y(static_cast<size_t>(out_dim));
    for (int64_t j = 0; j < out_dim; ++j) {
        double acc = b.values()[static_cast<size_t>(j)];
        for (int64_t i = 0; i < in; ++i)
            acc += x[static_cast<size_t>(i)] * w.values()[static_cast<size_t>(i * out_dim + j)];
        y[static_cast<size_t>(j)] = acc;
    }
    return y;
}

struct CamOracleResult {
    std::vector<double> h_v, h_a;
    std::vector<double> attn_visual, attn_audio;
};

// Mirrors the documented pipeline: project to common space, pool the audio
// grid into one query, audio->visual attention, then visual->audio attention
// queried by h_v, then L2 normalization.
inline CamOracleResult cam_forward_naive(const CrossModalAttention& cam, const Tensor& z_v,
                                         const Tensor& z_a) {
    const CamConfig& cfg = cam.config();
    std::vector<NamedTensor> named;
    cam.collect("cam", named);
    auto W = [&](const char* s) -> const Tensor& { return find_param(named, std::string(s) + "/w"); };
    auto B = [&](const char* s) -> const Tensor& { return find_param(named, std::string(s) + "/b"); };
    auto G = [&](const char* s) -> const Tensor& { return find_param(named, std::string(s) + "/gain"); };
    auto Bi = [&](const char* s) -> const Tensor& { return find_param(named, std::string(s) + "/bias"); };

    int64_t pv = z_v.dim(1) * z_v.dim(2);
    int64_t pa = z_a.dim(1) * z_a.dim(2);
    int64_t d = cfg.d;
    int64_t groups = norm_groups_for(d, cfg.groups);

    auto project = [&](const Grid& grid, int64_t c_in, int64_t p, const char* p1, const char* n1,
                       const char* p2, const char* n2) {
        Grid x = conv1x1(grid, c_in, p, W(p1), B(p1));
        x = group_norm(x, d, p, groups, G(n1), Bi(n1));
        for (double& v : x) v = v > 0 ? v : 0;
        x = conv1x1(x, d, p, W(p2), B(p2));
        return group_norm(x, d, p, groups, G(n2), Bi(n2));
    };
    Grid g_v = project(z_v.values(), cfg.d_v, pv, "v_proj1", "v_norm1", "v_proj2", "v_norm2");
    Grid g_a = project(z_a.values(), cfg.d_a, pa, "a_proj1", "a_norm1", "a_proj2", "a_norm2");

    auto grid_row = [&](const Grid& g, int64_t p, int64_t pos) {
        std::vector<double> r(static_cast<size_t>(d));
        for (int64_t c = 0; c < d; ++c) r[static_cast<size_t>(c)] = g[static_cast<size_t>(c * p + pos)];
        return r;
    };

    // pooled audio query
    std::vector<double> q_a(static_cast<size_t>(d), 0.0);
    for (int64_t c = 0; c < d; ++c) {
        for (int64_t pos = 0; pos < pa; ++pos) q_a[static_cast<size_t>(c)] += g_a[static_cast<size_t>(c * pa + pos)];
        q_a[static_cast<size_t>(c)] /= static_cast<double>(pa);
    }

    auto run_attention = [&](const std::vector<double>& query, const Grid& keys, int64_t p,
                             const char* qn, const char* kn, const char* vn) {
        std::vector<double> q = linear(query, W(qn), B(qn));
        std::vector<double> kflat(static_cast<size_t>(p * d)), vflat(static_cast<size_t>(p * d));
        for (int64_t pos = 0; pos < p; ++pos) {
            auto row = grid_row(keys, p, pos);
            auto kr = linear(row, W(kn), B(kn));
            auto vr = linear(row, W(vn), B(vn));
            for (int64_t c = 0; c < d; ++c) {
                kflat[static_cast<size_t>(pos * d + c)] = kr[static_cast<size_t>(c)];
                vflat[static_cast<size_t>(pos * d + c)] = vr[static_cast<size_t>(c)];
            }
        }
        return attention_naive(q, 1, kflat, p, vflat, d, static_cast<double>(d));
    };

    CamOracleResult r;
    AttentionOracleResult a2v = run_attention(q_a, g_v, pv, "a2v_q", "a2v_k", "a2v_v");
    std::vector<double> h_v = a2v.out;  // single attended vector; spatial average is identity
    AttentionOracleResult v2a = run_attention(h_v, g_a, pa, "v2a_q", "v2a_k", "v2a_v");
    std::vector<double> h_a = v2a.out;
    r.attn_visual = a2v.weights;
    r.attn_audio = v2a.weights;
    if (cfg.unit_norm) {
        for (std::vector<double>* h : {&h_v, &h_a}) {
            double n2 = 1e-12;
            for (double v : *h) n2 += v * v;
            double inv = 1.0 / std::sqrt(n2);
            for (double& v : *h) v *= inv;
        }
    }
    r.h_v = std::move(h_v);
    r.h_a = std::move(h_a);
    return r;
}

}  // namespace cam_naive

// Spearman rank correlation; average ranks for ties.
inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    auto ranks = [](const std::vector<double>& x) {
        size_t n = x.size();
        std::vector<size_t> ord(n);
        for (size_t i = 0; i < n; ++i) ord[i] = i;
        std::sort(ord.begin(), ord.end(), [&](size_t i, size_t j) { return x[i] < x[j]; });
        std::vector<double> r(n);
        size_t i = 0;
        while (i < n) {
            size_t j = i;
            while (j + 1 < n && x[ord[j + 1]] == x[ord[i]]) ++j;
            double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
            for (size_t t = i; t <= j; ++t) r[ord[t]] = avg;
            i = j + 1;
        }
        return r;
    };
    std::vector<double> ra = ranks(a), rb = ranks(b);
    double ma = 0, mb = 0;
    for (size_t i = 0; i < ra.size(); ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= static_cast<double>(ra.size());
    mb /= static_cast<double>(rb.size());
    double num = 0, da = 0, db = 0;
    for (size_t i = 0; i < ra.size(); ++i) {
        num += (ra[i] - ma) * (rb[i] - mb);
        da += (ra[i] - ma) * (ra[i] - ma);
        db += (rb[i] - mb) * (rb[i] - mb);
    }
    return num / std::sqrt(da * db);
}

}  // namespace svgen::oracle
