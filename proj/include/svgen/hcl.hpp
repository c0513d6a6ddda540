#pragma once

// Hybrid Contrastive Learning: window-based positive selection (WPS),
// text-guided negative selection (TNS), visual-audio-similarity filtering
// (VAF), the zeta balance coefficient, and the contrastive loss algebra over
// unit-normalized global features.

#include <cmath>
#include <cstdint>
#include <iostream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "svgen/tensor.hpp"

namespace svgen {

enum class Modality { visual, audio };
enum class HclVariant { modality_split, modality_gathered };

class NoPositivesError : public ValueError {
public:
    using ValueError::ValueError;
};

class NoNegativesError : public ValueError {
public:
    using ValueError::ValueError;
};

// Batch metadata for one set of features. Entry i of the per-feature arrays
// describes feature row i (a single frame of a single modality of a clip).
struct SelectionContext {
    std::vector<int64_t> clip_id;
    std::vector<int64_t> frame_index;
    std::vector<Modality> modality;
    std::vector<std::vector<double>> text_sim;  // clip x clip cosine matrix
    std::vector<double> vaf_score;              // per feature
    double vaf_threshold = 20.0;
    double tns_threshold = 0.85;
    int64_t window = 2;

    size_t size() const { return clip_id.size(); }

    void validate() const {
        size_t n = clip_id.size();
        if (frame_index.size() != n || modality.size() != n || vaf_score.size() != n) {
            throw ValueError("SelectionContext: per-feature arrays disagree on length");
        }
        if (window < 1) throw ValueError("SelectionContext: window must be >= 1");
        size_t clips = text_sim.size();
        for (const auto& row : text_sim) {
            if (row.size() != clips) throw ValueError("SelectionContext: text_sim is not square");
        }
        for (size_t i = 0; i < clips; ++i) {
            if (std::abs(text_sim[i][i] - 1.0) > 1e-9) {
                throw ValueError("SelectionContext: text_sim diagonal must be 1");
            }
            for (size_t j = 0; j < clips; ++j) {
                if (std::abs(text_sim[i][j] - text_sim[j][i]) > 1e-9) {
                    throw ValueError("SelectionContext: text_sim must be symmetric");
                }
            }
        }
        for (int64_t c : clip_id) {
            if (c < 0 || static_cast<size_t>(c) >= clips) {
                throw ValueError("SelectionContext: clip_id out of range of text_sim");
            }
        }
    }
};

struct HCLConfig {
    double tau = 0.1;
    double alpha = 1.0;
    HclVariant variant = HclVariant::modality_split;
    // Default off: the loss is the exact -log(P/N) ratio form. When set, the
    // denominator becomes P + N (InfoNCE-style), bounded below.
    bool infonce_denominator = false;

    void validate() const {
        if (tau <= 0.0) throw ValueError("HCLConfig: tau must be positive");
    }
};

// Masks for one (anchors, candidates) pair, row-major anchors x candidates.
struct MaskSet {
    int64_t n_anchors = 0;
    int64_t n_cands = 0;
    std::vector<uint8_t> positive;
    std::vector<uint8_t> negative;
    std::vector<uint8_t> vaf_anchor;  // per anchor: passes the VAF threshold
    std::vector<double> zeta;         // per anchor; NaN where no negatives exist

    bool pos(int64_t l, int64_t m) const { return positive[static_cast<size_t>(l * n_cands + m)] != 0; }
    bool neg(int64_t l, int64_t m) const { return negative[static_cast<size_t>(l * n_cands + m)] != 0; }
};

namespace detail {
inline bool wps_positive(const SelectionContext& ctx, int64_t l, int64_t m) {
    if (l == m && ctx.modality[static_cast<size_t>(l)] == ctx.modality[static_cast<size_t>(m)]) return false;
    if (ctx.clip_id[static_cast<size_t>(l)] != ctx.clip_id[static_cast<size_t>(m)]) return false;
    return std::abs(ctx.frame_index[static_cast<size_t>(l)] - ctx.frame_index[static_cast<size_t>(m)]) <
           ctx.window;
}

inline bool tns_negative(const SelectionContext& ctx, int64_t l, int64_t n) {
    if (ctx.clip_id[static_cast<size_t>(l)] == ctx.clip_id[static_cast<size_t>(n)]) return false;
    return ctx.text_sim[static_cast<size_t>(ctx.clip_id[static_cast<size_t>(l)])]
                       [static_cast<size_t>(ctx.clip_id[static_cast<size_t>(n)])] < ctx.tns_threshold;
}
}  // namespace detail

// Anchors and candidates are feature indices into ctx. The same feature index
// appearing on both sides is the self-self pair and is never positive. When
// vaf_gates_cross_modal_positives is set (modality-gathered HCL), a positive
// pair whose modalities differ additionally requires the anchor to pass VAF.
inline MaskSet build_masks(const SelectionContext& ctx, std::span<const int64_t> anchors,
                           std::span<const int64_t> cands,
                           bool vaf_gates_cross_modal_positives = false) {
    ctx.validate();
    MaskSet m;
    m.n_anchors = static_cast<int64_t>(anchors.size());
    m.n_cands = static_cast<int64_t>(cands.size());
    m.positive.assign(static_cast<size_t>(m.n_anchors * m.n_cands), 0);
    m.negative.assign(static_cast<size_t>(m.n_anchors * m.n_cands), 0);
    m.vaf_anchor.resize(static_cast<size_t>(m.n_anchors));
    m.zeta.assign(static_cast<size_t>(m.n_anchors), std::nan(""));
    for (int64_t li = 0; li < m.n_anchors; ++li) {
        int64_t l = anchors[static_cast<size_t>(li)];
        m.vaf_anchor[static_cast<size_t>(li)] =
            ctx.vaf_score[static_cast<size_t>(l)] >= ctx.vaf_threshold ? 1 : 0;
        int64_t neg_count = 0;
        for (int64_t mi = 0; mi < m.n_cands; ++mi) {
            int64_t c = cands[static_cast<size_t>(mi)];
            bool pos = detail::wps_positive(ctx, l, c);
            if (pos && vaf_gates_cross_modal_positives &&
                ctx.modality[static_cast<size_t>(l)] != ctx.modality[static_cast<size_t>(c)] &&
                !m.vaf_anchor[static_cast<size_t>(li)]) {
                pos = false;
            }
            bool neg = detail::tns_negative(ctx, l, c);
            m.positive[static_cast<size_t>(li * m.n_cands + mi)] = pos ? 1 : 0;
            m.negative[static_cast<size_t>(li * m.n_cands + mi)] = neg ? 1 : 0;
            neg_count += neg ? 1 : 0;
        }
        if (neg_count > 0) {
            m.zeta[static_cast<size_t>(li)] =
                static_cast<double>(m.n_cands) / static_cast<double>(neg_count);
        }
    }
    return m;
}

namespace detail {
inline std::vector<int64_t> all_feature_indices(const SelectionContext& ctx) {
    std::vector<int64_t> idx(ctx.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int64_t>(i);
    return idx;
}
}  // namespace detail

// Full B x B masks over every feature in the context.
inline std::vector<uint8_t> build_positive_mask(const SelectionContext& ctx) {
    auto idx = detail::all_feature_indices(ctx);
    return build_masks(ctx, idx, idx).positive;
}

inline std::vector<uint8_t> build_negative_mask(const SelectionContext& ctx) {
    auto idx = detail::all_feature_indices(ctx);
    return build_masks(ctx, idx, idx).negative;
}

// zeta = |H2| / #TNS-negatives of l in H2.
inline double zeta(const SelectionContext& ctx, int64_t l, std::span<const int64_t> cands) {
    int64_t neg_count = 0;
    for (int64_t c : cands) neg_count += detail::tns_negative(ctx, l, c) ? 1 : 0;
    if (neg_count == 0) {
        throw NoNegativesError("zeta: anchor " + std::to_string(l) + " has no negatives");
    }
    return static_cast<double>(cands.size()) / static_cast<double>(neg_count);
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

namespace detail {

// -log(P/N) for one anchor given precomputed masks. `row` indexes the mask
// rows, l is the anchor's feature index, sims_row is exp-ready similarities
// of the anchor against every candidate.
inline Tensor anchor_loss(const Tensor& exp_sims_row, const MaskSet& masks, int64_t row,
                          double zeta_l, bool infonce) {
    int64_t n = masks.n_cands;
    std::vector<double> pos_mask(static_cast<size_t>(n)), neg_mask(static_cast<size_t>(n));
    for (int64_t m = 0; m < n; ++m) {
        pos_mask[static_cast<size_t>(m)] = masks.pos(row, m) ? 1.0 : 0.0;
        neg_mask[static_cast<size_t>(m)] = masks.neg(row, m) ? 1.0 : 0.0;
    }
    Tensor p = sum(mul(exp_sims_row, Tensor::from_values({1, n}, std::move(pos_mask))));
    Tensor nsum = mul(sum(mul(exp_sims_row, Tensor::from_values({1, n}, std::move(neg_mask)))), zeta_l);
    if (infonce) return neg(log(div(p, add(p, nsum))));
    return sub(log(nsum), log(p));  // -log(P/N)
}

}  // namespace detail

// Eq. 10 for a single anchor l against candidate set H2 (feature indices).
inline Tensor contrastive_loss_single(const Tensor& features, int64_t l,
                                      std::span<const int64_t> cands, const SelectionContext& ctx,
                                      double tau, bool infonce_denominator = false) {
    std::vector<int64_t> anchor{l};
    MaskSet masks = build_masks(ctx, anchor, cands);
    int64_t n_pos = 0, n_neg = 0;
    for (int64_t m = 0; m < masks.n_cands; ++m) {
        n_pos += masks.pos(0, m) ? 1 : 0;
        n_neg += masks.neg(0, m) ? 1 : 0;
    }
    if (n_pos == 0) {
        throw NoPositivesError("contrastive_loss_single: anchor " + std::to_string(l) +
                               " has no positives");
    }
    if (n_neg == 0) {
        throw NoNegativesError("contrastive_loss_single: anchor " + std::to_string(l) +
                               " has no negatives");
    }
    Tensor h_l = slice(features, 0, l, 1);                               // (1, d)
    Tensor cand_rows = gather_rows(features, cands);                     // (M, d)
    Tensor sims = mul(matmul(h_l, transpose(cand_rows)), 1.0 / tau);     // (1, M)
    return detail::anchor_loss(exp(sims), masks, 0, masks.zeta[0], infonce_denominator);
}

// Eq. 11: VAF-weighted average over anchors. Anchors without a surviving
// positive or negative are skipped and the weights renormalize; if every
// anchor is filtered the loss is 0 and a warning is logged.
inline Tensor contrastive_loss(const Tensor& features, std::span<const int64_t> anchors,
                               std::span<const int64_t> cands, const SelectionContext& ctx,
                               double tau, bool inter_modal,
                               const HCLConfig& cfg = HCLConfig{},
                               bool vaf_gates_cross_modal_positives = false) {
    if (anchors.empty() || cands.empty()) {
        throw ValueError("contrastive_loss: empty anchor or candidate set");
    }
    MaskSet masks = build_masks(ctx, anchors, cands, vaf_gates_cross_modal_positives);

    Tensor anchor_rows = gather_rows(features, anchors);  // (A, d)
    Tensor cand_rows = gather_rows(features, cands);      // (M, d)
    Tensor exp_sims = exp(mul(matmul(anchor_rows, transpose(cand_rows)), 1.0 / tau));

    std::vector<Tensor> kept;
    for (int64_t li = 0; li < masks.n_anchors; ++li) {
        if (inter_modal && !masks.vaf_anchor[static_cast<size_t>(li)]) continue;
        int64_t n_pos = 0, n_neg = 0;
        for (int64_t m = 0; m < masks.n_cands; ++m) {
            n_pos += masks.pos(li, m) ? 1 : 0;
            n_neg += masks.neg(li, m) ? 1 : 0;
        }
        if (n_pos == 0 || n_neg == 0) continue;
        Tensor row = slice(exp_sims, 0, li, 1);
        kept.push_back(detail::anchor_loss(row, masks, li, masks.zeta[static_cast<size_t>(li)],
                                           cfg.infonce_denominator));
    }
    if (kept.empty()) {
        std::cerr << "svgen: contrastive_loss: every anchor was filtered; returning 0\n";
        return Tensor::scalar(0.0);
    }
    Tensor total = kept[0];
    for (size_t i = 1; i < kept.size(); ++i) total = add(total, kept[i]);
    return mul(total, 1.0 / static_cast<double>(kept.size()));
}

// Eq. 6 / Eq. 7. Features are rows aligned with ctx; the visual/audio sets
// are read off ctx.modality. VAF applies to the two inter-modal terms of the
// split variant and to cross-modal pairs of the gathered variant.
inline Tensor hcl_loss(const Tensor& features, const SelectionContext& ctx, const HCLConfig& cfg) {
    cfg.validate();
    ctx.validate();
    if (features.rank() != 2 || features.dim(0) != static_cast<int64_t>(ctx.size())) {
        throw ShapeError("hcl_loss: features " + shape_str(features.shape()) +
                         " do not align with context of " + std::to_string(ctx.size()));
    }
    std::vector<int64_t> h_v, h_a;
    for (size_t i = 0; i < ctx.size(); ++i) {
        (ctx.modality[i] == Modality::visual ? h_v : h_a).push_back(static_cast<int64_t>(i));
    }
    if (cfg.variant == HclVariant::modality_gathered) {
        auto all = detail::all_feature_indices(ctx);
        return contrastive_loss(features, all, all, ctx, cfg.tau, /*inter_modal=*/false, cfg,
                                /*vaf_gates_cross_modal_positives=*/true);
    }
    if (h_v.empty() || h_a.empty()) {
        throw ValueError("hcl_loss: modality-split HCL needs features of both modalities");
    }
    Tensor intra_v = contrastive_loss(features, h_v, h_v, ctx, cfg.tau, false, cfg);
    Tensor intra_a = contrastive_loss(features, h_a, h_a, ctx, cfg.tau, false, cfg);
    Tensor inter_va = contrastive_loss(features, h_v, h_a, ctx, cfg.tau, true, cfg);
    Tensor inter_av = contrastive_loss(features, h_a, h_v, ctx, cfg.tau, true, cfg);
    return add(add(intra_v, intra_a), add(inter_va, inter_av));
}

// ---------------------------------------------------------------------------
// audit dump (oracle-check CLI)
// ---------------------------------------------------------------------------

// Per-set masks, zeta vectors and per-anchor losses as CSV for manual audit.
inline void dump_hcl_audit(const Tensor& features, const SelectionContext& ctx,
                           const HCLConfig& cfg, std::ostream& masks_os, std::ostream& zeta_os,
                           std::ostream& losses_os) {
    std::vector<int64_t> h_v, h_a;
    for (size_t i = 0; i < ctx.size(); ++i) {
        (ctx.modality[i] == Modality::visual ? h_v : h_a).push_back(static_cast<int64_t>(i));
    }
    struct Set {
        const char* name;
        std::vector<int64_t> anchors, cands;
        bool inter;
    };
    std::vector<Set> sets{{"vv", h_v, h_v, false},
                          {"aa", h_a, h_a, false},
                          {"va", h_v, h_a, true},
                          {"av", h_a, h_v, true}};
    masks_os << "set,anchor,candidate,positive,negative\n";
    zeta_os << "set,anchor,zeta,vaf_pass\n";
    losses_os << "set,anchor,loss\n";
    for (const Set& s : sets) {
        MaskSet m = build_masks(ctx, s.anchors, s.cands);
        for (int64_t li = 0; li < m.n_anchors; ++li) {
            int64_t l = s.anchors[static_cast<size_t>(li)];
            for (int64_t mi = 0; mi < m.n_cands; ++mi) {
                masks_os << s.name << "," << l << "," << s.cands[static_cast<size_t>(mi)] << ","
                         << (m.pos(li, mi) ? 1 : 0) << "," << (m.neg(li, mi) ? 1 : 0) << "\n";
            }
            zeta_os << s.name << "," << l << ",";
            if (std::isnan(m.zeta[static_cast<size_t>(li)])) {
                zeta_os << "nan";
            } else {
                zeta_os << m.zeta[static_cast<size_t>(li)];
            }
            zeta_os << "," << (m.vaf_anchor[static_cast<size_t>(li)] ? 1 : 0) << "\n";
            bool skipped = s.inter && !m.vaf_anchor[static_cast<size_t>(li)];
            int64_t n_pos = 0, n_neg = 0;
            for (int64_t mi = 0; mi < m.n_cands; ++mi) {
                n_pos += m.pos(li, mi) ? 1 : 0;
                n_neg += m.neg(li, mi) ? 1 : 0;
            }
            losses_os << s.name << "," << l << ",";
            if (skipped || n_pos == 0 || n_neg == 0) {
                losses_os << "skipped\n";
            } else {
                Tensor loss = contrastive_loss_single(features, l, s.cands, ctx, cfg.tau,
                                                      cfg.infonce_denominator);
                losses_os << loss.item() << "\n";
            }
        }
    }
}

}  // namespace svgen
