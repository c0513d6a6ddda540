#pragma once

// Nearest-neighbor vector quantization with EMA codebook updates,
// straight-through gradients and the commit/embed codebook loss terms.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "svgen/rng.hpp"
#include "svgen/tensor.hpp"

namespace svgen {

enum class CodebookUpdate { ema, loss };

struct CodebookConfig {
    int64_t num_entries = 64;
    int64_t dim = 16;
    double beta = 0.25;          // embed-term weight
    double decay = 0.99;         // EMA decay
    double epsilon = 1e-5;       // EMA denominator smoothing
    CodebookUpdate update = CodebookUpdate::ema;
    double dead_threshold = 1e-3;  // ema_cluster_size below this counts as dead
};

struct QuantizeResult {
    std::vector<int64_t> indices;  // one per input row
    Tensor quantized;              // rows are exact codebook entries; straight-through to z
    Tensor codebook_loss;          // commit + beta * embed
    Tensor commit_term;            // ||z - sg(q)||^2
    Tensor embed_term;             // ||sg(z) - q||^2 (unweighted)
};

// One modality's embedding table plus EMA statistics. Inputs are row
// matrices (M, d); spatial layouts are flattened by the caller.
class Codebook {
public:
    Codebook() = default;

    Codebook(CodebookConfig cfg, RngStream& rng) : cfg_(cfg) {
        if (cfg.num_entries < 1) throw ValueError("Codebook: num_entries must be >= 1");
        entries_ = Tensor::rand_uniform({cfg.num_entries, cfg.dim}, rng, -1.0, 1.0,
                                        cfg.update == CodebookUpdate::loss);
        ema_cluster_size_.assign(static_cast<size_t>(cfg.num_entries), 1.0);
        ema_sum_ = entries_.values();
    }

    const CodebookConfig& config() const { return cfg_; }
    Tensor& entries() { return entries_; }
    const Tensor& entries() const { return entries_; }
    std::vector<double>& ema_cluster_size() { return ema_cluster_size_; }
    std::vector<double>& ema_sum() { return ema_sum_; }

    // Argmin-L2 entry per row; ties break to the lowest index.
    std::vector<int64_t> nearest(const Tensor& z) const {
        check_rows(z, "nearest");
        int64_t m = z.dim(0), d = cfg_.dim, n = cfg_.num_entries;
        const auto& zv = z.values();
        const auto& ev = entries_.values();
        std::vector<int64_t> idx(static_cast<size_t>(m));
        for (int64_t i = 0; i < m; ++i) {
            double best = 1e308;
            int64_t arg = 0;
            const double* zi = zv.data() + i * d;
            for (int64_t e = 0; e < n; ++e) {
                const double* ee = ev.data() + e * d;
                double dist = 0.0;
                for (int64_t c = 0; c < d; ++c) {
                    double diff = zi[c] - ee[c];
                    dist += diff * diff;
                }
                if (dist < best) {
                    best = dist;
                    arg = e;
                }
            }
            idx[static_cast<size_t>(i)] = arg;
        }
        return idx;
    }

    // Straight-through quantization plus the codebook loss. The commit term
    // ||z - sg(q)||^2 always carries gradient to z. In loss mode the embed
    // term beta*||sg(z) - q||^2 carries gradient into the entries; in EMA
    // mode entry movement is owned by ema_update and the embed term is a
    // reported constant.
    QuantizeResult quantize(const Tensor& z) {
        check_rows(z, "quantize");
        QuantizeResult r;
        r.indices = nearest(z);
        int64_t m = z.dim(0), d = cfg_.dim;

        std::vector<double> qv(static_cast<size_t>(m * d));
        const auto& ev = entries_.values();
        for (int64_t i = 0; i < m; ++i) {
            std::copy(ev.begin() + r.indices[static_cast<size_t>(i)] * d,
                      ev.begin() + (r.indices[static_cast<size_t>(i)] + 1) * d, qv.begin() + i * d);
        }
        r.quantized = straight_through(z, qv);

        Tensor q_const = Tensor::from_values({m, d}, qv);
        Tensor commit_diff = sub(z, q_const);
        r.commit_term = sum(mul(commit_diff, commit_diff));
        if (cfg_.update == CodebookUpdate::loss) {
            Tensor q_entries = gather_rows(entries_, r.indices);
            Tensor embed_diff = sub(z.detach(), q_entries);
            r.embed_term = sum(mul(embed_diff, embed_diff));
        } else {
            Tensor embed_diff = sub(z.detach(), q_const);
            r.embed_term = sum(mul(embed_diff, embed_diff));
        }
        r.codebook_loss = add(r.commit_term, mul(r.embed_term, cfg_.beta));
        return r;
    }

    // ema_cluster_size <- decay*prev + (1-decay)*counts, likewise for feature
    // sums; entries <- ema_sum / (ema_cluster_size + epsilon).
    void ema_update(const Tensor& z, std::span<const int64_t> indices) {
        check_rows(z, "ema_update");
        int64_t m = z.dim(0), d = cfg_.dim, n = cfg_.num_entries;
        if (static_cast<int64_t>(indices.size()) != m) {
            throw ValueError("ema_update: " + std::to_string(indices.size()) + " indices for " +
                             std::to_string(m) + " rows");
        }
        std::vector<double> counts(static_cast<size_t>(n), 0.0);
        std::vector<double> sums(static_cast<size_t>(n * d), 0.0);
        const auto& zv = z.values();
        for (int64_t i = 0; i < m; ++i) {
            int64_t e = indices[static_cast<size_t>(i)];
            if (e < 0 || e >= n) {
                throw ValueError("ema_update: index " + std::to_string(e) + " out of range");
            }
            counts[static_cast<size_t>(e)] += 1.0;
            for (int64_t c = 0; c < d; ++c) sums[static_cast<size_t>(e * d + c)] += zv[static_cast<size_t>(i * d + c)];
        }
        auto& entry_vals = entries_.values_mut();
        for (int64_t e = 0; e < n; ++e) {
            ema_cluster_size_[static_cast<size_t>(e)] =
                cfg_.decay * ema_cluster_size_[static_cast<size_t>(e)] +
                (1.0 - cfg_.decay) * counts[static_cast<size_t>(e)];
            double denom = ema_cluster_size_[static_cast<size_t>(e)] + cfg_.epsilon;
            for (int64_t c = 0; c < d; ++c) {
                size_t k = static_cast<size_t>(e * d + c);
                ema_sum_[k] = cfg_.decay * ema_sum_[k] + (1.0 - cfg_.decay) * sums[k];
                entry_vals[k] = ema_sum_[k] / denom;
            }
        }
    }

    // Entries that stopped receiving assignments are reset to random rows of
    // the given batch features; prevents codebook collapse at tiny scale.
    int64_t reseed_dead(const Tensor& batch_features, RngStream& rng) {
        check_rows(batch_features, "reseed_dead");
        int64_t m = batch_features.dim(0), d = cfg_.dim;
        if (m == 0) return 0;
        int64_t reseeded = 0;
        auto& entry_vals = entries_.values_mut();
        const auto& fv = batch_features.values();
        for (int64_t e = 0; e < cfg_.num_entries; ++e) {
            if (ema_cluster_size_[static_cast<size_t>(e)] >= cfg_.dead_threshold) continue;
            int64_t pick = rng.randint(m);
            for (int64_t c = 0; c < d; ++c) {
                size_t k = static_cast<size_t>(e * d + c);
                entry_vals[k] = fv[static_cast<size_t>(pick * d + c)];
                ema_sum_[k] = entry_vals[k];
            }
            ema_cluster_size_[static_cast<size_t>(e)] = 1.0;
            ++reseeded;
        }
        return reseeded;
    }

private:
    void check_rows(const Tensor& z, const char* op) const {
        if (z.rank() != 2 || z.dim(1) != cfg_.dim) {
            throw ShapeError(std::string(op) + ": expected (*, " + std::to_string(cfg_.dim) +
                             ") feature rows, got " + shape_str(z.shape()));
        }
    }

    CodebookConfig cfg_;
    Tensor entries_;
    std::vector<double> ema_cluster_size_;
    std::vector<double> ema_sum_;
};

// exp of the entropy of the empirical index distribution; in [1, N].
inline double perplexity(std::span<const int64_t> indices, int64_t num_entries) {
    if (indices.empty()) throw ValueError("perplexity: empty index set");
    std::vector<double> counts(static_cast<size_t>(num_entries), 0.0);
    for (int64_t i : indices) {
        if (i < 0 || i >= num_entries) {
            throw ValueError("perplexity: index " + std::to_string(i) + " out of range");
        }
        counts[static_cast<size_t>(i)] += 1.0;
    }
    double total = static_cast<double>(indices.size());
    double entropy = 0.0;
    for (double c : counts) {
        if (c > 0.0) {
            double p = c / total;
            entropy -= p * std::log(p);
        }
    }
    return std::exp(entropy);
}

}  // namespace svgen
