#pragma once

// Toy autoregressive Transformer decoder over multimodal sequences: causal
// self-attention training path with the modality-weighted loss, a KV-cached
// inference path, structure-forced sampling and reranking.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "svgen/nn.hpp"
#include "svgen/seqfmt.hpp"
#include "svgen/tensor.hpp"

namespace svgen {

struct DecoderConfig {
    int64_t layers = 4;
    int64_t heads = 4;
    int64_t model_dim = 128;
    int64_t max_len = 512;
    int64_t vocab_size = 0;
    double gamma_t = 3.0;  // text loss weight
    double gamma_v = 1.0;  // visual
    double gamma_a = 2.0;  // audio
    uint64_t init_seed = 42;

    void validate() const {
        auto fail = [](const std::string& m) { throw ValueError("DecoderConfig: " + m); };
        if (layers < 1 || heads < 1 || model_dim < 1 || max_len < 2) fail("bad transformer shape");
        if (model_dim % heads != 0) fail("model_dim must be divisible by heads");
        if (vocab_size < 2) fail("vocab_size must be at least 2");
        if (gamma_t < 0 || gamma_v < 0 || gamma_a < 0) fail("loss weights must be non-negative");
    }

    static DecoderConfig paper_scale(int64_t vocab) {
        DecoderConfig c;
        c.layers = 24;
        c.heads = 16;
        c.model_dim = 1024;
        c.max_len = 1025;
        c.vocab_size = vocab;
        return c;
    }

    static DecoderConfig desk(int64_t vocab) {
        DecoderConfig c;
        c.vocab_size = vocab;
        return c;
    }
};

class ArDecoder {
public:
    ArDecoder() = default;

    explicit ArDecoder(DecoderConfig cfg) : cfg_(cfg) {
        cfg.validate();
        RngStream rng(derive_seed(cfg.init_seed, "ar-decoder"));
        tok_emb_ = Tensor::randn({cfg.vocab_size, cfg.model_dim}, rng, 0.02, true);
        pos_emb_ = Tensor::randn({cfg.max_len, cfg.model_dim}, rng, 0.02, true);
        layers_.resize(static_cast<size_t>(cfg.layers));
        for (auto& l : layers_) {
            l.ln1 = LayerNorm(cfg.model_dim);
            l.ln2 = LayerNorm(cfg.model_dim);
            l.wq = Linear(cfg.model_dim, cfg.model_dim, rng);
            l.wk = Linear(cfg.model_dim, cfg.model_dim, rng);
            l.wv = Linear(cfg.model_dim, cfg.model_dim, rng);
            l.wo = Linear(cfg.model_dim, cfg.model_dim, rng);
            l.mlp1 = Linear(cfg.model_dim, 4 * cfg.model_dim, rng);
            l.mlp2 = Linear(4 * cfg.model_dim, cfg.model_dim, rng);
        }
        ln_f_ = LayerNorm(cfg.model_dim);
        head_ = Linear(cfg.model_dim, cfg.vocab_size, rng);
    }

    const DecoderConfig& config() const { return cfg_; }

    // Training path: (len, vocab) logits; position p conditions on <= p only.
    Tensor forward_logits(std::span<const int64_t> ids) const {
        int64_t n = static_cast<int64_t>(ids.size());
        if (n < 1) throw ValueError("forward_logits: empty sequence");
        if (n > cfg_.max_len) {
            throw ValueError("forward_logits: length " + std::to_string(n) + " exceeds max_len " +
                             std::to_string(cfg_.max_len));
        }
        std::vector<int64_t> pos(static_cast<size_t>(n));
        std::iota(pos.begin(), pos.end(), 0);
        Tensor x = add(embedding_lookup(tok_emb_, ids), embedding_lookup(pos_emb_, pos));

        Tensor causal = causal_mask(n);
        int64_t dh = cfg_.model_dim / cfg_.heads;
        double scale = 1.0 / std::sqrt(static_cast<double>(dh));
        for (const Layer& l : layers_) {
            Tensor h = l.ln1.forward(x);
            Tensor q = l.wq.forward(h), k = l.wk.forward(h), v = l.wv.forward(h);
            std::vector<Tensor> head_outs;
            head_outs.reserve(static_cast<size_t>(cfg_.heads));
            for (int64_t hd = 0; hd < cfg_.heads; ++hd) {
                Tensor qh = slice(q, 1, hd * dh, dh);
                Tensor kh = slice(k, 1, hd * dh, dh);
                Tensor vh = slice(v, 1, hd * dh, dh);
                Tensor scores = add(mul(matmul(qh, transpose(kh)), scale), causal);
                head_outs.push_back(matmul(softmax_axis(scores, 1), vh));
            }
            Tensor attn = head_outs.size() == 1 ? head_outs[0] : concat(head_outs, 1);
            x = add(x, l.wo.forward(attn));
            x = add(x, l.mlp2.forward(relu(l.mlp1.forward(l.ln2.forward(x)))));
        }
        return head_.forward(ln_f_.forward(x));
    }

    // ---------------------------------------------------------------------
    // KV-cached inference path (no autodiff)
    // ---------------------------------------------------------------------

    struct InferenceState {
        std::vector<std::vector<double>> k_cache, v_cache;  // per layer, len*d
        int64_t len = 0;
    };

    InferenceState make_state() const {
        InferenceState st;
        st.k_cache.assign(static_cast<size_t>(cfg_.layers), {});
        st.v_cache.assign(static_cast<size_t>(cfg_.layers), {});
        return st;
    }

    // Appends one token and returns logits for the next position.
    std::vector<double> forward_next(InferenceState& st, int64_t token) const {
        if (st.len >= cfg_.max_len) {
            throw ValueError("forward_next: inference past max_len " + std::to_string(cfg_.max_len));
        }
        int64_t d = cfg_.model_dim, dh = d / cfg_.heads;
        double scale = 1.0 / std::sqrt(static_cast<double>(dh));
        std::vector<double> x(static_cast<size_t>(d));
        for (int64_t c = 0; c < d; ++c) {
            x[static_cast<size_t>(c)] = tok_emb_.values()[static_cast<size_t>(token * d + c)] +
                                        pos_emb_.values()[static_cast<size_t>(st.len * d + c)];
        }
        for (size_t li = 0; li < layers_.size(); ++li) {
            const Layer& l = layers_[li];
            std::vector<double> h = ln_raw(x, l.ln1);
            std::vector<double> q = lin_raw(h, l.wq), k = lin_raw(h, l.wk), v = lin_raw(h, l.wv);
            auto& kc = st.k_cache[li];
            auto& vc = st.v_cache[li];
            kc.insert(kc.end(), k.begin(), k.end());
            vc.insert(vc.end(), v.begin(), v.end());
            int64_t n = st.len + 1;
            std::vector<double> attn_out(static_cast<size_t>(d), 0.0);
            for (int64_t hd = 0; hd < cfg_.heads; ++hd) {
                int64_t off = hd * dh;
                std::vector<double> logits(static_cast<size_t>(n));
                double mx = -1e308;
                for (int64_t j = 0; j < n; ++j) {
                    double dot = 0;
                    for (int64_t c = 0; c < dh; ++c) {
                        dot += q[static_cast<size_t>(off + c)] * kc[static_cast<size_t>(j * d + off + c)];
                    }
                    logits[static_cast<size_t>(j)] = dot * scale;
                    mx = std::max(mx, logits[static_cast<size_t>(j)]);
                }
                double z = 0;
                for (int64_t j = 0; j < n; ++j) z += std::exp(logits[static_cast<size_t>(j)] - mx);
                for (int64_t j = 0; j < n; ++j) {
                    double w = std::exp(logits[static_cast<size_t>(j)] - mx) / z;
                    for (int64_t c = 0; c < dh; ++c) {
                        attn_out[static_cast<size_t>(off + c)] += w * vc[static_cast<size_t>(j * d + off + c)];
                    }
                }
            }
            std::vector<double> proj = lin_raw(attn_out, l.wo);
            for (int64_t c = 0; c < d; ++c) x[static_cast<size_t>(c)] += proj[static_cast<size_t>(c)];
            std::vector<double> m = ln_raw(x, l.ln2);
            std::vector<double> m1 = lin_raw(m, l.mlp1);
            for (double& u : m1) u = u > 0 ? u : 0;
            std::vector<double> m2 = lin_raw(m1, l.mlp2);
            for (int64_t c = 0; c < d; ++c) x[static_cast<size_t>(c)] += m2[static_cast<size_t>(c)];
        }
        ++st.len;
        return lin_raw(ln_raw(x, ln_f_), head_);
    }

    void collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
        out.emplace_back(prefix + "/tok_emb", tok_emb_);
        out.emplace_back(prefix + "/pos_emb", pos_emb_);
        for (size_t i = 0; i < layers_.size(); ++i) {
            const Layer& l = layers_[i];
            std::string p = prefix + "/layer" + std::to_string(i);
            l.ln1.collect(p + "/ln1", out);
            l.ln2.collect(p + "/ln2", out);
            l.wq.collect(p + "/wq", out);
            l.wk.collect(p + "/wk", out);
            l.wv.collect(p + "/wv", out);
            l.wo.collect(p + "/wo", out);
            l.mlp1.collect(p + "/mlp1", out);
            l.mlp2.collect(p + "/mlp2", out);
        }
        ln_f_.collect(prefix + "/ln_f", out);
        head_.collect(prefix + "/head", out);
    }

    std::vector<Tensor> params() const {
        std::vector<NamedTensor> named;
        collect("ar", named);
        std::vector<Tensor> out;
        collect_params(named, out);
        return out;
    }

private:
    struct Layer {
        LayerNorm ln1, ln2;
        Linear wq, wk, wv, wo, mlp1, mlp2;
    };

    static Tensor causal_mask(int64_t n) {
        // 0 on and below the diagonal, -1e9 above; exp(-1e9 - max) underflows
        // to exactly 0, so future positions cannot perturb earlier rows.
        std::vector<double> m(static_cast<size_t>(n * n), 0.0);
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = i + 1; j < n; ++j) m[static_cast<size_t>(i * n + j)] = -1e9;
        return Tensor::from_values({n, n}, std::move(m));
    }

    static std::vector<double> ln_raw(const std::vector<double>& x, const LayerNorm& ln,
                                      double eps = 1e-5) {
        double mean = 0;
        for (double v : x) mean += v;
        mean /= static_cast<double>(x.size());
        double var = 0;
        for (double v : x) var += (v - mean) * (v - mean);
        var /= static_cast<double>(x.size());
        double inv = 1.0 / std::sqrt(var + eps);
        std::vector<double> y(x.size());
        for (size_t i = 0; i < x.size(); ++i) {
            y[i] = (x[i] - mean) * inv * ln.gain.values()[i] + ln.bias.values()[i];
        }
        return y;
    }

    static std::vector<double> lin_raw(const std::vector<double>& x, const Linear& l) {
        int64_t in = l.w.dim(0), out_dim = l.w.dim(1);
        std::vector<double> y(l.b.values());
        for (int64_t i = 0; i < in; ++i) {
            double xi = x[static_cast<size_t>(i)];
            if (xi == 0.0) continue;
            const double* wrow = l.w.values().data() + i * out_dim;
            for (int64_t j = 0; j < out_dim; ++j) y[static_cast<size_t>(j)] += xi * wrow[j];
        }
        return y;
    }

    DecoderConfig cfg_;
    Tensor tok_emb_, pos_emb_;
    std::vector<Layer> layers_;
    LayerNorm ln_f_;
    Linear head_;
};

// ---------------------------------------------------------------------------
// Eq. 15 loss
// ---------------------------------------------------------------------------

struct ArLossParts {
    Tensor loss;  // weighted CE sums / weighted token count
    double ce_text = 0.0, ce_visual = 0.0, ce_audio = 0.0;  // mean CE per modality
    int64_t n_text = 0, n_visual = 0, n_audio = 0;
    double denominator = 0.0;
};

// Next-token targets; specials and [TXT] are structurally forced and carry no
// loss. Weighted cross-entropy sums per modality over the shared denominator.
inline ArLossParts ar_loss(const Tensor& logits, const MultimodalSequence& seq,
                           const DecoderConfig& cfg) {
    int64_t n = static_cast<int64_t>(seq.size());
    if (logits.rank() != 2 || logits.dim(0) != n || logits.dim(1) != cfg.vocab_size) {
        throw ShapeError("ar_loss: logits " + shape_str(logits.shape()) + " do not match sequence " +
                         std::to_string(n) + " and vocab " + std::to_string(cfg.vocab_size));
    }
    if (n < 2) throw ValueError("ar_loss: sequence too short for next-token targets");

    std::vector<int64_t> targets(seq.ids.begin() + 1, seq.ids.end());
    Tensor ce = cross_entropy(slice(logits, 0, 0, n - 1), targets);  // (n-1,)

    ArLossParts parts;
    std::vector<double> weights(static_cast<size_t>(n - 1), 0.0);
    for (int64_t p = 0; p < n - 1; ++p) {
        TokenKind k = seq.modality_tag[static_cast<size_t>(p + 1)];
        double ce_p = ce.values()[static_cast<size_t>(p)];
        switch (k) {
            case TokenKind::text:
                weights[static_cast<size_t>(p)] = cfg.gamma_t;
                parts.ce_text += ce_p;
                ++parts.n_text;
                break;
            case TokenKind::visual:
                weights[static_cast<size_t>(p)] = cfg.gamma_v;
                parts.ce_visual += ce_p;
                ++parts.n_visual;
                break;
            case TokenKind::audio:
                weights[static_cast<size_t>(p)] = cfg.gamma_a;
                parts.ce_audio += ce_p;
                ++parts.n_audio;
                break;
            default:
                break;  // specials are loss-masked
        }
    }
    parts.denominator = cfg.gamma_t * static_cast<double>(parts.n_text) +
                        cfg.gamma_v * static_cast<double>(parts.n_visual) +
                        cfg.gamma_a * static_cast<double>(parts.n_audio);
    if (parts.denominator == 0.0) {
        throw ValueError("ar_loss: no loss-carrying positions (zero denominator)");
    }
    if (parts.n_text) parts.ce_text /= static_cast<double>(parts.n_text);
    if (parts.n_visual) parts.ce_visual /= static_cast<double>(parts.n_visual);
    if (parts.n_audio) parts.ce_audio /= static_cast<double>(parts.n_audio);

    Tensor wvec = Tensor::from_values({n - 1}, std::move(weights));
    parts.loss = mul(sum(mul(ce, wvec)), 1.0 / parts.denominator);
    return parts;
}

// ---------------------------------------------------------------------------
// structure-forced sampling
// ---------------------------------------------------------------------------

struct GenConfig {
    int64_t k = 4;             // candidates per call
    double temperature = 1.0;  // 0 -> greedy
    int64_t top_k = 16;
    uint64_t seed = 0;
};

struct GeneratedSample {
    MultimodalSequence seq;
    double score;  // mean log-prob of sampled tokens under the masked dist
};

struct SampleSet {
    std::vector<GeneratedSample> samples;
};

namespace detail {

// Sample from `logits` restricted to ids [begin, begin+count), with
// temperature and top-k; returns the id and its log-probability.
inline std::pair<int64_t, double> sample_range(const std::vector<double>& logits, int64_t begin,
                                               int64_t count, double temperature, int64_t top_k,
                                               RngStream& rng) {
    std::vector<int64_t> order(static_cast<size_t>(count));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
        double la = logits[static_cast<size_t>(begin + a)], lb = logits[static_cast<size_t>(begin + b)];
        if (la != lb) return la > lb;
        return a < b;
    });
    int64_t keep = std::min<int64_t>(std::max<int64_t>(top_k, 1), count);

    if (temperature <= 0.0) {
        return {begin + order[0], 0.0};  // greedy; log-prob of argmax under T->0 is 0
    }
    double mx = logits[static_cast<size_t>(begin + order[0])];
    std::vector<double> probs(static_cast<size_t>(keep));
    double z = 0.0;
    for (int64_t i = 0; i < keep; ++i) {
        probs[static_cast<size_t>(i)] =
            std::exp((logits[static_cast<size_t>(begin + order[static_cast<size_t>(i)])] - mx) / temperature);
        z += probs[static_cast<size_t>(i)];
    }
    double u = rng.uniform() * z;
    double acc = 0.0;
    int64_t pick = keep - 1;
    for (int64_t i = 0; i < keep; ++i) {
        acc += probs[static_cast<size_t>(i)];
        if (u < acc) {
            pick = i;
            break;
        }
    }
    return {begin + order[static_cast<size_t>(pick)],
            std::log(probs[static_cast<size_t>(pick)] / z)};
}

}  // namespace detail

// Left-to-right sampling over the format's slot template: special slots are
// forced, content slots are sampled from their modality's id range. Every
// output parses by construction.
inline SampleSet generate(const ArDecoder& model, const Vocabulary& vocab, SeqFormat format,
                          std::span<const int64_t> text_ids, int64_t v_per_frame,
                          int64_t a_per_frame, const GenConfig& gen) {
    std::vector<Slot> slots =
        sequence_template(vocab, format, static_cast<int64_t>(text_ids.size()), v_per_frame,
                          a_per_frame);
    if (static_cast<int64_t>(slots.size()) > model.config().max_len) {
        throw ValueError("generate: template of " + std::to_string(slots.size()) +
                         " positions exceeds max_len " + std::to_string(model.config().max_len));
    }
    SampleSet out;
    out.samples.reserve(static_cast<size_t>(gen.k));
    for (int64_t cand = 0; cand < gen.k; ++cand) {
        RngStream rng(derive_seed(gen.seed, "generate", static_cast<uint64_t>(cand)));
        ArDecoder::InferenceState st = model.make_state();
        std::vector<int64_t> ids;
        ids.reserve(slots.size());
        double logprob_sum = 0.0;
        int64_t sampled = 0;
        size_t text_cursor = 0;
        std::vector<double> logits;
        for (const Slot& slot : slots) {
            int64_t id;
            if (slot.forced_id >= 0) {
                id = slot.forced_id;
            } else if (slot.kind == TokenKind::text) {
                id = text_ids[text_cursor++];  // prompt tokens are given, not sampled
            } else {
                int64_t begin = slot.kind == TokenKind::visual ? vocab.visual_begin()
                                                               : vocab.audio_begin();
                int64_t count = slot.kind == TokenKind::visual ? vocab.visual_size()
                                                               : vocab.audio_size();
                auto [pick, lp] =
                    detail::sample_range(logits, begin, count, gen.temperature, gen.top_k, rng);
                id = pick;
                logprob_sum += lp;
                ++sampled;
            }
            ids.push_back(id);
            logits = model.forward_next(st, id);
        }
        GeneratedSample s;
        s.seq = annotate_sequence(vocab, format, ids);
        s.score = sampled > 0 ? logprob_sum / static_cast<double>(sampled) : 0.0;
        out.samples.push_back(std::move(s));
    }
    return out;
}

// Stable descending sort by an external scorer.
inline SampleSet rerank(const SampleSet& samples,
                        const std::function<double(const MultimodalSequence&)>& scorer) {
    SampleSet out = samples;
    for (GeneratedSample& s : out.samples) s.score = scorer(s.seq);
    std::stable_sort(out.samples.begin(), out.samples.end(),
                     [](const GeneratedSample& a, const GeneratedSample& b) {
                         return a.score > b.score;
                     });
    return out;
}

}  // namespace svgen
