#include "svgen/argen.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "svgen/oracles.hpp"
#include "svgen/rng.hpp"

using namespace svgen;

namespace {

// text 8, visual 6, audio 4, L frames.
Vocabulary small_vocab(int64_t frames = 1) { return Vocabulary(8, 6, 4, frames); }

DecoderConfig tiny_cfg(const Vocabulary& vocab, int64_t layers = 2) {
    DecoderConfig cfg;
    cfg.layers = layers;
    cfg.heads = 2;
    cfg.model_dim = 16;
    cfg.max_len = 64;
    cfg.vocab_size = vocab.size();
    return cfg;
}

MultimodalSequence example_sequence(const Vocabulary& vocab, int64_t text_len = 2) {
    std::vector<int64_t> text;
    for (int64_t i = 0; i < text_len; ++i) text.push_back(i % vocab.text_size());
    std::vector<TokenGrid> visual{TokenGrid{1, 3, {0, 1, 2}}};
    std::vector<TokenGrid> audio{TokenGrid{1, 3, {0, 1, 2}}};
    return build_sequence(vocab, SeqFormat::masf, text, visual, audio, 64);
}

}  // namespace

TEST(DecoderConfig, PresetsValidate) {
    Vocabulary vocab(120, 8192, 4096, 10);
    DecoderConfig paper = DecoderConfig::paper_scale(vocab.size());
    paper.validate();
    EXPECT_EQ(paper.layers, 24);
    EXPECT_EQ(paper.heads, 16);
    EXPECT_EQ(paper.model_dim, 1024);
    EXPECT_EQ(paper.max_len, 1025);

    DecoderConfig desk = DecoderConfig::desk(small_vocab().size());
    desk.validate();
    EXPECT_LE(desk.max_len, 512);

    DecoderConfig bad = desk;
    bad.model_dim = 130;  // not divisible by 4 heads
    EXPECT_THROW(bad.validate(), ValueError);
}

TEST(ForwardLogits, ShapeAndFiniteSoftmax) {
    Vocabulary vocab = small_vocab();
    ArDecoder model(tiny_cfg(vocab));
    MultimodalSequence seq = example_sequence(vocab);
    Tensor logits = model.forward_logits(seq.ids);
    EXPECT_EQ(logits.shape(), (Shape{static_cast<int64_t>(seq.size()), vocab.size()}));
    Tensor probs = softmax_axis(logits, 1);
    for (int64_t p = 0; p < logits.dim(0); ++p) {
        double row = 0;
        for (int64_t vtok = 0; vtok < vocab.size(); ++vtok) row += probs.at({p, vtok});
        EXPECT_NEAR(row, 1.0, 1e-12);
    }
}

TEST(ForwardLogits, OverflowRejected) {
    Vocabulary vocab = small_vocab();
    DecoderConfig cfg = tiny_cfg(vocab);
    cfg.max_len = 8;
    ArDecoder model(cfg);
    std::vector<int64_t> ids(9, 0);
    EXPECT_THROW(model.forward_logits(ids), ValueError);
}

TEST(ForwardLogits, CausalityProbeBitForBit) {
    // Perturbing the token at position p must leave logits at positions < p
    // unchanged bit-for-bit, for every layer count.
    Vocabulary vocab = small_vocab();
    for (int64_t layers : {1, 2, 3}) {
        ArDecoder model(tiny_cfg(vocab, layers));
        MultimodalSequence seq = example_sequence(vocab);
        Tensor base = model.forward_logits(seq.ids);
        size_t p = 5;
        std::vector<int64_t> perturbed = seq.ids;
        perturbed[p] = (perturbed[p] + 1) % vocab.size();
        Tensor alt = model.forward_logits(perturbed);
        for (size_t q = 0; q < p; ++q) {
            for (int64_t vtok = 0; vtok < vocab.size(); ++vtok) {
                EXPECT_EQ(base.at({static_cast<int64_t>(q), vtok}),
                          alt.at({static_cast<int64_t>(q), vtok}))
                    << "layers " << layers << " pos " << q;
            }
        }
    }
}

TEST(InferencePath, KvCacheMatchesFullForward) {
    Vocabulary vocab = small_vocab();
    ArDecoder model(tiny_cfg(vocab));
    MultimodalSequence seq = example_sequence(vocab, 3);
    Tensor full = model.forward_logits(seq.ids);
    ArDecoder::InferenceState st = model.make_state();
    for (size_t p = 0; p < seq.size(); ++p) {
        std::vector<double> step = model.forward_next(st, seq.ids[p]);
        for (int64_t vtok = 0; vtok < vocab.size(); ++vtok) {
            EXPECT_NEAR(step[static_cast<size_t>(vtok)], full.at({static_cast<int64_t>(p), vtok}),
                        1e-9);
        }
    }
}

TEST(ArLoss, WeightedMeanOfConstantCePerToken) {
    // 2 text + 3 visual + 3 audio loss positions with uniform logits: every
    // per-token CE equals ln(V), so the gamma-weighted mean equals ln(V).
    Vocabulary vocab = small_vocab();
    MultimodalSequence seq = example_sequence(vocab, 2);
    DecoderConfig cfg = tiny_cfg(vocab);
    Tensor logits = Tensor::zeros({static_cast<int64_t>(seq.size()), vocab.size()});
    ArLossParts parts = ar_loss(logits, seq, cfg);
    EXPECT_EQ(parts.n_text, 2);
    EXPECT_EQ(parts.n_visual, 3);
    EXPECT_EQ(parts.n_audio, 3);
    double lnv = std::log(static_cast<double>(vocab.size()));
    EXPECT_NEAR(parts.loss.item(), lnv, 1e-12);
    EXPECT_NEAR(parts.denominator, 3.0 * 2 + 1.0 * 3 + 2.0 * 3, 1e-12);

    // Same with very different weights: still ln(V).
    DecoderConfig cfg2 = cfg;
    cfg2.gamma_t = 10;
    cfg2.gamma_v = 0.5;
    cfg2.gamma_a = 7;
    EXPECT_NEAR(ar_loss(logits, seq, cfg2).loss.item(), lnv, 1e-12);
}

TEST(ArLoss, PerfectPredictionsGiveZero) {
    Vocabulary vocab = small_vocab();
    MultimodalSequence seq = example_sequence(vocab);
    DecoderConfig cfg = tiny_cfg(vocab);
    std::vector<double> lv(seq.size() * static_cast<size_t>(vocab.size()), 0.0);
    for (size_t p = 0; p + 1 < seq.size(); ++p) {
        lv[p * static_cast<size_t>(vocab.size()) + static_cast<size_t>(seq.ids[p + 1])] = 60.0;
    }
    Tensor logits = Tensor::from_values({static_cast<int64_t>(seq.size()), vocab.size()}, lv);
    EXPECT_NEAR(ar_loss(logits, seq, cfg).loss.item(), 0.0, 1e-9);
}

TEST(ArLoss, EqualGammasReduceToPlainMeanCe) {
    Vocabulary vocab = small_vocab();
    MultimodalSequence seq = example_sequence(vocab, 3);
    DecoderConfig cfg = tiny_cfg(vocab);
    cfg.gamma_t = cfg.gamma_v = cfg.gamma_a = 2.5;
    RngStream rng(7);
    Tensor logits = Tensor::randn({static_cast<int64_t>(seq.size()), vocab.size()}, rng);
    ArLossParts parts = ar_loss(logits, seq, cfg);

    std::vector<int64_t> targets(seq.ids.begin() + 1, seq.ids.end());
    Tensor ce = cross_entropy(slice(logits, 0, 0, static_cast<int64_t>(seq.size()) - 1), targets);
    double mean_ce = 0;
    int64_t count = 0;
    for (size_t p = 0; p + 1 < seq.size(); ++p) {
        TokenKind k = seq.modality_tag[p + 1];
        if (k == TokenKind::special || k == TokenKind::pad) continue;
        mean_ce += ce.values()[p];
        ++count;
    }
    mean_ce /= static_cast<double>(count);
    EXPECT_NEAR(parts.loss.item(), mean_ce, 1e-12);
}

TEST(ArLoss, ZeroDenominatorRejected) {
    Vocabulary vocab = small_vocab();
    MultimodalSequence seq = example_sequence(vocab);
    DecoderConfig cfg = tiny_cfg(vocab);
    cfg.gamma_t = cfg.gamma_v = cfg.gamma_a = 0.0;
    Tensor logits = Tensor::zeros({static_cast<int64_t>(seq.size()), vocab.size()});
    EXPECT_THROW(ar_loss(logits, seq, cfg), ValueError);
}

TEST(ArLoss, GradientsPassFiniteDifferences) {
    // Eq. 15 composite through the full transformer on a tiny model.
    Vocabulary vocab = small_vocab();
    DecoderConfig cfg;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.model_dim = 8;
    cfg.max_len = 16;
    cfg.vocab_size = vocab.size();
    ArDecoder model(cfg);
    MultimodalSequence seq = example_sequence(vocab, 1);
    std::vector<Tensor> params = model.params();
    double err = oracle::fd_max_rel_error(
        [&](const std::vector<Tensor>&) {
            return ar_loss(model.forward_logits(seq.ids), seq, cfg).loss;
        },
        params);
    EXPECT_LT(err, 1e-4);
}

TEST(Generate, GreedyDeterministicAndParses) {
    Vocabulary vocab = small_vocab();
    ArDecoder model(tiny_cfg(vocab));
    std::vector<int64_t> text{1, 2};
    GenConfig gen;
    gen.k = 1;
    gen.temperature = 0.0;
    gen.seed = 7;
    SampleSet a = generate(model, vocab, SeqFormat::masf, text, 3, 3, gen);
    SampleSet b = generate(model, vocab, SeqFormat::masf, text, 3, 3, gen);
    ASSERT_EQ(a.samples.size(), 1u);
    EXPECT_EQ(a.samples[0].seq.ids, b.samples[0].seq.ids);
    EXPECT_NO_THROW(parse_sequence(vocab, SeqFormat::masf, a.samples[0].seq.ids));
}

TEST(Generate, EverySampleParsesAndRespectsRanges) {
    Vocabulary vocab = small_vocab(2);
    ArDecoder model(tiny_cfg(vocab));
    std::vector<int64_t> text{0, 3};
    for (uint64_t seed = 0; seed < 8; ++seed) {
        for (SeqFormat fmt : {SeqFormat::tva, SeqFormat::tav, SeqFormat::masf}) {
            GenConfig gen;
            gen.k = 2;
            gen.temperature = 1.2;
            gen.top_k = 4;
            gen.seed = seed;
            SampleSet set = generate(model, vocab, fmt, text, 3, 2, gen);
            for (const GeneratedSample& s : set.samples) {
                ParsedSequence parsed = parse_sequence(vocab, fmt, s.seq.ids);
                EXPECT_EQ(parsed.text_ids, text);
                // Range-mask property: audio positions never hold visual ids.
                for (size_t p = 0; p < s.seq.size(); ++p) {
                    if (s.seq.modality_tag[p] == TokenKind::audio) {
                        EXPECT_EQ(vocab.kind(s.seq.ids[p]), TokenKind::audio);
                    }
                    if (s.seq.modality_tag[p] == TokenKind::visual) {
                        EXPECT_EQ(vocab.kind(s.seq.ids[p]), TokenKind::visual);
                    }
                }
            }
        }
    }
}

TEST(Rerank, StableSortAndTopOneMax) {
    Vocabulary vocab = small_vocab();
    ArDecoder model(tiny_cfg(vocab));
    std::vector<int64_t> text{1};
    GenConfig gen;
    gen.k = 4;
    gen.seed = 3;
    SampleSet set = generate(model, vocab, SeqFormat::masf, text, 3, 3, gen);

    // Identical scores: input order preserved (stable sort).
    SampleSet same = rerank(set, [](const MultimodalSequence&) { return 1.0; });
    for (size_t i = 0; i < set.samples.size(); ++i) {
        EXPECT_EQ(same.samples[i].seq.ids, set.samples[i].seq.ids);
    }

    // A by-construction scorer: count of audio tokens equal to audio id 0.
    auto scorer = [&](const MultimodalSequence& s) {
        double score = 0;
        for (size_t p = 0; p < s.size(); ++p) {
            if (s.modality_tag[p] == TokenKind::audio && s.ids[p] == vocab.audio_token(0)) score += 1;
        }
        return score;
    };
    SampleSet ranked = rerank(set, scorer);
    for (size_t i = 1; i < ranked.samples.size(); ++i) {
        EXPECT_GE(ranked.samples[0].score, ranked.samples[i].score);  // top-1 has max score
        EXPECT_GE(ranked.samples[i - 1].score, ranked.samples[i].score);
    }
}
