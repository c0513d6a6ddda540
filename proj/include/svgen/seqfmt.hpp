#pragma once

// Multimodal token vocabulary and the T-V-A / T-A-V / MASF sequence builders,
// parsers and attention-reachability analysis.

#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "svgen/tensor.hpp"

namespace svgen {

enum class SeqFormat { tva, tav, masf };
enum class TokenKind { text, visual, audio, special, pad };

inline const char* format_name(SeqFormat f) {
    switch (f) {
        case SeqFormat::tva: return "TVA";
        case SeqFormat::tav: return "TAV";
        default: return "MASF";
    }
}

inline SeqFormat format_from_name(const std::string& s) {
    if (s == "TVA" || s == "tva") return SeqFormat::tva;
    if (s == "TAV" || s == "tav") return SeqFormat::tav;
    if (s == "MASF" || s == "masf") return SeqFormat::masf;
    throw ValueError("unknown sequence format: " + s);
}

class ParseError : public ValueError {
public:
    ParseError(size_t position, const std::string& msg)
        : ValueError("parse error at position " + std::to_string(position) + ": " + msg),
          position_(position) {}
    size_t position() const { return position_; }

private:
    size_t position_;
};

// Disjoint id layout: text | visual | audio | [TXT] | {BOVi,EOVi,BOAi,EOAi}
// for i in 1..L | pad.
class Vocabulary {
public:
    Vocabulary() = default;
    Vocabulary(int64_t text_size, int64_t visual_size, int64_t audio_size, int64_t frames)
        : text_size_(text_size), visual_size_(visual_size), audio_size_(audio_size),
          frames_(frames) {
        if (text_size < 1 || visual_size < 1 || audio_size < 1 || frames < 1) {
            throw ValueError("Vocabulary: all ranges and the frame count must be positive");
        }
    }

    int64_t text_size() const { return text_size_; }
    int64_t visual_size() const { return visual_size_; }
    int64_t audio_size() const { return audio_size_; }
    int64_t frames() const { return frames_; }

    int64_t text_begin() const { return 0; }
    int64_t visual_begin() const { return text_size_; }
    int64_t audio_begin() const { return text_size_ + visual_size_; }
    int64_t special_begin() const { return text_size_ + visual_size_ + audio_size_; }
    int64_t size() const { return special_begin() + 1 + 4 * frames_ + 1; }

    int64_t txt() const { return special_begin(); }
    int64_t bov(int64_t i) const { return special_id(i, 0); }
    int64_t eov(int64_t i) const { return special_id(i, 1); }
    int64_t boa(int64_t i) const { return special_id(i, 2); }
    int64_t eoa(int64_t i) const { return special_id(i, 3); }
    int64_t pad() const { return size() - 1; }

    int64_t visual_token(int64_t raw) const {
        check_raw(raw, visual_size_, "visual");
        return visual_begin() + raw;
    }
    int64_t audio_token(int64_t raw) const {
        check_raw(raw, audio_size_, "audio");
        return audio_begin() + raw;
    }
    int64_t visual_raw(int64_t id) const { return id - visual_begin(); }
    int64_t audio_raw(int64_t id) const { return id - audio_begin(); }

    TokenKind kind(int64_t id) const {
        if (id < 0 || id >= size()) {
            throw ValueError("Vocabulary: id " + std::to_string(id) + " outside vocabulary of " +
                             std::to_string(size()));
        }
        if (id < visual_begin()) return TokenKind::text;
        if (id < audio_begin()) return TokenKind::visual;
        if (id < special_begin()) return TokenKind::audio;
        if (id == pad()) return TokenKind::pad;
        return TokenKind::special;
    }

    // 1-based frame of a per-frame special; 0 for [TXT].
    int64_t frame_of_special(int64_t id) const {
        if (id == txt()) return 0;
        return (id - special_begin() - 1) / 4 + 1;
    }

private:
    int64_t special_id(int64_t frame, int64_t which) const {
        if (frame < 1 || frame > frames_) {
            throw ValueError("Vocabulary: frame " + std::to_string(frame) + " outside 1.." +
                             std::to_string(frames_));
        }
        return special_begin() + 1 + (frame - 1) * 4 + which;
    }

    void check_raw(int64_t raw, int64_t limit, const char* what) const {
        if (raw < 0 || raw >= limit) {
            throw ValueError("Vocabulary: raw " + std::string(what) + " token " +
                             std::to_string(raw) + " outside [0, " + std::to_string(limit) + ")");
        }
    }

    int64_t text_size_ = 1, visual_size_ = 1, audio_size_ = 1, frames_ = 1;
};

// ---------------------------------------------------------------------------
// token grids
// ---------------------------------------------------------------------------

struct TokenGrid {
    int64_t rows = 0, cols = 0;
    std::vector<int64_t> ids;  // row-major raw codebook indices
};

inline std::vector<int64_t> flatten_grid(const TokenGrid& g) {
    if (static_cast<int64_t>(g.ids.size()) != g.rows * g.cols) {
        throw ShapeError("flatten_grid: " + std::to_string(g.ids.size()) + " ids for a " +
                         std::to_string(g.rows) + "x" + std::to_string(g.cols) + " grid");
    }
    return g.ids;
}

inline TokenGrid unflatten_grid(std::span<const int64_t> flat, int64_t rows, int64_t cols) {
    if (static_cast<int64_t>(flat.size()) != rows * cols) {
        throw ShapeError("unflatten_grid: " + std::to_string(flat.size()) + " tokens do not fill " +
                         std::to_string(rows) + "x" + std::to_string(cols));
    }
    TokenGrid g;
    g.rows = rows;
    g.cols = cols;
    g.ids.assign(flat.begin(), flat.end());
    return g;
}

// ---------------------------------------------------------------------------
// sequences
// ---------------------------------------------------------------------------

struct MultimodalSequence {
    std::vector<int64_t> ids;
    std::vector<TokenKind> modality_tag;  // per position
    std::vector<int64_t> frame_tag;       // 1..L; 0 for text/[TXT]
    SeqFormat format = SeqFormat::masf;

    size_t size() const { return ids.size(); }
};

// One grammar slot: either a forced special token or a free position of a
// given modality. The single source of truth for building, generating and
// reachability analysis.
struct Slot {
    TokenKind kind;
    int64_t frame;      // 1..L for per-frame content, 0 for text/[TXT]
    int64_t forced_id;  // >= 0 when the grammar mandates this exact token
};

inline std::vector<Slot> sequence_template(const Vocabulary& vocab, SeqFormat format,
                                           int64_t text_len, int64_t v_per_frame,
                                           int64_t a_per_frame) {
    if (text_len < 0 || v_per_frame < 1 || a_per_frame < 1) {
        throw ValueError("sequence_template: bad section lengths");
    }
    int64_t L = vocab.frames();
    std::vector<Slot> slots;
    slots.push_back({TokenKind::special, 0, vocab.txt()});
    for (int64_t t = 0; t < text_len; ++t) slots.push_back({TokenKind::text, 0, -1});
    auto visual_frame = [&](int64_t i) {
        slots.push_back({TokenKind::special, i, vocab.bov(i)});
        for (int64_t p = 0; p < v_per_frame; ++p) slots.push_back({TokenKind::visual, i, -1});
        slots.push_back({TokenKind::special, i, vocab.eov(i)});
    };
    auto audio_frame = [&](int64_t i) {
        slots.push_back({TokenKind::special, i, vocab.boa(i)});
        for (int64_t p = 0; p < a_per_frame; ++p) slots.push_back({TokenKind::audio, i, -1});
        slots.push_back({TokenKind::special, i, vocab.eoa(i)});
    };
    switch (format) {
        case SeqFormat::tva:
            for (int64_t i = 1; i <= L; ++i) visual_frame(i);
            for (int64_t i = 1; i <= L; ++i) audio_frame(i);
            break;
        case SeqFormat::tav:
            for (int64_t i = 1; i <= L; ++i) audio_frame(i);
            for (int64_t i = 1; i <= L; ++i) visual_frame(i);
            break;
        case SeqFormat::masf:
            for (int64_t i = 1; i <= L; ++i) {
                visual_frame(i);
                audio_frame(i);
            }
            break;
    }
    return slots;
}

// Assembles [TXT],text,... per Eqs. 12-14 and tags every position.
inline MultimodalSequence build_sequence(const Vocabulary& vocab, SeqFormat format,
                                         std::span<const int64_t> text_ids,
                                         const std::vector<TokenGrid>& visual_grids,
                                         const std::vector<TokenGrid>& audio_grids,
                                         int64_t max_len) {
    int64_t L = vocab.frames();
    if (static_cast<int64_t>(visual_grids.size()) != L ||
        static_cast<int64_t>(audio_grids.size()) != L) {
        throw ValueError("build_sequence: need exactly " + std::to_string(L) +
                         " visual and audio grids, got " + std::to_string(visual_grids.size()) +
                         " and " + std::to_string(audio_grids.size()));
    }
    for (int64_t id : text_ids) {
        if (id < 0 || id >= vocab.text_size()) {
            throw ValueError("build_sequence: text id " + std::to_string(id) + " outside [0, " +
                             std::to_string(vocab.text_size()) + ")");
        }
    }
    int64_t v_per_frame = visual_grids[0].rows * visual_grids[0].cols;
    int64_t a_per_frame = audio_grids[0].rows * audio_grids[0].cols;
    for (const TokenGrid& g : visual_grids) {
        if (g.rows * g.cols != v_per_frame) {
            throw ShapeError("build_sequence: visual grids disagree on token count");
        }
    }
    for (const TokenGrid& g : audio_grids) {
        if (g.rows * g.cols != a_per_frame) {
            throw ShapeError("build_sequence: audio grids disagree on token count");
        }
    }
    int64_t total = 1 + static_cast<int64_t>(text_ids.size()) + L * (v_per_frame + a_per_frame + 4);
    if (total > max_len) {
        throw ValueError("build_sequence: sequence of length " + std::to_string(total) +
                         " exceeds max_len " + std::to_string(max_len) + " by " +
                         std::to_string(total - max_len));
    }

    MultimodalSequence seq;
    seq.format = format;
    seq.ids.reserve(static_cast<size_t>(total));
    auto push = [&](int64_t id, TokenKind kind, int64_t frame) {
        seq.ids.push_back(id);
        seq.modality_tag.push_back(kind);
        seq.frame_tag.push_back(frame);
    };
    size_t vi = 0, ai = 0;
    std::vector<std::vector<int64_t>> v_flat(static_cast<size_t>(L)), a_flat(static_cast<size_t>(L));
    for (int64_t i = 0; i < L; ++i) {
        v_flat[static_cast<size_t>(i)] = flatten_grid(visual_grids[static_cast<size_t>(i)]);
        a_flat[static_cast<size_t>(i)] = flatten_grid(audio_grids[static_cast<size_t>(i)]);
    }
    size_t ti = 0;
    for (const Slot& slot : sequence_template(vocab, format, static_cast<int64_t>(text_ids.size()),
                                              v_per_frame, a_per_frame)) {
        if (slot.forced_id >= 0) {
            push(slot.forced_id, TokenKind::special, slot.frame);
        } else if (slot.kind == TokenKind::text) {
            push(text_ids[ti++], TokenKind::text, 0);
        } else if (slot.kind == TokenKind::visual) {
            size_t f = static_cast<size_t>(slot.frame - 1);
            push(vocab.visual_token(v_flat[f][vi]), TokenKind::visual, slot.frame);
            if (++vi == v_flat[f].size()) vi = 0;
        } else {
            size_t f = static_cast<size_t>(slot.frame - 1);
            push(vocab.audio_token(a_flat[f][ai]), TokenKind::audio, slot.frame);
            if (++ai == a_flat[f].size()) ai = 0;
        }
    }
    return seq;
}

struct ParsedSequence {
    std::vector<int64_t> text_ids;
    std::vector<std::vector<int64_t>> visual;  // per frame, flat raw indices
    std::vector<std::vector<int64_t>> audio;
};

// Exact inverse of build_sequence; rejects malformed input with the position
// of the first violation.
inline ParsedSequence parse_sequence(const Vocabulary& vocab, SeqFormat format,
                                     std::span<const int64_t> ids) {
    size_t pos = 0;
    auto fail = [&](const std::string& msg) -> void { throw ParseError(pos, msg); };
    auto peek = [&]() -> int64_t {
        if (pos >= ids.size()) fail("unexpected end of sequence");
        return ids[pos];
    };
    auto expect_special = [&](int64_t id, const char* name) {
        if (peek() != id) {
            fail(std::string("expected ") + name + ", found id " + std::to_string(ids[pos]));
        }
        ++pos;
    };

    ParsedSequence out;
    int64_t L = vocab.frames();
    out.visual.resize(static_cast<size_t>(L));
    out.audio.resize(static_cast<size_t>(L));

    expect_special(vocab.txt(), "[TXT]");
    while (pos < ids.size() && vocab.kind(ids[pos]) == TokenKind::text) {
        out.text_ids.push_back(ids[pos++]);
    }

    auto visual_block = [&](int64_t i) {
        expect_special(vocab.bov(i), ("[BOV" + std::to_string(i) + "]").c_str());
        while (pos < ids.size() && vocab.kind(ids[pos]) == TokenKind::visual) {
            out.visual[static_cast<size_t>(i - 1)].push_back(vocab.visual_raw(ids[pos++]));
        }
        expect_special(vocab.eov(i), ("[EOV" + std::to_string(i) + "]").c_str());
    };
    auto audio_block = [&](int64_t i) {
        expect_special(vocab.boa(i), ("[BOA" + std::to_string(i) + "]").c_str());
        while (pos < ids.size() && vocab.kind(ids[pos]) == TokenKind::audio) {
            out.audio[static_cast<size_t>(i - 1)].push_back(vocab.audio_raw(ids[pos++]));
        }
        expect_special(vocab.eoa(i), ("[EOA" + std::to_string(i) + "]").c_str());
    };

    switch (format) {
        case SeqFormat::tva:
            for (int64_t i = 1; i <= L; ++i) visual_block(i);
            for (int64_t i = 1; i <= L; ++i) audio_block(i);
            break;
        case SeqFormat::tav:
            for (int64_t i = 1; i <= L; ++i) audio_block(i);
            for (int64_t i = 1; i <= L; ++i) visual_block(i);
            break;
        case SeqFormat::masf:
            for (int64_t i = 1; i <= L; ++i) {
                visual_block(i);
                audio_block(i);
            }
            break;
    }
    if (pos != ids.size()) fail("trailing tokens after the final frame");
    return out;
}

// Re-derives per-position tags from raw ids, validating the grammar.
inline MultimodalSequence annotate_sequence(const Vocabulary& vocab, SeqFormat format,
                                            std::span<const int64_t> ids) {
    parse_sequence(vocab, format, ids);  // throws on malformed input
    MultimodalSequence seq;
    seq.format = format;
    seq.ids.assign(ids.begin(), ids.end());
    seq.modality_tag.reserve(ids.size());
    seq.frame_tag.reserve(ids.size());
    for (int64_t id : ids) {
        TokenKind k = vocab.kind(id);
        seq.modality_tag.push_back(k);
        seq.frame_tag.push_back(k == TokenKind::special ? vocab.frame_of_special(id) : 0);
    }
    // Content tokens inherit the frame of their enclosing block.
    int64_t current_frame = 0;
    for (size_t p = 0; p < seq.ids.size(); ++p) {
        if (seq.modality_tag[p] == TokenKind::special) {
            current_frame = seq.frame_tag[p];
        } else if (seq.modality_tag[p] != TokenKind::text) {
            seq.frame_tag[p] = current_frame;
        }
    }
    return seq;
}

// ---------------------------------------------------------------------------
// reachability
// ---------------------------------------------------------------------------

// Unidirectional attention: a position attends exactly the strictly earlier
// positions. (During generation a token conditions on itself through the KV
// cache, but the label at position p is predicted from positions < p.)
inline bool reachability(SeqFormat /*format*/, int64_t from_pos, int64_t to_pos) {
    return from_pos >= 0 && from_pos < to_pos;
}

// Which (modality, frame) groups can attend which, given the block layout of
// a format. Group indices: 0 = text, 1..L = visual frame i, L+i = audio
// frame i. attends[x][y] means every token of group y precedes every token
// of group x, so all of x sees all of y under the causal mask.
struct CrossModalSummary {
    int64_t frames = 0;
    std::vector<std::vector<uint8_t>> attends;

    bool audio_attends_visual(int64_t audio_frame, int64_t visual_frame) const {
        return attends[static_cast<size_t>(frames + audio_frame)][static_cast<size_t>(visual_frame)] != 0;
    }
    bool visual_attends_audio(int64_t visual_frame, int64_t audio_frame) const {
        return attends[static_cast<size_t>(visual_frame)][static_cast<size_t>(frames + audio_frame)] != 0;
    }
    bool attends_text(bool audio, int64_t frame) const {
        return attends[static_cast<size_t>(audio ? frames + frame : frame)][0] != 0;
    }

    std::string to_string() const {
        std::ostringstream os;
        auto name = [&](size_t g) {
            if (g == 0) return std::string("text");
            if (g <= static_cast<size_t>(frames)) return "v" + std::to_string(g);
            return "a" + std::to_string(g - static_cast<size_t>(frames));
        };
        os << "group attends: ";
        for (size_t x = 0; x < attends.size(); ++x) {
            os << name(x) << "->{";
            bool first = true;
            for (size_t y = 0; y < attends.size(); ++y) {
                if (attends[x][y]) {
                    if (!first) os << ",";
                    os << name(y);
                    first = false;
                }
            }
            os << "} ";
        }
        return os.str();
    }
};

inline CrossModalSummary cross_modal_summary(const Vocabulary& vocab, SeqFormat format,
                                             int64_t text_len, int64_t v_per_frame,
                                             int64_t a_per_frame) {
    std::vector<Slot> slots = sequence_template(vocab, format, text_len, v_per_frame, a_per_frame);
    int64_t L = vocab.frames();
    size_t groups = static_cast<size_t>(2 * L + 1);
    std::vector<int64_t> min_pos(groups, INT64_MAX), max_pos(groups, INT64_MIN);
    for (size_t p = 0; p < slots.size(); ++p) {
        const Slot& s = slots[p];
        size_t g;
        if (s.kind == TokenKind::text || (s.kind == TokenKind::special && s.frame == 0)) {
            g = 0;
        } else if (s.kind == TokenKind::visual ||
                   (s.kind == TokenKind::special && s.forced_id >= 0 &&
                    (s.forced_id == vocab.bov(s.frame) || s.forced_id == vocab.eov(s.frame)))) {
            g = static_cast<size_t>(s.frame);
        } else {
            g = static_cast<size_t>(L + s.frame);
        }
        min_pos[g] = std::min(min_pos[g], static_cast<int64_t>(p));
        max_pos[g] = std::max(max_pos[g], static_cast<int64_t>(p));
    }
    CrossModalSummary sm;
    sm.frames = L;
    sm.attends.assign(groups, std::vector<uint8_t>(groups, 0));
    for (size_t x = 0; x < groups; ++x) {
        for (size_t y = 0; y < groups; ++y) {
            if (x == y) continue;
            sm.attends[x][y] = max_pos[y] < min_pos[x] ? 1 : 0;
        }
    }
    return sm;
}

// ---------------------------------------------------------------------------
// line serialization
// ---------------------------------------------------------------------------

inline void write_sequence(std::ostream& os, const MultimodalSequence& seq, int64_t frames) {
    os << "format=" << format_name(seq.format) << " L=" << frames << "\n";
    for (size_t i = 0; i < seq.ids.size(); ++i) {
        if (i) os << " ";
        os << seq.ids[i];
    }
    os << "\n";
}

inline MultimodalSequence read_sequence(std::istream& is, const Vocabulary& vocab) {
    std::string header;
    if (!std::getline(is, header)) throw ValueError("read_sequence: missing header");
    std::istringstream hs(header);
    std::string fmt_kv, l_kv;
    if (!(hs >> fmt_kv >> l_kv) || fmt_kv.rfind("format=", 0) != 0 || l_kv.rfind("L=", 0) != 0) {
        throw ValueError("read_sequence: bad header line: " + header);
    }
    SeqFormat format = format_from_name(fmt_kv.substr(7));
    int64_t frames = std::stoll(l_kv.substr(2));
    if (frames != vocab.frames()) {
        throw ValueError("read_sequence: header L=" + std::to_string(frames) +
                         " does not match vocabulary frames " + std::to_string(vocab.frames()));
    }
    std::string body;
    if (!std::getline(is, body)) throw ValueError("read_sequence: missing token line");
    std::istringstream bs(body);
    std::vector<int64_t> ids;
    int64_t id;
    while (bs >> id) ids.push_back(id);
    return annotate_sequence(vocab, format, ids);
}

}  // namespace svgen
