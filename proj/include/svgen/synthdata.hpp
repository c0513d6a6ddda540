#pragma once

// Deterministic synthetic paired audio-visual-text clips: a colored square
// moving over a textured background, a mel-like spectrogram carrying the
// class's spectral signature amplitude-modulated by the square's per-frame
// speed, and a per-class integer text template. Ground-truth similarity
// oracles make VAF/TNS behavior exactly predictable in tests.

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "svgen/rng.hpp"
#include "svgen/tensor.hpp"

namespace svgen {

struct DataConfig {
    int64_t classes = 8;
    int64_t H = 16, W = 16;  // frame size, 3 channels
    int64_t F = 16, T = 80;  // mel bins x mel width
    int64_t L = 5;           // frames per clip
    int64_t shape_size = 5;  // moving square side
    int64_t text_vocab = 32;

    int64_t frames_per_mel_column() const { return T / L; }

    void validate() const {
        if (classes < 2) throw ValueError("DataConfig: need at least 2 classes");
        if (T % L != 0) throw ValueError("DataConfig: T must be divisible by L");
        if (shape_size >= H || shape_size >= W) {
            throw ValueError("DataConfig: shape does not fit in frame");
        }
        if (text_vocab < classes + 24) {
            throw ValueError("DataConfig: text_vocab too small for class templates");
        }
    }
};

struct SceneSpec {
    int64_t class_id = 0;
    std::vector<std::pair<double, double>> motion;  // (dx, dy) per frame
    std::array<double, 3> palette{};                // shape color
    std::vector<double> spectral_signature;         // F entries
    bool corrupt_av = false;
    double corrupt_prob = 0.0;
};

struct SyntheticClip {
    std::vector<double> frames;  // L*3*H*W in [0,1]
    std::vector<double> mel;     // F*T in [0,1]
    std::vector<int64_t> text_ids;
    int64_t class_id = 0;
    bool corrupt_av = false;
};

namespace synth {

inline std::array<double, 3> class_palette(int64_t class_id, int64_t classes) {
    // Distinct hues around the wheel, components kept in [0.55, 1.0] so the
    // shape always stands out of the [0, 0.35] background noise.
    double hue = 6.0 * static_cast<double>(class_id) / static_cast<double>(classes);
    int sector = static_cast<int>(hue) % 6;
    double f = hue - std::floor(hue);
    double lo = 0.55, hi = 1.0;
    double up = lo + (hi - lo) * f, down = hi - (hi - lo) * f;
    switch (sector) {
        case 0: return {hi, up, lo};
        case 1: return {down, hi, lo};
        case 2: return {lo, hi, up};
        case 3: return {lo, down, hi};
        case 4: return {up, lo, hi};
        default: return {hi, lo, down};
    }
}

inline std::vector<double> class_signature(int64_t class_id, const DataConfig& cfg) {
    // One Gaussian bump per class, evenly spaced over the mel bins.
    std::vector<double> sig(static_cast<size_t>(cfg.F));
    double mu = (static_cast<double>(class_id) + 0.5) * static_cast<double>(cfg.F) /
                static_cast<double>(cfg.classes);
    double sigma = 0.5 * static_cast<double>(cfg.F) / static_cast<double>(cfg.classes);
    for (int64_t f = 0; f < cfg.F; ++f) {
        double d = (static_cast<double>(f) + 0.5 - mu) / sigma;
        sig[static_cast<size_t>(f)] = 0.15 + 0.75 * std::exp(-0.5 * d * d);
    }
    return sig;
}

inline std::vector<int64_t> text_template(int64_t class_id, const DataConfig& cfg) {
    int64_t k = cfg.classes;
    return {class_id, k + (5 * class_id + 1) % 11, k + 11 + (7 * class_id + 2) % 13};
}

}  // namespace synth

// Deterministic scene layout for (seed, class, corrupt flag).
inline SceneSpec make_spec(uint64_t seed, int64_t class_id, bool corrupt_av,
                           const DataConfig& cfg) {
    cfg.validate();
    if (class_id < 0 || class_id >= cfg.classes) {
        throw ValueError("make_spec: class_id " + std::to_string(class_id) + " out of range");
    }
    SceneSpec spec;
    spec.class_id = class_id;
    spec.palette = synth::class_palette(class_id, cfg.classes);
    spec.corrupt_av = corrupt_av;
    if (corrupt_av) {
        RngStream pick(derive_seed(seed, "corrupt-class"));
        int64_t other = (class_id + 1 + pick.randint(cfg.classes - 1)) % cfg.classes;
        spec.spectral_signature = synth::class_signature(other, cfg);
    } else {
        spec.spectral_signature = synth::class_signature(class_id, cfg);
    }

    // Draw per-frame motion until the cumulative path fits in frame.
    RngStream rng(derive_seed(seed, "motion"));
    int64_t span_x = cfg.W - cfg.shape_size, span_y = cfg.H - cfg.shape_size;
    for (int attempt = 0; attempt < 64; ++attempt) {
        spec.motion.clear();
        double cx = 0, cy = 0, min_x = 0, max_x = 0, min_y = 0, max_y = 0;
        for (int64_t i = 0; i < cfg.L; ++i) {
            double dx = static_cast<double>(rng.randint(5) - 2);  // {-2..2}
            double dy = static_cast<double>(rng.randint(5) - 2);
            spec.motion.emplace_back(dx, dy);
            if (i + 1 < cfg.L) {  // motion[i] moves frame i -> i+1
                cx += dx;
                cy += dy;
                min_x = std::min(min_x, cx);
                max_x = std::max(max_x, cx);
                min_y = std::min(min_y, cy);
                max_y = std::max(max_y, cy);
            }
        }
        if (max_x - min_x <= static_cast<double>(span_x) &&
            max_y - min_y <= static_cast<double>(span_y)) {
            return spec;
        }
    }
    throw ValueError("make_spec: could not place motion path inside the frame");
}

inline SyntheticClip make_clip(uint64_t seed, const SceneSpec& spec, const DataConfig& cfg) {
    cfg.validate();
    if (static_cast<int64_t>(spec.motion.size()) != cfg.L) {
        throw ValueError("make_clip: spec has " + std::to_string(spec.motion.size()) +
                         " motion entries for L=" + std::to_string(cfg.L));
    }
    SyntheticClip clip;
    clip.class_id = spec.class_id;
    clip.corrupt_av = spec.corrupt_av;
    clip.text_ids = synth::text_template(spec.class_id, cfg);

    const int64_t H = cfg.H, W = cfg.W, L = cfg.L, S = cfg.shape_size;

    // Static textured background, shared by all frames of the clip.
    RngStream bg_rng(derive_seed(seed, "background"));
    std::vector<double> background(static_cast<size_t>(H * W));
    for (double& v : background) v = bg_rng.uniform(0.0, 0.35);

    // Start position uniform over placements that keep the whole path inside.
    double min_cx = 0, max_cx = 0, min_cy = 0, max_cy = 0, cx = 0, cy = 0;
    for (int64_t i = 0; i + 1 < L; ++i) {
        cx += spec.motion[static_cast<size_t>(i)].first;
        cy += spec.motion[static_cast<size_t>(i)].second;
        min_cx = std::min(min_cx, cx);
        max_cx = std::max(max_cx, cx);
        min_cy = std::min(min_cy, cy);
        max_cy = std::max(max_cy, cy);
    }
    int64_t lo_x = static_cast<int64_t>(-min_cx);
    int64_t hi_x = static_cast<int64_t>(static_cast<double>(W - S) - max_cx);
    int64_t lo_y = static_cast<int64_t>(-min_cy);
    int64_t hi_y = static_cast<int64_t>(static_cast<double>(H - S) - max_cy);
    if (hi_x < lo_x || hi_y < lo_y) {
        throw ValueError("make_clip: motion path does not fit in frame");
    }
    RngStream pos_rng(derive_seed(seed, "start"));
    double px = static_cast<double>(lo_x + pos_rng.randint(hi_x - lo_x + 1));
    double py = static_cast<double>(lo_y + pos_rng.randint(hi_y - lo_y + 1));

    clip.frames.assign(static_cast<size_t>(L * 3 * H * W), 0.0);
    for (int64_t k = 0; k < L; ++k) {
        int64_t x0 = static_cast<int64_t>(std::llround(px));
        int64_t y0 = static_cast<int64_t>(std::llround(py));
        for (int64_t c = 0; c < 3; ++c) {
            double* plane = clip.frames.data() + (k * 3 + c) * H * W;
            for (int64_t y = 0; y < H; ++y)
                for (int64_t x = 0; x < W; ++x) plane[y * W + x] = background[static_cast<size_t>(y * W + x)];
            for (int64_t y = y0; y < y0 + S; ++y)
                for (int64_t x = x0; x < x0 + S; ++x)
                    plane[y * W + x] = spec.palette[static_cast<size_t>(c)];
        }
        px += spec.motion[static_cast<size_t>(k)].first;
        py += spec.motion[static_cast<size_t>(k)].second;
    }

    // Mel: class signature modulated by per-frame speed, light seeded noise.
    RngStream mel_rng(derive_seed(seed, "mel"));
    clip.mel.assign(static_cast<size_t>(cfg.F * cfg.T), 0.0);
    int64_t cols_per_frame = cfg.frames_per_mel_column();
    for (int64_t j = 0; j < cfg.T; ++j) {
        int64_t frame = j / cols_per_frame;
        auto [dx, dy] = spec.motion[static_cast<size_t>(frame)];
        double speed = std::hypot(dx, dy);
        double amp = 0.25 + 0.65 * std::min(1.0, speed / 3.0);
        for (int64_t f = 0; f < cfg.F; ++f) {
            double v = amp * spec.spectral_signature[static_cast<size_t>(f)] +
                       mel_rng.uniform(0.0, 0.02);
            clip.mel[static_cast<size_t>(f * cfg.T + j)] = std::min(1.0, std::max(0.0, v));
        }
    }
    return clip;
}

// ---------------------------------------------------------------------------
// ground-truth similarity oracles
// ---------------------------------------------------------------------------

struct OracleSimilarities {
    std::vector<std::vector<double>> text_sim;  // clip x clip, symmetric, unit diagonal
    std::vector<double> vaf_scores;             // per clip
};

inline constexpr double kVafRelated = 25.0;
inline constexpr double kVafUnrelated = 10.0;

// text_sim is 1.0 for same-class pairs and a deterministic value in [0, 0.5]
// otherwise; vaf straddles the 20.0 threshold by corruption flag.
inline OracleSimilarities oracle_similarities(const std::vector<SyntheticClip>& batch) {
    size_t n = batch.size();
    OracleSimilarities out;
    out.text_sim.assign(n, std::vector<double>(n, 0.0));
    out.vaf_scores.resize(n);
    for (size_t i = 0; i < n; ++i) {
        out.vaf_scores[i] = batch[i].corrupt_av ? kVafUnrelated : kVafRelated;
        for (size_t j = 0; j < n; ++j) {
            if (batch[i].class_id == batch[j].class_id) {
                out.text_sim[i][j] = 1.0;
            } else {
                int64_t a = std::min(batch[i].class_id, batch[j].class_id);
                int64_t b = std::max(batch[i].class_id, batch[j].class_id);
                uint64_t h = splitmix64(hash_combine(static_cast<uint64_t>(a) + 1,
                                                     static_cast<uint64_t>(b) + 1));
                out.text_sim[i][j] = 0.5 * static_cast<double>(h >> 11) * 0x1.0p-53;
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// dataset splits
// ---------------------------------------------------------------------------

struct ManifestEntry {
    uint64_t seed;
    int64_t class_id;
    bool corrupt_av;
};

struct DatasetSplit {
    DataConfig config;
    std::vector<ManifestEntry> train;
    std::vector<ManifestEntry> test;
};

namespace synth {
inline std::vector<ManifestEntry> make_manifest(uint64_t seed, const char* tag, int64_t n,
                                                double corrupt_prob, const DataConfig& cfg) {
    std::vector<ManifestEntry> entries(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        entries[static_cast<size_t>(i)].seed = derive_seed(seed, tag, static_cast<uint64_t>(i));
        entries[static_cast<size_t>(i)].class_id = i % cfg.classes;  // exactly uniform
        entries[static_cast<size_t>(i)].corrupt_av = false;
    }
    RngStream rng(derive_seed(seed, tag, 0xc0ffee));
    rng.shuffle(entries);
    int64_t n_corrupt = static_cast<int64_t>(std::llround(corrupt_prob * static_cast<double>(n)));
    for (int64_t i = 0; i < n_corrupt && i < n; ++i) entries[static_cast<size_t>(i)].corrupt_av = true;
    rng.shuffle(entries);
    return entries;
}
}  // namespace synth

inline DatasetSplit make_split(uint64_t seed, int64_t n_train, int64_t n_test,
                               double corrupt_prob, const DataConfig& cfg) {
    cfg.validate();
    DatasetSplit split;
    split.config = cfg;
    split.train = synth::make_manifest(seed, "train", n_train, corrupt_prob, cfg);
    split.test = synth::make_manifest(seed, "test", n_test, corrupt_prob, cfg);
    std::vector<uint64_t> all;
    all.reserve(split.train.size() + split.test.size());
    for (const auto& e : split.train) all.push_back(e.seed);
    for (const auto& e : split.test) all.push_back(e.seed);
    std::sort(all.begin(), all.end());
    if (std::adjacent_find(all.begin(), all.end()) != all.end()) {
        throw ValueError("make_split: overlapping clip seeds between splits");
    }
    return split;
}

inline SyntheticClip clip_from_entry(const ManifestEntry& e, const DataConfig& cfg) {
    return make_clip(e.seed, make_spec(e.seed, e.class_id, e.corrupt_av, cfg), cfg);
}

// ---------------------------------------------------------------------------
// manifest serialization (line-based text)
// ---------------------------------------------------------------------------

inline void save_manifest(std::ostream& os, const DatasetSplit& split) {
    const DataConfig& c = split.config;
    os << "svgen-manifest v1\n";
    os << "classes=" << c.classes << " H=" << c.H << " W=" << c.W << " F=" << c.F << " T=" << c.T
       << " L=" << c.L << " shape=" << c.shape_size << " text_vocab=" << c.text_vocab << "\n";
    for (const auto* part : {&split.train, &split.test}) {
        os << (part == &split.train ? "train " : "test ") << part->size() << "\n";
        for (const ManifestEntry& e : *part) {
            os << e.seed << " " << e.class_id << " " << (e.corrupt_av ? 1 : 0) << "\n";
        }
    }
}

inline DatasetSplit load_manifest(std::istream& is) {
    DatasetSplit split;
    std::string line;
    if (!std::getline(is, line) || line != "svgen-manifest v1") {
        throw ValueError("load_manifest: bad header line");
    }
    if (!std::getline(is, line)) throw ValueError("load_manifest: missing config line");
    {
        std::istringstream ls(line);
        std::string kv;
        while (ls >> kv) {
            auto eq = kv.find('=');
            if (eq == std::string::npos) throw ValueError("load_manifest: bad config token " + kv);
            std::string key = kv.substr(0, eq);
            int64_t val = std::stoll(kv.substr(eq + 1));
            if (key == "classes") split.config.classes = val;
            else if (key == "H") split.config.H = val;
            else if (key == "W") split.config.W = val;
            else if (key == "F") split.config.F = val;
            else if (key == "T") split.config.T = val;
            else if (key == "L") split.config.L = val;
            else if (key == "shape") split.config.shape_size = val;
            else if (key == "text_vocab") split.config.text_vocab = val;
            else throw ValueError("load_manifest: unknown config key " + key);
        }
    }
    for (auto* part : {&split.train, &split.test}) {
        std::string tag;
        size_t n;
        if (!(is >> tag >> n)) throw ValueError("load_manifest: missing section header");
        if (tag != (part == &split.train ? "train" : "test")) {
            throw ValueError("load_manifest: unexpected section " + tag);
        }
        part->resize(n);
        for (size_t i = 0; i < n; ++i) {
            int corrupt;
            if (!(is >> (*part)[i].seed >> (*part)[i].class_id >> corrupt)) {
                throw ValueError("load_manifest: truncated entry list");
            }
            (*part)[i].corrupt_av = corrupt != 0;
        }
    }
    std::vector<uint64_t> all;
    for (const auto& e : split.train) all.push_back(e.seed);
    for (const auto& e : split.test) all.push_back(e.seed);
    std::sort(all.begin(), all.end());
    if (std::adjacent_find(all.begin(), all.end()) != all.end()) {
        throw ValueError("load_manifest: duplicate clip seeds");
    }
    return split;
}

}  // namespace svgen
