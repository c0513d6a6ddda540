#pragma once

// Run configuration: named presets, line-based `key = value` files under
// `[section]` headers, canonical serialization and a semantic hash that
// excludes output paths.

#include <cstdint>
#include <functional>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "svgen/argen.hpp"
#include "svgen/cam.hpp"
#include "svgen/codec.hpp"
#include "svgen/hcl.hpp"
#include "svgen/rng.hpp"
#include "svgen/synthdata.hpp"

namespace svgen {

struct TrainingConfig {
    int64_t steps = 600;
    int64_t batch_clips = 4;
    int64_t crop_frames = 2;     // phase-1 random crop length
    double phase2_frac = 0.1;    // trailing fraction fine-tuned on full L frames
    double adv_warmup_frac = 0.2;  // adversarial terms weighted 0 before this
    double lr_codec = 1e-3;
    double lr_disc = 1e-3;
    double lr_decoder = 3e-4;
    int64_t steps_ar = 400;
    int64_t batch_sequences = 2;
    uint64_t seed = 1;
    int64_t eval_interval = 100;
    int64_t eval_batch = 16;
    int64_t n_train = 64;
    int64_t n_test = 16;
    double corrupt_prob = 0.0;
    std::string out_dir = "runs";
    std::string run_id = "run0";
};

struct GenerateDefaults {
    int64_t class_id = 0;
    int64_t k = 4;
    double temperature = 1.0;
    int64_t top_k = 16;
};

// Positive/negative selection knobs applied when building SelectionContexts.
struct SelectionConfig {
    double vaf_threshold = 20.0;
    double tns_threshold = 0.85;
    int64_t window = 2;
    bool vaf_enabled = true;  // false: VAF filter bypassed (ablation arm)
};

struct RunConfig {
    DataConfig data;
    CodecConfig codec;
    CamConfig cam;
    HCLConfig hcl;
    SelectionConfig selection;
    SeqFormat format = SeqFormat::masf;
    DecoderConfig decoder;
    TrainingConfig training;
    GenerateDefaults generate;

    int64_t vocab_size() const {
        return Vocabulary(data.text_vocab, codec.N_v, codec.N_a, data.L).size();
    }

    Vocabulary vocabulary() const {
        return Vocabulary(data.text_vocab, codec.N_v, codec.N_a, data.L);
    }

    // Ties derived fields together and validates every section. Model init
    // seeds derive from the training seed so one seed drives the whole run.
    void finalize() {
        codec.H = data.H;
        codec.W = data.W;
        codec.F = data.F;
        codec.T = data.T;
        codec.L = data.L;
        cam.d_v = codec.d_v;
        cam.d_a = codec.d_a;
        decoder.vocab_size = vocab_size();
        codec.init_seed = derive_seed(training.seed, "init-codec");
        cam.init_seed = derive_seed(training.seed, "init-cam");
        decoder.init_seed = derive_seed(training.seed, "init-decoder");
        validate();
    }

    void validate() const {
        data.validate();
        codec.validate();
        hcl.validate();
        decoder.validate();
        if (training.steps < 1 || training.steps_ar < 1) {
            throw ValueError("RunConfig: step counts must be positive");
        }
        if (training.batch_clips < 2) {
            throw ValueError("RunConfig: contrastive batches need at least 2 clips");
        }
        if (training.crop_frames < 1 || training.crop_frames > data.L) {
            throw ValueError("RunConfig: crop_frames must be in [1, L]");
        }
        if (training.eval_batch < 2 || training.eval_batch > training.n_test) {
            throw ValueError("RunConfig: eval_batch must be in [2, n_test]");
        }
        if (cam.d < 1) throw ValueError("RunConfig: cam dim must be positive");
        if (selection.window < 1) throw ValueError("RunConfig: window must be >= 1");
    }

    static RunConfig desk() {
        RunConfig c;
        c.finalize();
        return c;
    }

    // Shape-level mirror of the paper configuration; validates but is far too
    // large to train here.
    static RunConfig paper_scale() {
        RunConfig c;
        c.data.H = 128;
        c.data.W = 128;
        c.data.F = 80;
        c.data.T = 800;
        c.data.L = 10;
        c.data.text_vocab = 120;
        c.data.shape_size = 24;
        c.codec = CodecConfig::paper_scale();
        c.cam.d = 256;
        c.decoder = DecoderConfig::paper_scale(0);  // vocab filled by finalize
        c.training.eval_batch = 16;
        c.finalize();
        return c;
    }
};

// ---------------------------------------------------------------------------
// field table: one row per key drives parsing, dumping and hashing
// ---------------------------------------------------------------------------

namespace config_detail {

inline int64_t to_int(const std::string& v) {
    size_t used = 0;
    int64_t out = std::stoll(v, &used);
    if (used != v.size()) throw ValueError("config: bad integer '" + v + "'");
    return out;
}

inline double to_double(const std::string& v) {
    size_t used = 0;
    double out = std::stod(v, &used);
    if (used != v.size()) throw ValueError("config: bad number '" + v + "'");
    return out;
}

inline uint64_t to_u64(const std::string& v) {
    size_t used = 0;
    uint64_t out = std::stoull(v, &used);
    if (used != v.size()) throw ValueError("config: bad seed '" + v + "'");
    return out;
}

inline std::vector<int64_t> to_ints(const std::string& v) {
    std::vector<int64_t> out;
    std::string token;
    std::istringstream is(v);
    while (std::getline(is, token, ',')) out.push_back(to_int(token));
    if (out.empty()) throw ValueError("config: empty list");
    return out;
}

inline std::string from_ints(const std::vector<int64_t>& v) {
    std::ostringstream os;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) os << ",";
        os << v[i];
    }
    return os.str();
}

inline std::string fmt_double(double d) {
    char buf[40];
    snprintf(buf, sizeof(buf), "%.17g", d);
    return buf;
}

struct Field {
    std::string section;
    std::string key;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
    bool hashed = true;  // output paths are excluded from the semantic hash
};

inline const std::vector<Field>& fields() {
    static const std::vector<Field> table = [] {
        std::vector<Field> f;
        auto I = [&](const char* sec, const char* key, auto member_ptr_get, auto member_ptr_set,
                     bool hashed = true) {
            f.push_back({sec, key,
                         [member_ptr_set](RunConfig& c, const std::string& v) { member_ptr_set(c, v); },
                         [member_ptr_get](const RunConfig& c) { return member_ptr_get(c); }, hashed});
        };
        auto int_field = [&](const char* sec, const char* key, auto ref) {
            I(sec, key, [ref](const RunConfig& c) { return std::to_string(ref(const_cast<RunConfig&>(c))); },
              [ref](RunConfig& c, const std::string& v) { ref(c) = to_int(v); });
        };
        auto dbl_field = [&](const char* sec, const char* key, auto ref) {
            I(sec, key, [ref](const RunConfig& c) { return fmt_double(ref(const_cast<RunConfig&>(c))); },
              [ref](RunConfig& c, const std::string& v) { ref(c) = to_double(v); });
        };
        auto str_field = [&](const char* sec, const char* key, auto ref, bool hashed = true) {
            I(sec, key, [ref](const RunConfig& c) { return ref(const_cast<RunConfig&>(c)); },
              [ref](RunConfig& c, const std::string& v) { ref(c) = v; }, hashed);
        };

        int_field("data", "classes", [](RunConfig& c) -> int64_t& { return c.data.classes; });
        int_field("data", "H", [](RunConfig& c) -> int64_t& { return c.data.H; });
        int_field("data", "W", [](RunConfig& c) -> int64_t& { return c.data.W; });
        int_field("data", "F", [](RunConfig& c) -> int64_t& { return c.data.F; });
        int_field("data", "T", [](RunConfig& c) -> int64_t& { return c.data.T; });
        int_field("data", "L", [](RunConfig& c) -> int64_t& { return c.data.L; });
        int_field("data", "shape_size", [](RunConfig& c) -> int64_t& { return c.data.shape_size; });
        int_field("data", "text_vocab", [](RunConfig& c) -> int64_t& { return c.data.text_vocab; });

        int_field("codec", "ds_v", [](RunConfig& c) -> int64_t& { return c.codec.ds_v; });
        int_field("codec", "ds_a", [](RunConfig& c) -> int64_t& { return c.codec.ds_a; });
        int_field("codec", "d_v", [](RunConfig& c) -> int64_t& { return c.codec.d_v; });
        int_field("codec", "d_a", [](RunConfig& c) -> int64_t& { return c.codec.d_a; });
        int_field("codec", "N_v", [](RunConfig& c) -> int64_t& { return c.codec.N_v; });
        int_field("codec", "N_a", [](RunConfig& c) -> int64_t& { return c.codec.N_a; });
        int_field("codec", "res_blocks", [](RunConfig& c) -> int64_t& { return c.codec.res_blocks; });
        int_field("codec", "attn_layers", [](RunConfig& c) -> int64_t& { return c.codec.attn_layers; });
        int_field("codec", "groups", [](RunConfig& c) -> int64_t& { return c.codec.groups; });
        dbl_field("codec", "beta", [](RunConfig& c) -> double& { return c.codec.beta; });
        dbl_field("codec", "alpha", [](RunConfig& c) -> double& { return c.codec.alpha; });
        I("codec", "channels_v",
          [](const RunConfig& c) { return from_ints(c.codec.channels_v); },
          [](RunConfig& c, const std::string& v) { c.codec.channels_v = to_ints(v); });
        I("codec", "channels_a",
          [](const RunConfig& c) { return from_ints(c.codec.channels_a); },
          [](RunConfig& c, const std::string& v) { c.codec.channels_a = to_ints(v); });
        I("codec", "disc_channels",
          [](const RunConfig& c) { return from_ints(c.codec.disc_channels); },
          [](RunConfig& c, const std::string& v) { c.codec.disc_channels = to_ints(v); });
        I("codec", "update",
          [](const RunConfig& c) {
              return std::string(c.codec.update == CodebookUpdate::ema ? "ema" : "loss");
          },
          [](RunConfig& c, const std::string& v) {
              if (v == "ema") c.codec.update = CodebookUpdate::ema;
              else if (v == "loss") c.codec.update = CodebookUpdate::loss;
              else throw ValueError("config: codec.update must be ema or loss");
          });

        int_field("cam", "d", [](RunConfig& c) -> int64_t& { return c.cam.d; });
        int_field("cam", "groups", [](RunConfig& c) -> int64_t& { return c.cam.groups; });
        I("cam", "unit_norm",
          [](const RunConfig& c) { return std::string(c.cam.unit_norm ? "true" : "false"); },
          [](RunConfig& c, const std::string& v) {
              if (v == "true") c.cam.unit_norm = true;
              else if (v == "false") c.cam.unit_norm = false;
              else throw ValueError("config: cam.unit_norm must be true or false");
          });

        dbl_field("hcl", "tau", [](RunConfig& c) -> double& { return c.hcl.tau; });
        dbl_field("hcl", "vaf_threshold",
                  [](RunConfig& c) -> double& { return c.selection.vaf_threshold; });
        dbl_field("hcl", "tns_threshold",
                  [](RunConfig& c) -> double& { return c.selection.tns_threshold; });
        int_field("hcl", "window", [](RunConfig& c) -> int64_t& { return c.selection.window; });
        I("hcl", "vaf_enabled",
          [](const RunConfig& c) { return std::string(c.selection.vaf_enabled ? "true" : "false"); },
          [](RunConfig& c, const std::string& v) {
              if (v == "true") c.selection.vaf_enabled = true;
              else if (v == "false") c.selection.vaf_enabled = false;
              else throw ValueError("config: hcl.vaf_enabled must be true or false");
          });
        I("hcl", "variant",
          [](const RunConfig& c) {
              return std::string(c.hcl.variant == HclVariant::modality_split ? "modality_split"
                                                                             : "modality_gathered");
          },
          [](RunConfig& c, const std::string& v) {
              if (v == "modality_split") c.hcl.variant = HclVariant::modality_split;
              else if (v == "modality_gathered") c.hcl.variant = HclVariant::modality_gathered;
              else throw ValueError("config: hcl.variant must be modality_split or modality_gathered");
          });
        I("hcl", "infonce_denominator",
          [](const RunConfig& c) {
              return std::string(c.hcl.infonce_denominator ? "true" : "false");
          },
          [](RunConfig& c, const std::string& v) {
              if (v == "true") c.hcl.infonce_denominator = true;
              else if (v == "false") c.hcl.infonce_denominator = false;
              else throw ValueError("config: hcl.infonce_denominator must be true or false");
          });

        I("decoder", "format", [](const RunConfig& c) { return std::string(format_name(c.format)); },
          [](RunConfig& c, const std::string& v) { c.format = format_from_name(v); });
        int_field("decoder", "layers", [](RunConfig& c) -> int64_t& { return c.decoder.layers; });
        int_field("decoder", "heads", [](RunConfig& c) -> int64_t& { return c.decoder.heads; });
        int_field("decoder", "model_dim", [](RunConfig& c) -> int64_t& { return c.decoder.model_dim; });
        int_field("decoder", "max_len", [](RunConfig& c) -> int64_t& { return c.decoder.max_len; });
        dbl_field("decoder", "gamma_t", [](RunConfig& c) -> double& { return c.decoder.gamma_t; });
        dbl_field("decoder", "gamma_v", [](RunConfig& c) -> double& { return c.decoder.gamma_v; });
        dbl_field("decoder", "gamma_a", [](RunConfig& c) -> double& { return c.decoder.gamma_a; });

        int_field("training", "steps", [](RunConfig& c) -> int64_t& { return c.training.steps; });
        int_field("training", "batch_clips", [](RunConfig& c) -> int64_t& { return c.training.batch_clips; });
        int_field("training", "crop_frames", [](RunConfig& c) -> int64_t& { return c.training.crop_frames; });
        dbl_field("training", "phase2_frac", [](RunConfig& c) -> double& { return c.training.phase2_frac; });
        dbl_field("training", "adv_warmup_frac",
                  [](RunConfig& c) -> double& { return c.training.adv_warmup_frac; });
        dbl_field("training", "lr_codec", [](RunConfig& c) -> double& { return c.training.lr_codec; });
        dbl_field("training", "lr_disc", [](RunConfig& c) -> double& { return c.training.lr_disc; });
        dbl_field("training", "lr_decoder", [](RunConfig& c) -> double& { return c.training.lr_decoder; });
        int_field("training", "steps_ar", [](RunConfig& c) -> int64_t& { return c.training.steps_ar; });
        int_field("training", "batch_sequences",
                  [](RunConfig& c) -> int64_t& { return c.training.batch_sequences; });
        I("training", "seed",
          [](const RunConfig& c) { return std::to_string(c.training.seed); },
          [](RunConfig& c, const std::string& v) { c.training.seed = to_u64(v); });
        int_field("training", "eval_interval",
                  [](RunConfig& c) -> int64_t& { return c.training.eval_interval; });
        int_field("training", "eval_batch", [](RunConfig& c) -> int64_t& { return c.training.eval_batch; });
        int_field("training", "n_train", [](RunConfig& c) -> int64_t& { return c.training.n_train; });
        int_field("training", "n_test", [](RunConfig& c) -> int64_t& { return c.training.n_test; });
        dbl_field("training", "corrupt_prob", [](RunConfig& c) -> double& { return c.training.corrupt_prob; });
        str_field("training", "out_dir", [](RunConfig& c) -> std::string& { return c.training.out_dir; },
                  /*hashed=*/false);
        str_field("training", "run_id", [](RunConfig& c) -> std::string& { return c.training.run_id; },
                  /*hashed=*/false);

        int_field("generate", "class_id", [](RunConfig& c) -> int64_t& { return c.generate.class_id; });
        int_field("generate", "k", [](RunConfig& c) -> int64_t& { return c.generate.k; });
        dbl_field("generate", "temperature", [](RunConfig& c) -> double& { return c.generate.temperature; });
        int_field("generate", "top_k", [](RunConfig& c) -> int64_t& { return c.generate.top_k; });
        return f;
    }();
    return table;
}

}  // namespace config_detail

// Canonical dump in table order; `hashed_only` drops output paths.
inline std::string dump_config(const RunConfig& cfg, bool hashed_only = false) {
    std::ostringstream os;
    std::string section;
    for (const auto& f : config_detail::fields()) {
        if (hashed_only && !f.hashed) continue;
        if (f.section != section) {
            section = f.section;
            os << "[" << section << "]\n";
        }
        os << f.key << " = " << f.get(cfg) << "\n";
    }
    return os.str();
}

inline uint64_t config_hash(const RunConfig& cfg) { return fnv1a64(dump_config(cfg, true)); }

// `preset = desk|paper-scale` under [run] rebases everything; later keys
// override. Unknown sections or keys are rejected.
inline RunConfig parse_config(std::istream& is) {
    RunConfig cfg = RunConfig::desk();
    std::string line, section;
    size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        auto hash_pos = line.find('#');
        if (hash_pos != std::string::npos) line = line.substr(0, hash_pos);
        auto trim = [](std::string s) {
            size_t b = s.find_first_not_of(" \t\r");
            if (b == std::string::npos) return std::string();
            size_t e = s.find_last_not_of(" \t\r");
            return s.substr(b, e - b + 1);
        };
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') {
                throw ValueError("config line " + std::to_string(line_no) + ": bad section header");
            }
            section = line.substr(1, line.size() - 2);
            continue;
        }
        auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ValueError("config line " + std::to_string(line_no) + ": expected key = value");
        }
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (section == "run" && key == "preset") {
            if (value == "desk") cfg = RunConfig::desk();
            else if (value == "paper-scale") cfg = RunConfig::paper_scale();
            else throw ValueError("config: unknown preset '" + value + "'");
            continue;
        }
        bool found = false;
        for (const auto& f : config_detail::fields()) {
            if (f.section == section && f.key == key) {
                f.set(cfg, value);
                found = true;
                break;
            }
        }
        if (!found) {
            throw ValueError("config line " + std::to_string(line_no) + ": unknown key " +
                             (section.empty() ? key : section + "." + key));
        }
    }
    cfg.finalize();
    return cfg;
}

}  // namespace svgen
