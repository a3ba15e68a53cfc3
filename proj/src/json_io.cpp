#include "avdg/json_io.hpp"

#include "avdg/errors.hpp"

namespace avdg {

using nlohmann::json;

void reject_unknown_keys(const json& j, std::initializer_list<const char*> allowed, const char* where) {
    if (!j.is_object()) throw ConfigError(std::string(where) + ": expected an object");
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok) throw ConfigError(std::string(where) + ": unknown key '" + key + "'");
    }
}

void to_json(json& j, const VocabRange& r) { j = json{{"begin", r.begin}, {"size", r.size}}; }

void from_json(const json& j, VocabRange& r) {
    reject_unknown_keys(j, {"begin", "size"}, "vocab range");
    read_opt(j, "begin", r.begin, "vocab range");
    read_opt(j, "size", r.size, "vocab range");
}

void to_json(json& j, const GenConfig& c) {
    j = json{{"n_examples", c.n_examples},
             {"video_vocab", c.video_vocab},
             {"audio_vocab", c.audio_vocab},
             {"history_vocab", c.history_vocab},
             {"question_vocab", c.question_vocab},
             {"word_vocab", c.word_vocab},
             {"number_vocab", c.number_vocab},
             {"video_len", c.video_len},
             {"audio_len", c.audio_len},
             {"history_len", c.history_len},
             {"question_len", c.question_len},
             {"n_templates", c.n_templates},
             {"answer_min_words", c.answer_min_words},
             {"answer_max_words", c.answer_max_words},
             {"anchor_rate", c.anchor_rate},
             {"noise_rate", c.noise_rate},
             {"kind_weights", c.kind_weights},
             {"source_weights", c.source_weights},
             {"seed", c.seed}};
}

void from_json(const json& j, GenConfig& c) {
    constexpr const char* where = "gen";
    reject_unknown_keys(j,
                        {"n_examples", "video_vocab", "audio_vocab", "history_vocab", "question_vocab", "word_vocab",
                         "number_vocab", "video_len", "audio_len", "history_len", "question_len", "n_templates",
                         "answer_min_words", "answer_max_words", "anchor_rate", "noise_rate", "kind_weights",
                         "source_weights", "seed"},
                        where);
    read_opt(j, "n_examples", c.n_examples, where);
    read_opt(j, "video_vocab", c.video_vocab, where);
    read_opt(j, "audio_vocab", c.audio_vocab, where);
    read_opt(j, "history_vocab", c.history_vocab, where);
    read_opt(j, "question_vocab", c.question_vocab, where);
    read_opt(j, "word_vocab", c.word_vocab, where);
    read_opt(j, "number_vocab", c.number_vocab, where);
    read_opt(j, "video_len", c.video_len, where);
    read_opt(j, "audio_len", c.audio_len, where);
    read_opt(j, "history_len", c.history_len, where);
    read_opt(j, "question_len", c.question_len, where);
    read_opt(j, "n_templates", c.n_templates, where);
    read_opt(j, "answer_min_words", c.answer_min_words, where);
    read_opt(j, "answer_max_words", c.answer_max_words, where);
    read_opt(j, "anchor_rate", c.anchor_rate, where);
    read_opt(j, "noise_rate", c.noise_rate, where);
    read_opt(j, "kind_weights", c.kind_weights, where);
    read_opt(j, "source_weights", c.source_weights, where);
    read_opt(j, "seed", c.seed, where);
}

void to_json(json& j, const ModelConfig& c) {
    j = json{{"backbone", backbone_name(c.backbone)},
             {"vocab_size", c.vocab_size},
             {"d_model", c.d_model},
             {"n_layers", c.n_layers},
             {"n_heads", c.n_heads},
             {"max_len", c.max_len},
             {"dropout_rate", c.dropout_rate},
             {"seed", c.seed}};
}

void from_json(const json& j, ModelConfig& c) {
    constexpr const char* where = "model";
    reject_unknown_keys(j, {"backbone", "vocab_size", "d_model", "n_layers", "n_heads", "max_len", "dropout_rate", "seed"},
                        where);
    std::string backbone = backbone_name(c.backbone);
    read_opt(j, "backbone", backbone, where);
    c.backbone = backbone_from_name(backbone);
    read_opt(j, "vocab_size", c.vocab_size, where);
    read_opt(j, "d_model", c.d_model, where);
    read_opt(j, "n_layers", c.n_layers, where);
    read_opt(j, "n_heads", c.n_heads, where);
    read_opt(j, "max_len", c.max_len, where);
    read_opt(j, "dropout_rate", c.dropout_rate, where);
    read_opt(j, "seed", c.seed, where);
}

void to_json(json& j, const OptimizerConfig& c) {
    j = json{{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size}, {"epochs", c.epochs},
             {"clip_norm", c.clip_norm},         {"weight_decay", c.weight_decay}, {"beta1", c.beta1},
             {"beta2", c.beta2},                 {"eps", c.eps},               {"warmup_steps", c.warmup_steps},
             {"seed", c.seed}};
}

void from_json(const json& j, OptimizerConfig& c) {
    constexpr const char* where = "optimizer";
    reject_unknown_keys(j,
                        {"learning_rate", "batch_size", "epochs", "clip_norm", "weight_decay", "beta1", "beta2", "eps",
                         "warmup_steps", "seed"},
                        where);
    read_opt(j, "learning_rate", c.learning_rate, where);
    read_opt(j, "batch_size", c.batch_size, where);
    read_opt(j, "epochs", c.epochs, where);
    read_opt(j, "clip_norm", c.clip_norm, where);
    read_opt(j, "weight_decay", c.weight_decay, where);
    read_opt(j, "beta1", c.beta1, where);
    read_opt(j, "beta2", c.beta2, where);
    read_opt(j, "eps", c.eps, where);
    read_opt(j, "warmup_steps", c.warmup_steps, where);
    read_opt(j, "seed", c.seed, where);
}

void to_json(json& j, const BeamConfig& c) {
    j = json{{"beam_size", c.beam_size},
             {"length_penalty_alpha", c.length_penalty_alpha},
             {"max_decode_len", c.max_decode_len}};
}

void from_json(const json& j, BeamConfig& c) {
    constexpr const char* where = "beam";
    reject_unknown_keys(j, {"beam_size", "length_penalty_alpha", "max_decode_len"}, where);
    read_opt(j, "beam_size", c.beam_size, where);
    read_opt(j, "length_penalty_alpha", c.length_penalty_alpha, where);
    read_opt(j, "max_decode_len", c.max_decode_len, where);
}

void to_json(json& j, const InputMask& m) { j = m.code(); }

void from_json(const json& j, InputMask& m) {
    if (!j.is_string()) throw ConfigError("input mask: expected a string such as \"VAHQ\" or \"Q\"");
    m = InputMask::from_code(j.get<std::string>());
}

}  // namespace avdg
