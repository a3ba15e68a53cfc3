#include "avdg/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "avdg/errors.hpp"
#include "avdg/json_io.hpp"

namespace avdg {

std::string backbone_name(BackboneKind kind) {
    return kind == BackboneKind::Transformer ? "transformer" : "recurrent";
}

BackboneKind backbone_from_name(const std::string& name) {
    if (name == "transformer") return BackboneKind::Transformer;
    if (name == "recurrent") return BackboneKind::Recurrent;
    throw ConfigError("unknown backbone '" + name + "' (expected transformer or recurrent)");
}

void ModelConfig::validate() const {
    std::vector<std::string> problems;
    if (vocab_size <= static_cast<std::size_t>(special::kCount)) {
        problems.push_back("vocab_size must exceed the " + std::to_string(special::kCount) + " special tokens");
    }
    if (d_model == 0) problems.push_back("d_model must be positive");
    if (n_layers == 0) problems.push_back("n_layers must be positive");
    if (backbone == BackboneKind::Transformer) {
        if (n_heads == 0) problems.push_back("n_heads must be positive");
        else if (d_model % n_heads != 0) problems.push_back("d_model must be divisible by n_heads");
    } else if (n_layers != 1) {
        problems.push_back("the recurrent backbone has exactly one layer");
    }
    if (max_len < 4) problems.push_back("max_len must be at least 4");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) problems.push_back("dropout_rate must be in [0, 1)");
    if (!problems.empty()) {
        std::string msg = "invalid ModelConfig:";
        for (const auto& p : problems) msg += "\n  - " + p;
        throw ConfigError(msg);
    }
}

std::string InputMask::code() const {
    std::string s;
    if (include_video) s += 'V';
    if (include_audio) s += 'A';
    if (include_history) s += 'H';
    if (include_question) s += 'Q';
    return s;
}

InputMask InputMask::from_code(const std::string& code) {
    InputMask m{false, false, false, false};
    for (char c : code) {
        switch (c) {
            case 'V': m.include_video = true; break;
            case 'A': m.include_audio = true; break;
            case 'H': m.include_history = true; break;
            case 'Q': m.include_question = true; break;
            default: throw ConfigError("input mask '" + code + "': unknown letter '" + std::string(1, c) + "'");
        }
    }
    if (!m.include_question) throw ConfigError("input mask '" + code + "' must include the question (Q)");
    return m;
}

std::vector<std::pair<std::string, Shape>> param_shapes(const ModelConfig& c) {
    c.validate();
    const std::size_t d = c.d_model, v = c.vocab_size;
    std::vector<std::pair<std::string, Shape>> out;
    out.emplace_back("embed", Shape{v, d});
    out.emplace_back("out.w", Shape{d, v});
    out.emplace_back("out.b", Shape{1, v});

    if (c.backbone == BackboneKind::Recurrent) {
        for (const char* side : {"enc", "dec"}) {
            const std::string p = std::string(side) + ".gru.";
            for (const char* g : {"z", "r", "n"}) {
                out.emplace_back(p + "w" + g, Shape{d, d});
                out.emplace_back(p + "u" + g, Shape{d, d});
                out.emplace_back(p + "b" + g, Shape{1, d});
            }
        }
        out.emplace_back("attn.c", Shape{2 * d, d});
        return out;
    }

    const std::size_t dh = c.head_dim(), ff = c.ffn_dim();
    auto attn = [&](const std::string& p) {
        for (std::size_t h = 0; h < c.n_heads; ++h) {
            const std::string hs = std::to_string(h);
            out.emplace_back(p + ".q." + hs, Shape{d, dh});
            out.emplace_back(p + ".k." + hs, Shape{d, dh});
            out.emplace_back(p + ".v." + hs, Shape{d, dh});
        }
        out.emplace_back(p + ".o", Shape{d, d});
    };
    auto ln = [&](const std::string& p) {
        out.emplace_back(p + ".g", Shape{1, d});
        out.emplace_back(p + ".b", Shape{1, d});
    };
    auto ffn = [&](const std::string& p) {
        out.emplace_back(p + ".w1", Shape{d, ff});
        out.emplace_back(p + ".b1", Shape{1, ff});
        out.emplace_back(p + ".w2", Shape{ff, d});
        out.emplace_back(p + ".b2", Shape{1, d});
    };
    out.emplace_back("enc.pos", Shape{c.max_len, d});
    out.emplace_back("dec.pos", Shape{c.max_len, d});
    for (std::size_t l = 0; l < c.n_layers; ++l) {
        const std::string p = "enc." + std::to_string(l);
        ln(p + ".ln1");
        attn(p + ".attn");
        ln(p + ".ln2");
        ffn(p + ".ffn");
    }
    ln("enc.ln");
    for (std::size_t l = 0; l < c.n_layers; ++l) {
        const std::string p = "dec." + std::to_string(l);
        ln(p + ".ln1");
        attn(p + ".self");
        ln(p + ".ln2");
        attn(p + ".cross");
        ln(p + ".ln3");
        ffn(p + ".ffn");
    }
    ln("dec.ln");
    return out;
}

namespace {

bool ends_with(const std::string& s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

bool is_bias(const std::string& name) {
    const auto dot = name.rfind('.');
    const std::string leaf = dot == std::string::npos ? name : name.substr(dot + 1);
    return leaf == "b" || leaf == "b1" || leaf == "b2" || leaf == "bz" || leaf == "br" || leaf == "bn";
}

}  // namespace

Parameters init_params(const ModelConfig& config) {
    Parameters params;
    for (auto& [name, shape] : param_shapes(config)) {
        Tensor t(shape, 0.0);
        if (ends_with(name, ".g")) {
            std::fill(t.data().begin(), t.data().end(), 1.0);
        } else if (!is_bias(name)) {
            const double fan_in = static_cast<double>(shape[0]);
            const double fan_out = static_cast<double>(shape[1]);
            double bound = std::sqrt(6.0 / (fan_in + fan_out));
            if (name == "out.w") bound *= 0.1;
            Rng rng(derive_seed(config.seed, name));
            for (double& x : t.data()) x = rng.uniform(-bound, bound);
        }
        params.emplace(name, std::move(t));
    }
    return params;
}

SerializedInput serialize_input(const VDGExample& ex, const InputMask& mask, const ModelConfig& config) {
    if (!mask.include_question) throw ContractViolation("input mask must include the question");
    auto check_vocab = [&](std::span<const Token> toks, const char* stream) {
        for (Token t : toks) {
            if (t < 0 || static_cast<std::size_t>(t) >= config.vocab_size) {
                throw ContractViolation(std::string(stream) + " token " + std::to_string(t) +
                                        " outside vocabulary of size " + std::to_string(config.vocab_size));
            }
        }
    };
    check_vocab(ex.video, "video");
    check_vocab(ex.audio, "audio");
    check_vocab(ex.history, "history");
    check_vocab(ex.question, "question");
    check_vocab(ex.answer, "answer");

    SerializedInput in;
    in.encoder.push_back(special::kBos);
    struct Part {
        Token sep;
        bool include;
        const std::vector<Token>* tokens;
        const char* name;
    };
    const Part parts[] = {{special::kSepVideo, mask.include_video, &ex.video, "video"},
                          {special::kSepAudio, mask.include_audio, &ex.audio, "audio"},
                          {special::kSepHistory, mask.include_history, &ex.history, "history"}};
    for (const Part& p : parts) {
        in.encoder.push_back(p.sep);
        if (p.include) in.encoder.insert(in.encoder.end(), p.tokens->begin(), p.tokens->end());
        else in.encoder.push_back(special::kNull);
        // +1 for the closing EOS.
        if (in.encoder.size() + 1 > config.max_len) {
            throw TruncationError(std::string(p.name) + " stream overflows max_len " + std::to_string(config.max_len),
                                  p.name);
        }
    }
    in.encoder.push_back(special::kEos);

    in.decoder_prefix.push_back(special::kSepQuestion);
    in.decoder_prefix.insert(in.decoder_prefix.end(), ex.question.begin(), ex.question.end());
    in.decoder_prefix.push_back(special::kSepAnswer);
    if (in.decoder_prefix.size() > config.max_len) {
        throw TruncationError("question overflows max_len " + std::to_string(config.max_len), "question");
    }
    if (!ex.answer.empty() && in.decoder_prefix.size() + ex.answer.size() - 1 > config.max_len) {
        throw TruncationError("answer overflows max_len " + std::to_string(config.max_len), "answer");
    }
    return in;
}

DeserializedKnowledge deserialize_encoder(std::span<const Token> enc) {
    if (enc.size() < 2 || enc.front() != special::kBos || enc.back() != special::kEos) {
        throw ContractViolation("encoder stream must be framed by BOS and EOS");
    }
    DeserializedKnowledge out;
    std::optional<std::vector<Token>>* current = nullptr;
    for (std::size_t i = 1; i + 1 < enc.size(); ++i) {
        const Token t = enc[i];
        if (t == special::kSepVideo || t == special::kSepAudio || t == special::kSepHistory) {
            current = t == special::kSepVideo ? &out.video : t == special::kSepAudio ? &out.audio : &out.history;
            current->emplace();
            continue;
        }
        if (!current) throw ContractViolation("token before the first separator");
        (*current)->push_back(t);
    }
    // A stream holding only [NULL] was masked.
    for (auto* s : {&out.video, &out.audio, &out.history}) {
        if (*s && (*s)->size() == 1 && (**s)[0] == special::kNull) s->reset();
    }
    return out;
}

BoundParams::BoundParams(Tape& tape, const Parameters& params, bool requires_grad) : tape_(&tape) {
    nodes_.reserve(params.size());
    for (const auto& [name, t] : params) {
        const NodeId id = tape.borrow(t, requires_grad);
        vars_.emplace(name, Var{&tape, id});
        nodes_.emplace_back(&t, id);
    }
}

BoundParams::BoundParams(Tape& tape, std::span<const std::string> names, std::span<const Var> vars) : tape_(&tape) {
    if (names.size() != vars.size()) throw ContractViolation("BoundParams: names and variables differ in count");
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (vars[i].tape != &tape) throw ContractViolation("BoundParams: variable '" + names[i] + "' is on another tape");
        vars_.emplace(names[i], vars[i]);
    }
}

Var BoundParams::operator()(const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw ContractViolation("missing parameter '" + name + "'");
    return it->second;
}

namespace {

Var constant(Tape& tape, Tensor t) { return {&tape, tape.constant(std::move(t))}; }

Var dropout(Var x, const Dropout& d) {
    if (!d.active()) return x;
    Tensor keep(x.shape());
    const double s = 1.0 / (1.0 - d.rate);
    for (double& k : keep.data()) k = d.rng->bernoulli(d.rate) ? 0.0 : s;
    return mul(x, constant(*x.tape, std::move(keep)));
}

std::vector<std::size_t> as_indices(std::span<const Token> toks) {
    return std::vector<std::size_t>(toks.begin(), toks.end());
}

std::vector<std::size_t> iota_indices(std::size_t n) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    return idx;
}

Var norm(const BoundParams& p, Var x, const std::string& name) { return layer_norm(x, p(name + ".g"), p(name + ".b")); }

Var attention(const BoundParams& p, const ModelConfig& c, const std::string& prefix, Var q_in, Var kv_in,
              const std::shared_ptr<const Tensor>& mask) {
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(c.head_dim()));
    std::vector<Var> heads;
    heads.reserve(c.n_heads);
    for (std::size_t h = 0; h < c.n_heads; ++h) {
        const std::string hs = std::to_string(h);
        const Var q = matmul(q_in, p(prefix + ".q." + hs));
        const Var k = matmul(kv_in, p(prefix + ".k." + hs));
        const Var v = matmul(kv_in, p(prefix + ".v." + hs));
        Var scores = scale(matmul(q, transpose(k)), inv_sqrt);
        if (mask) scores = additive_mask(scores, mask);
        heads.push_back(matmul(row_softmax(scores), v));
    }
    return matmul(concat(heads, 1), p(prefix + ".o"));
}

Var feed_forward(const BoundParams& p, const std::string& prefix, Var x) {
    const Var h = relu(add(matmul(x, p(prefix + ".w1")), p(prefix + ".b1")));
    return add(matmul(h, p(prefix + ".w2")), p(prefix + ".b2"));
}

std::shared_ptr<const Tensor> causal_mask(std::size_t n) {
    auto m = std::make_shared<Tensor>(Shape{n, n}, 0.0);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = r + 1; c < n; ++c) m->at(r, c) = -1e9;
    return m;
}

Var transformer_encode(const BoundParams& p, const ModelConfig& c, std::span<const Token> enc, const Dropout& drop) {
    Var x = add(gather_rows(p("embed"), as_indices(enc)), gather_rows(p("enc.pos"), iota_indices(enc.size())));
    x = dropout(x, drop);
    for (std::size_t l = 0; l < c.n_layers; ++l) {
        const std::string pre = "enc." + std::to_string(l);
        Var h = norm(p, x, pre + ".ln1");
        x = add(x, dropout(attention(p, c, pre + ".attn", h, h, nullptr), drop));
        h = norm(p, x, pre + ".ln2");
        x = add(x, dropout(feed_forward(p, pre + ".ffn", h), drop));
    }
    return norm(p, x, "enc.ln");
}

Var transformer_decode(const BoundParams& p, const ModelConfig& c, Var memory, std::span<const Token> dec,
                       std::vector<std::size_t> rows, const Dropout& drop) {
    Var y = add(gather_rows(p("embed"), as_indices(dec)), gather_rows(p("dec.pos"), iota_indices(dec.size())));
    y = dropout(y, drop);
    const auto mask = causal_mask(dec.size());
    for (std::size_t l = 0; l < c.n_layers; ++l) {
        const std::string pre = "dec." + std::to_string(l);
        Var h = norm(p, y, pre + ".ln1");
        y = add(y, dropout(attention(p, c, pre + ".self", h, h, mask), drop));
        h = norm(p, y, pre + ".ln2");
        y = add(y, dropout(attention(p, c, pre + ".cross", h, memory, nullptr), drop));
        h = norm(p, y, pre + ".ln3");
        y = add(y, dropout(feed_forward(p, pre + ".ffn", h), drop));
    }
    const Var out = gather_rows(norm(p, y, "dec.ln"), std::move(rows));
    return add(matmul(out, p("out.w")), p("out.b"));
}

struct GruInputs {
    Var z, r, n;
};

GruInputs gru_project(const BoundParams& p, const std::string& pre, Var x) {
    return {add(matmul(x, p(pre + "wz")), p(pre + "bz")), add(matmul(x, p(pre + "wr")), p(pre + "br")),
            add(matmul(x, p(pre + "wn")), p(pre + "bn"))};
}

Var gru_step(const BoundParams& p, const std::string& pre, const GruInputs& xs, std::size_t t, Var h) {
    const Var xz = gather_rows(xs.z, {t});
    const Var xr = gather_rows(xs.r, {t});
    const Var xn = gather_rows(xs.n, {t});
    const Var z = sigmoid(add(xz, matmul(h, p(pre + "uz"))));
    const Var r = sigmoid(add(xr, matmul(h, p(pre + "ur"))));
    const Var n = tanh(add(xn, mul(r, matmul(h, p(pre + "un")))));
    return add(n, mul(z, sub(h, n)));
}

Var recurrent_encode(const BoundParams& p, const ModelConfig& c, std::span<const Token> enc, const Dropout& drop) {
    const Var x = dropout(gather_rows(p("embed"), as_indices(enc)), drop);
    const GruInputs xs = gru_project(p, "enc.gru.", x);
    Var h = constant(p.tape(), Tensor(Shape{1, c.d_model}, 0.0));
    std::vector<Var> states;
    states.reserve(enc.size());
    for (std::size_t t = 0; t < enc.size(); ++t) {
        h = gru_step(p, "enc.gru.", xs, t, h);
        states.push_back(h);
    }
    return concat(states, 0);
}

Var recurrent_decode(const BoundParams& p, const ModelConfig&, Var memory, std::span<const Token> dec,
                     const std::vector<std::size_t>& rows, const Dropout& drop) {
    const std::size_t enc_len = memory.value().rows();
    const Var mem_t = transpose(memory);
    const Var x = dropout(gather_rows(p("embed"), as_indices(dec)), drop);
    const GruInputs xs = gru_project(p, "dec.gru.", x);
    Var h = gather_rows(memory, {enc_len - 1});
    std::vector<Var> outs;
    outs.reserve(rows.size());
    std::size_t next_row = 0;
    const std::size_t last = rows.back();
    for (std::size_t t = 0; t <= last; ++t) {
        h = gru_step(p, "dec.gru.", xs, t, h);
        if (next_row < rows.size() && rows[next_row] == t) {
            const Var attn = row_softmax(matmul(h, mem_t));
            const Var ctx = matmul(attn, memory);
            const Var both[] = {h, ctx};
            outs.push_back(dropout(matmul(concat(both, 1), p("attn.c")), drop));
            ++next_row;
        }
    }
    return add(matmul(concat(outs, 0), p("out.w")), p("out.b"));
}

Var encode(const BoundParams& p, const ModelConfig& c, std::span<const Token> enc, const Dropout& drop) {
    return c.backbone == BackboneKind::Transformer ? transformer_encode(p, c, enc, drop)
                                                   : recurrent_encode(p, c, enc, drop);
}

// Logits for the given decoder rows (ascending).
Var decode(const BoundParams& p, const ModelConfig& c, Var memory, std::span<const Token> dec,
           std::vector<std::size_t> rows, const Dropout& drop) {
    return c.backbone == BackboneKind::Transformer ? transformer_decode(p, c, memory, dec, std::move(rows), drop)
                                                   : recurrent_decode(p, c, memory, dec, rows, drop);
}

}  // namespace

Var answer_logits(const BoundParams& p, const ModelConfig& config, const VDGExample& ex, const InputMask& mask,
                  const Dropout& drop) {
    if (ex.answer.empty()) throw ContractViolation("example " + ex.id + " has an empty answer");
    const SerializedInput in = serialize_input(ex, mask, config);
    std::vector<Token> dec = in.decoder_prefix;
    dec.insert(dec.end(), ex.answer.begin(), ex.answer.end() - 1);
    std::vector<std::size_t> rows(ex.answer.size());
    std::iota(rows.begin(), rows.end(), in.decoder_prefix.size() - 1);
    const Var memory = encode(p, config, in.encoder, drop);
    return decode(p, config, memory, dec, std::move(rows), drop);
}

std::vector<double> log_softmax_row(std::span<const double> logits) {
    const double mx = *std::max_element(logits.begin(), logits.end());
    double s = 0.0;
    for (double l : logits) s += std::exp(l - mx);
    const double lse = mx + std::log(s);
    std::vector<double> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
    return out;
}

std::vector<double> token_logprobs(const Parameters& params, const ModelConfig& config, const VDGExample& ex,
                                   const InputMask& mask) {
    Tape tape;
    const BoundParams bound(tape, params, false);
    const Var logits = answer_logits(bound, config, ex, mask);
    const Tensor& l = logits.value();
    const std::size_t v = l.cols();
    std::vector<double> out(ex.answer.size());
    for (std::size_t t = 0; t < ex.answer.size(); ++t) {
        const auto lp = log_softmax_row(l.data().subspan(t * v, v));
        out[t] = std::min(0.0, lp[static_cast<std::size_t>(ex.answer[t])]);
    }
    return out;
}

IncrementalDecoder::IncrementalDecoder(const Parameters& params, const ModelConfig& config, const VDGExample& ex,
                                       const InputMask& mask)
    : config_(config) {
    VDGExample probe = ex;
    probe.answer = {special::kEos};
    input_ = serialize_input(probe, mask, config);
    bound_.emplace(tape_, params, false);
    memory_ = encode(*bound_, config, input_.encoder, {});
    mark_ = tape_.size();
}

std::vector<double> IncrementalDecoder::next_logprobs(std::span<const Token> generated) {
    std::vector<Token> dec = input_.decoder_prefix;
    dec.insert(dec.end(), generated.begin(), generated.end());
    if (dec.size() > config_.max_len) {
        throw TruncationError("decoded answer overflows max_len " + std::to_string(config_.max_len), "answer");
    }
    const Var logits = decode(*bound_, config_, memory_, dec, {dec.size() - 1}, {});
    std::vector<double> out = log_softmax_row(logits.value().data());
    tape_.truncate(mark_);
    return out;
}

void OptimizerConfig::validate() const {
    std::vector<std::string> problems;
    if (!(learning_rate >= 0.0)) problems.push_back("learning_rate must be >= 0");
    if (batch_size == 0) problems.push_back("batch_size must be positive");
    if (!(clip_norm > 0.0)) problems.push_back("clip_norm must be positive");
    if (!(weight_decay >= 0.0)) problems.push_back("weight_decay must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) problems.push_back("betas must be in [0, 1)");
    if (!(eps > 0.0)) problems.push_back("eps must be positive");
    if (!problems.empty()) {
        std::string msg = "invalid OptimizerConfig:";
        for (const auto& p : problems) msg += "\n  - " + p;
        throw ConfigError(msg);
    }
}

TrainResult train(Parameters params, const ModelConfig& config, const Dataset& data, const TokenLossFn& loss_fn,
                  const OptimizerConfig& opt, const InputMask& mask, const EpochCallback& on_epoch) {
    config.validate();
    opt.validate();
    if (data.empty()) throw ContractViolation("train: empty dataset");

    std::vector<Tensor*> tensors;
    std::vector<bool> decay;
    for (auto& [name, t] : params) {
        tensors.push_back(&t);
        decay.push_back(!is_bias(name) && !ends_with(name, ".g"));
    }
    std::vector<std::vector<double>> m(tensors.size()), v(tensors.size()), acc(tensors.size());
    for (std::size_t k = 0; k < tensors.size(); ++k) {
        m[k].assign(tensors[k]->numel(), 0.0);
        v[k].assign(tensors[k]->numel(), 0.0);
        acc[k].assign(tensors[k]->numel(), 0.0);
    }

    Rng dropout_rng(derive_seed(opt.seed, "dropout"));
    const Dropout drop{config.dropout_rate, &dropout_rng};

    TrainResult result;
    std::size_t step = 0;
    std::vector<std::size_t> order(data.size());
    for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng(derive_seed(opt.seed, static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order.begin(), order.end());

        double epoch_loss = 0.0;
        std::size_t epoch_tokens = 0;
        for (std::size_t start = 0, batch = 0; start < order.size(); start += opt.batch_size, ++batch) {
            const std::size_t stop = std::min(order.size(), start + opt.batch_size);
            std::size_t tokens = 0;
            for (std::size_t i = start; i < stop; ++i) tokens += data[order[i]].answer.size();
            for (auto& a : acc) std::fill(a.begin(), a.end(), 0.0);

            double batch_loss = 0.0;
            for (std::size_t i = start; i < stop; ++i) {
                const VDGExample& ex = data[order[i]];
                Tape tape;
                const BoundParams bound(tape, params, true);
                const Var logits = answer_logits(bound, config, ex, mask, drop);
                const Var loss = loss_fn(logits, ex);
                const double lv = loss.value().item();
                if (!std::isfinite(lv)) throw DivergenceError(epoch, batch);
                batch_loss += lv;
                const Gradients grads = tape.backward(loss.id);
                const auto& nodes = bound.nodes();
                for (std::size_t k = 0; k < nodes.size(); ++k) {
                    const auto g = grads.view(nodes[k].second);
                    if (g.empty()) continue;
                    auto& a = acc[k];
                    for (std::size_t e = 0; e < g.size(); ++e) a[e] += g[e];
                }
            }

            const double inv_tokens = 1.0 / static_cast<double>(tokens);
            double norm_sq = 0.0;
            for (auto& a : acc) {
                for (double& g : a) {
                    g *= inv_tokens;
                    norm_sq += g * g;
                }
            }
            if (!std::isfinite(norm_sq)) throw DivergenceError(epoch, batch);
            const double gnorm = std::sqrt(norm_sq);
            const double clip = gnorm > opt.clip_norm ? opt.clip_norm / gnorm : 1.0;

            ++step;
            double lr = opt.learning_rate;
            if (opt.warmup_steps > 0 && step < opt.warmup_steps) {
                lr *= static_cast<double>(step) / static_cast<double>(opt.warmup_steps);
            }
            const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(step));
            const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(step));
            for (std::size_t k = 0; k < tensors.size(); ++k) {
                auto p = tensors[k]->data();
                const double wd = decay[k] ? opt.weight_decay : 0.0;
                for (std::size_t e = 0; e < p.size(); ++e) {
                    const double g = acc[k][e] * clip;
                    m[k][e] = opt.beta1 * m[k][e] + (1.0 - opt.beta1) * g;
                    v[k][e] = opt.beta2 * v[k][e] + (1.0 - opt.beta2) * g * g;
                    const double mhat = m[k][e] / bc1;
                    const double vhat = v[k][e] / bc2;
                    p[e] -= lr * (mhat / (std::sqrt(vhat) + opt.eps) + wd * p[e]);
                }
            }
            epoch_loss += batch_loss;
            epoch_tokens += tokens;
        }
        result.loss_curve.push_back(epoch_loss / static_cast<double>(epoch_tokens));
        if (on_epoch) on_epoch(epoch, result.loss_curve.back(), params);
    }
    result.params = std::move(params);
    return result;
}

namespace {
constexpr const char* kCheckpointMagic = "AVDGCKPT1";
}

void save_checkpoint(const std::filesystem::path& path, const Parameters& params, const CheckpointMeta& meta) {
    nlohmann::json j;
    j["config"] = meta.config;
    j["optimizer_state"] = meta.optimizer_state;
    j["epoch"] = meta.epoch;
    j["seed"] = meta.seed;
    j["role"] = meta.role;
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os << kCheckpointMagic << '\n' << j.dump() << '\n';
    write_tensors(os, params);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    std::string magic, header;
    if (!std::getline(is, magic) || magic != kCheckpointMagic) throw IoError(path.string() + ": not a checkpoint");
    if (!std::getline(is, header)) throw IoError(path.string() + ": missing metadata");
    Checkpoint ck;
    try {
        const auto j = nlohmann::json::parse(header);
        ck.meta.config = j.at("config").get<ModelConfig>();
        ck.meta.optimizer_state = j.at("optimizer_state").get<bool>();
        ck.meta.epoch = j.at("epoch").get<std::size_t>();
        ck.meta.seed = j.at("seed").get<std::uint64_t>();
        ck.meta.role = j.value("role", std::string{});
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path.string() + ": bad metadata: " + e.what());
    }
    ck.params = read_tensors(is);
    for (const auto& [name, shape] : param_shapes(ck.meta.config)) {
        auto it = ck.params.find(name);
        if (it == ck.params.end() || it->second.shape() != shape) {
            throw IoError(path.string() + ": parameter '" + name + "' missing or misshapen");
        }
    }
    if (ck.params.size() != param_shapes(ck.meta.config).size()) {
        throw IoError(path.string() + ": unexpected extra parameters");
    }
    return ck;
}

}  // namespace avdg
