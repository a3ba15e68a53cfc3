#pragma once

// Encoder-decoder backbones over serialized grounded-dialogue inputs.
//
// Knowledge streams go to the encoder as
//   [BOS] <V> video <A> audio <H> history [EOS]
// and the question is a decoder prefix <Q> question <ANS>, after which the
// decoder predicts the answer one token at a time. A masked-out stream keeps
// its separator and is replaced by a single [NULL] token.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "avdg/rng.hpp"
#include "avdg/synthetic.hpp"
#include "avdg/tensor.hpp"
#include "avdg/tensor_io.hpp"

namespace avdg {

enum class BackboneKind : std::uint8_t { Transformer, Recurrent };

std::string backbone_name(BackboneKind kind);
BackboneKind backbone_from_name(const std::string& name);

struct ModelConfig {
    BackboneKind backbone = BackboneKind::Transformer;
    std::size_t vocab_size = 0;
    std::size_t d_model = 64;
    // Transformer: layers per stack. Recurrent: must be 1.
    std::size_t n_layers = 2;
    std::size_t n_heads = 4;
    std::size_t max_len = 64;
    double dropout_rate = 0.0;
    std::uint64_t seed = 1;

    std::size_t head_dim() const { return d_model / n_heads; }
    std::size_t ffn_dim() const { return 2 * d_model; }
    // Throws ConfigError listing every violation.
    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

struct InputMask {
    bool include_video = true;
    bool include_audio = true;
    bool include_history = true;
    bool include_question = true;

    static InputMask full() { return {}; }
    static InputMask question_only() { return {false, false, false, true}; }

    // Letters of the included inputs in V, A, H, Q order, e.g. "VAHQ", "HQ".
    std::string code() const;
    // Inverse of code(); throws ConfigError on bad input or a missing Q.
    static InputMask from_code(const std::string& code);
    bool operator==(const InputMask&) const = default;
};

using Parameters = NamedTensors;

// Weight matrices ~ U(-b, b) with b = sqrt(6 / (fan_in + fan_out)); the output
// projection uses b / 10 so initial predictions are close to uniform.
// Biases are zero and layer-norm gains one. Each tensor draws from its own
// stream keyed by (seed, name).
Parameters init_params(const ModelConfig& config);

// Names and shapes implied by the config, in init order.
std::vector<std::pair<std::string, Shape>> param_shapes(const ModelConfig& config);

struct SerializedInput {
    std::vector<Token> encoder;
    std::vector<Token> decoder_prefix;
};

// Throws ContractViolation for out-of-vocabulary ids and TruncationError when
// the encoder stream, or the decoder prefix plus answer, exceeds max_len.
SerializedInput serialize_input(const VDGExample& example, const InputMask& mask, const ModelConfig& config);

struct DeserializedKnowledge {
    std::optional<std::vector<Token>> video;
    std::optional<std::vector<Token>> audio;
    std::optional<std::vector<Token>> history;
};

// Inverse of the encoder serialization; masked streams come back empty.
DeserializedKnowledge deserialize_encoder(std::span<const Token> encoder);

struct Dropout {
    double rate = 0.0;
    Rng* rng = nullptr;
    bool active() const { return rate > 0.0 && rng != nullptr; }
};

// Parameters bound as leaves of one tape, looked up by name.
class BoundParams {
public:
    BoundParams(Tape& tape, const Parameters& params, bool requires_grad);
    // Binds variables already on `tape`, e.g. the inputs handed out by grad_check.
    BoundParams(Tape& tape, std::span<const std::string> names, std::span<const Var> vars);
    Var operator()(const std::string& name) const;
    const std::vector<std::pair<const Tensor*, NodeId>>& nodes() const { return nodes_; }
    Tape& tape() const { return *tape_; }

private:
    Tape* tape_;
    std::map<std::string, Var, std::less<>> vars_;
    std::vector<std::pair<const Tensor*, NodeId>> nodes_;
};

// Teacher-forced logits [T, vocab] for the answer positions.
Var answer_logits(const BoundParams& params, const ModelConfig& config, const VDGExample& example,
                  const InputMask& mask, const Dropout& dropout = {});

// log P(y_t | knowledge, question, y_<t) for t = 1..T under teacher forcing.
std::vector<double> token_logprobs(const Parameters& params, const ModelConfig& config, const VDGExample& example,
                                   const InputMask& mask);

// Row-wise log-softmax of a logits matrix, for evaluation paths.
std::vector<double> log_softmax_row(std::span<const double> logits);

// Encodes once, then scores continuations of the answer.
class IncrementalDecoder {
public:
    IncrementalDecoder(const Parameters& params, const ModelConfig& config, const VDGExample& example,
                       const InputMask& mask);
    // log P(next | inputs, generated) over the vocabulary.
    std::vector<double> next_logprobs(std::span<const Token> generated);
    std::size_t vocab_size() const { return config_.vocab_size; }

private:
    ModelConfig config_;
    Tape tape_;
    std::optional<BoundParams> bound_;
    SerializedInput input_;
    Var memory_;
    std::size_t mark_ = 0;
};

struct OptimizerConfig {
    double learning_rate = 8.75e-5;
    std::size_t batch_size = 32;
    std::size_t epochs = 10;
    double clip_norm = 1.0;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t warmup_steps = 0;
    std::uint64_t seed = 1;

    void validate() const;
    bool operator==(const OptimizerConfig&) const = default;
};

// Summed loss over the answer tokens of one example, given its teacher-forced
// logits [T, vocab].
using TokenLossFn = std::function<Var(Var logits, const VDGExample& example)>;

struct TrainResult {
    Parameters params;
    // Per-epoch mean loss per answer token.
    std::vector<double> loss_curve;
};

// Called after each epoch with the 0-based epoch index, its mean token loss,
// and the current parameters.
using EpochCallback = std::function<void(std::size_t epoch, double loss, const Parameters& params)>;

// AdamW with global-norm clipping over a seeded batch order. The batch loss
// is the summed example losses divided by the batch's answer-token count.
// Throws DivergenceError on a non-finite loss.
TrainResult train(Parameters params, const ModelConfig& config, const Dataset& data, const TokenLossFn& loss_fn,
                  const OptimizerConfig& opt, const InputMask& mask = InputMask::full(),
                  const EpochCallback& on_epoch = {});

struct CheckpointMeta {
    ModelConfig config;
    bool optimizer_state = false;
    std::size_t epoch = 0;
    std::uint64_t seed = 0;
    std::string role;
};

struct Checkpoint {
    CheckpointMeta meta;
    Parameters params;
};

// Line 1: "AVDGCKPT1"; line 2: JSON metadata; then the named-tensor container.
void save_checkpoint(const std::filesystem::path& path, const Parameters& params, const CheckpointMeta& meta);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace avdg
