#pragma once

// Beam search with a length penalty, greedy decoding, and the generation
// metrics used for evaluation.

#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "avdg/model.hpp"
#include "avdg/synthetic.hpp"

namespace avdg {

struct BeamConfig {
    std::size_t beam_size = 6;
    double length_penalty_alpha = 0.6;
    std::size_t max_decode_len = 16;

    void validate() const;
    bool operator==(const BeamConfig&) const = default;
};

// ((5 + len) / 6) ^ alpha
double length_penalty(std::size_t len, double alpha);

struct Hypothesis {
    std::vector<Token> tokens;  // Includes the final EOS when finished.
    double logprob = 0.0;
    double score = 0.0;  // logprob / length_penalty(tokens.size())
    bool finished = false;
};

// log P(next | prefix) over a vocabulary of fixed size.
using NextLogprobFn = std::function<std::vector<double>(std::span<const Token> prefix)>;

// A fixed-width pass expands every live hypothesis by every token and keeps
// the `width` best by log-probability; kept hypotheses that end in `eos` are
// set aside as finished, and live ones still open at max_decode_len are kept
// unfinished. beam_search pools the passes of every width 1..beam_size, so
// the top score cannot drop when the beam widens and beam_size 1 is greedy.
// Returns the distinct pooled hypotheses, best score first, ties broken by
// token sequence.
std::vector<Hypothesis> beam_search(const NextLogprobFn& next, const BeamConfig& config, Token eos = special::kEos);

// Beam search over a trained model's answer distribution.
std::vector<Hypothesis> beam_search(const Parameters& params, const ModelConfig& model, const VDGExample& example,
                                    const BeamConfig& config, const InputMask& mask = InputMask::full());

// Argmax at each step (lowest id on ties) until `eos` or max_len tokens.
std::vector<Token> greedy_decode(const NextLogprobFn& next, std::size_t max_len, Token eos = special::kEos);

// Drops one trailing EOS, if present.
std::vector<Token> strip_eos(std::span<const Token> tokens, Token eos = special::kEos);

// Corpus BLEU-n with clipped n-gram precision, brevity penalty, and add-one
// smoothing of the precisions for orders above one. 1 <= n <= 4. Throws
// ContractViolation on an empty or misaligned corpus.
double bleu(const std::vector<std::vector<Token>>& candidates, const std::vector<std::vector<Token>>& references,
            int n);

// Mean over examples of the LCS-based F-measure (beta = 1.2).
double rouge_l(const std::vector<std::vector<Token>>& candidates, const std::vector<std::vector<Token>>& references);

// Fraction of anchor positions where the candidate holds the reference token
// at the same position. Zero when there are no anchor positions.
double anchor_token_accuracy(const std::vector<std::vector<Token>>& candidates, const Dataset& references);

double exact_match(const std::vector<std::vector<Token>>& candidates, const std::vector<std::vector<Token>>& references);

struct TokenNll {
    std::string example_id;
    std::size_t position = 0;
    Token token = 0;
    bool anchor = false;
    double nll = 0.0;
};

struct PerplexityResult {
    double perplexity = 0.0;  // exp of the mean token NLL
    std::vector<TokenNll> tokens;
};

// `threads` workers score examples in parallel (0 = one per hardware thread);
// results do not depend on the count.
PerplexityResult corpus_perplexity(const Parameters& params, const ModelConfig& model, const Dataset& data,
                                   const InputMask& mask = InputMask::full(), std::size_t threads = 1);

struct EvalReport {
    std::map<std::string, double> metrics;  // bleu1..bleu4, rouge_l, perplexity, anchor_acc, exact_match
    std::vector<std::pair<std::string, std::vector<Token>>> generations;
    std::vector<TokenNll> token_nll;
};

EvalReport evaluate_model(const Parameters& params, const ModelConfig& model, const Dataset& data,
                          const BeamConfig& beam, const InputMask& mask = InputMask::full(), std::size_t threads = 1);

// <stem>.metrics.json, <stem>.generations.jsonl, and <stem>.tokens.csv with
// columns example_id,position,token,anchor,nll,perplexity (position from 1).
void write_eval_report(const std::filesystem::path& dir, const std::string& stem, const EvalReport& report);
std::map<std::string, double> read_eval_metrics(const std::filesystem::path& path);

}  // namespace avdg
