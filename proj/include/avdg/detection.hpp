#pragma once

// Per-token anchor degrees from trained models.
//
// Perplexity weights:       w_t = -log P(y_t | K, Q, y_<t)
// Counterfactual weights:   w_t = |log P1(y_t | ...) - log P2(y_t | K, Q, y_<t)|
// where P1 sees only the inputs in its mask (the question, plus optionally
// some knowledge streams) and P2 sees everything. Dropping a stream from P1
// focuses the weights on anchors read from that stream.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "avdg/model.hpp"
#include "avdg/synthetic.hpp"

namespace avdg {

enum class DetectionMethod : std::uint8_t { Perplexity, Counterfactual };

std::string method_code(DetectionMethod m);  // "P" or "CF"
DetectionMethod method_from_code(const std::string& code);

struct AnchorWeights {
    std::string example_id;
    std::vector<double> weights;
    DetectionMethod method = DetectionMethod::Perplexity;
    std::optional<InputMask> p1_mask;  // Counterfactual only.
    double smoothing = 0.0;

    bool operator==(const AnchorWeights&) const = default;
};

struct ModelRef {
    const Parameters& params;
    const ModelConfig& config;
};

AnchorWeights perplexity_from_logprobs(const std::string& example_id, std::span<const double> logprobs);
AnchorWeights counterfactual_from_logprobs(const std::string& example_id, std::span<const double> logprobs_p1,
                                           std::span<const double> logprobs_p2, const InputMask& p1_mask);

// `model` must share the example's vocabulary; scored with the full input.
AnchorWeights perplexity_weights(ModelRef model, const VDGExample& example);

// P1 = `model_q` scored under `p1_mask`, P2 = `model_full` under the full input.
AnchorWeights counterfactual_weights(ModelRef model_q, const InputMask& p1_mask, ModelRef model_full,
                                     const VDGExample& example);

// w_t <- (1 - s) w_t + s * mean(w), 0 <= s <= 1.
AnchorWeights smooth_weights(const AnchorWeights& weights, double s);

struct CausalQuery {
    double y_x_mx = 0.0;          // Y_{x, M_x}
    double y_x_mxstar = 0.0;      // Y_{x, M_{x*}}
    double y_xstar_mxstar = 0.0;  // Y_{x*, M_{x*}}
};

struct CausalEffects {
    double te = 0.0;
    double tie = 0.0;
    double nde = 0.0;
};

// TIE = Y_{x,M_x} - Y_{x,M_x*}; NDE = Y_{x,M_x*} - Y_{x*,M_x*}; TE is
// formed as TIE + NDE so the decomposition holds exactly in floating point.
CausalEffects causal_effects(const CausalQuery& q);

struct DetectionQuality {
    double auc = 0.0;
    double precision_at_k = 0.0;
};

// Rank AUC of the pooled weights against the pooled anchor masks (ties count
// one half), and the mean over examples of the anchor fraction among each
// example's k highest weights (ties broken by position).
DetectionQuality detection_quality(std::span<const AnchorWeights> weights, const Dataset& data, std::size_t k);

// Mann-Whitney AUC with average ranks for ties. Throws UndefinedMetricError
// when either class is empty.
double rank_auc(std::span<const double> scores, const std::vector<bool>& labels);

inline constexpr int kWeightSchemaVersion = 1;

// One JSON object per line:
//   {"schema_version":1,"example_id":..,"method":"P"|"CF","p1_mask":"Q"|null,
//    "s":0.1,"weights":[..]}
void write_weights(std::ostream& os, std::span<const AnchorWeights> weights);
std::vector<AnchorWeights> read_weights(std::istream& is);
void save_weights(std::span<const AnchorWeights> weights, const std::filesystem::path& path);
std::vector<AnchorWeights> load_weights(const std::filesystem::path& path);

}  // namespace avdg
