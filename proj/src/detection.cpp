#include "avdg/detection.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "avdg/errors.hpp"

namespace avdg {

std::string method_code(DetectionMethod m) { return m == DetectionMethod::Perplexity ? "P" : "CF"; }

DetectionMethod method_from_code(const std::string& code) {
    if (code == "P") return DetectionMethod::Perplexity;
    if (code == "CF") return DetectionMethod::Counterfactual;
    throw ConfigError("unknown detection method '" + code + "' (expected P or CF)");
}

AnchorWeights perplexity_from_logprobs(const std::string& example_id, std::span<const double> logprobs) {
    AnchorWeights w;
    w.example_id = example_id;
    w.method = DetectionMethod::Perplexity;
    w.weights.reserve(logprobs.size());
    // max() maps -0.0 to +0.0 so P = 1 gives exactly zero.
    for (double lp : logprobs) w.weights.push_back(std::max(0.0, -lp));
    return w;
}

AnchorWeights counterfactual_from_logprobs(const std::string& example_id, std::span<const double> lp1,
                                           std::span<const double> lp2, const InputMask& p1_mask) {
    if (lp1.size() != lp2.size()) {
        throw ContractViolation("counterfactual weights: answer lengths differ (" + std::to_string(lp1.size()) +
                                " vs " + std::to_string(lp2.size()) + ")");
    }
    AnchorWeights w;
    w.example_id = example_id;
    w.method = DetectionMethod::Counterfactual;
    w.p1_mask = p1_mask;
    w.weights.reserve(lp1.size());
    for (std::size_t t = 0; t < lp1.size(); ++t) w.weights.push_back(std::abs(lp1[t] - lp2[t]));
    return w;
}

namespace {

void check_vocab(const ModelConfig& config, const VDGExample& ex) {
    for (Token t : ex.answer) {
        if (t < 0 || static_cast<std::size_t>(t) >= config.vocab_size) {
            throw ContractViolation("example " + ex.id + ": answer token " + std::to_string(t) +
                                    " outside model vocabulary " + std::to_string(config.vocab_size));
        }
    }
}

}  // namespace

AnchorWeights perplexity_weights(ModelRef model, const VDGExample& ex) {
    check_vocab(model.config, ex);
    return perplexity_from_logprobs(ex.id, token_logprobs(model.params, model.config, ex, InputMask::full()));
}

AnchorWeights counterfactual_weights(ModelRef model_q, const InputMask& p1_mask, ModelRef model_full,
                                     const VDGExample& ex) {
    if (!p1_mask.include_question) throw ContractViolation("p1_mask must include the question");
    if (model_q.config.vocab_size != model_full.config.vocab_size) {
        throw ContractViolation("counterfactual weights: models disagree on vocabulary size");
    }
    check_vocab(model_full.config, ex);
    const auto lp1 = token_logprobs(model_q.params, model_q.config, ex, p1_mask);
    const auto lp2 = token_logprobs(model_full.params, model_full.config, ex, InputMask::full());
    return counterfactual_from_logprobs(ex.id, lp1, lp2, p1_mask);
}

AnchorWeights smooth_weights(const AnchorWeights& in, double s) {
    if (!(s >= 0.0 && s <= 1.0)) throw ConfigError("smoothing coefficient must be in [0, 1], got " + std::to_string(s));
    AnchorWeights out = in;
    out.smoothing = s;
    if (in.weights.empty() || s == 0.0) return out;
    const double mean =
        std::accumulate(in.weights.begin(), in.weights.end(), 0.0) / static_cast<double>(in.weights.size());
    for (double& w : out.weights) w = s == 1.0 ? mean : (1.0 - s) * w + s * mean;
    return out;
}

CausalEffects causal_effects(const CausalQuery& q) {
    for (double v : {q.y_x_mx, q.y_x_mxstar, q.y_xstar_mxstar}) {
        if (!std::isfinite(v)) throw ContractViolation("causal query values must be finite");
    }
    CausalEffects e;
    e.tie = q.y_x_mx - q.y_x_mxstar;
    e.nde = q.y_x_mxstar - q.y_xstar_mxstar;
    e.te = e.tie + e.nde;
    return e;
}

double rank_auc(std::span<const double> scores, const std::vector<bool>& labels) {
    if (scores.size() != labels.size()) throw ContractViolation("rank_auc: scores and labels differ in length");
    std::size_t n_pos = 0;
    for (bool l : labels) n_pos += l ? 1 : 0;
    const std::size_t n_neg = labels.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) {
        throw UndefinedMetricError("AUC is undefined when every label is " + std::string(n_pos ? "true" : "false"));
    }
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double pos_rank_sum = 0.0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        // Ranks are 1-based; a tie group shares its average rank.
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k) {
            if (labels[order[k]]) pos_rank_sum += avg_rank;
        }
        i = j;
    }
    const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
    return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

DetectionQuality detection_quality(std::span<const AnchorWeights> weights, const Dataset& data, std::size_t k) {
    if (weights.size() != data.size()) {
        throw ContractViolation("detection_quality: " + std::to_string(weights.size()) + " weight records for " +
                                std::to_string(data.size()) + " examples");
    }
    std::vector<double> scores;
    std::vector<bool> labels;
    double prec_sum = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& w = weights[i].weights;
        const auto& mask = data[i].anchor_mask;
        if (weights[i].example_id != data[i].id || w.size() != mask.size()) {
            throw ContractViolation("detection_quality: weights do not cover example " + data[i].id);
        }
        if (k == 0 || k > w.size()) {
            throw ContractViolation("detection_quality: k=" + std::to_string(k) + " exceeds answer length of " +
                                    data[i].id);
        }
        scores.insert(scores.end(), w.begin(), w.end());
        labels.insert(labels.end(), mask.begin(), mask.end());

        std::vector<std::size_t> order(w.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return w[a] > w[b]; });
        std::size_t hits = 0;
        for (std::size_t r = 0; r < k; ++r) hits += mask[order[r]] ? 1 : 0;
        prec_sum += static_cast<double>(hits) / static_cast<double>(k);
    }
    DetectionQuality q;
    q.auc = rank_auc(scores, labels);
    q.precision_at_k = data.empty() ? 0.0 : prec_sum / static_cast<double>(data.size());
    return q;
}

void write_weights(std::ostream& os, std::span<const AnchorWeights> weights) {
    for (const auto& w : weights) {
        nlohmann::json j;
        j["schema_version"] = kWeightSchemaVersion;
        j["example_id"] = w.example_id;
        j["method"] = method_code(w.method);
        j["p1_mask"] = w.p1_mask ? nlohmann::json(w.p1_mask->code()) : nlohmann::json(nullptr);
        j["s"] = w.smoothing;
        j["weights"] = w.weights;
        os << j.dump() << '\n';
    }
}

std::vector<AnchorWeights> read_weights(std::istream& is) {
    std::vector<AnchorWeights> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            if (j.at("schema_version").get<int>() != kWeightSchemaVersion) {
                throw std::runtime_error("unsupported schema_version");
            }
            AnchorWeights w;
            w.example_id = j.at("example_id").get<std::string>();
            w.method = method_from_code(j.at("method").get<std::string>());
            if (!j.at("p1_mask").is_null()) w.p1_mask = InputMask::from_code(j.at("p1_mask").get<std::string>());
            w.smoothing = j.at("s").get<double>();
            w.weights = j.at("weights").get<std::vector<double>>();
            for (double x : w.weights) {
                if (!(x >= 0.0) || !std::isfinite(x)) throw std::runtime_error("weights must be finite and >= 0");
            }
            out.push_back(std::move(w));
        } catch (const std::exception& e) {
            throw ParseError(e.what(), lineno);
        }
    }
    return out;
}

void save_weights(std::span<const AnchorWeights> weights, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    write_weights(os, weights);
}

std::vector<AnchorWeights> load_weights(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    return read_weights(is);
}

}  // namespace avdg
