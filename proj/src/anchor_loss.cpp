#include "avdg/anchor_loss.hpp"

#include <algorithm>
#include <cmath>

#include "avdg/errors.hpp"

namespace avdg {

std::vector<double> normalize_weights(std::span<const double> raw) {
    double total = 0.0;
    for (double w : raw) {
        if (!(w >= 0.0) || !std::isfinite(w)) {
            throw ContractViolation("raw anchor weights must be finite and non-negative, got " + std::to_string(w));
        }
        total += w;
    }
    std::vector<double> out(raw.size(), 1.0);
    if (total == 0.0) return out;
    for (std::size_t t = 0; t < raw.size(); ++t) out[t] = 1.0 + raw[t] / total;
    return out;
}

std::vector<double> anchor_softmax(std::span<const double> logits, double w) {
    if (!(w > 0.0) || !std::isfinite(w)) throw ContractViolation("anchor weight must be positive");
    if (logits.empty()) throw ContractViolation("anchor_softmax: empty logits");
    std::vector<double> z(logits.begin(), logits.end());
    for (double& v : z) v *= w;
    const double mx = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double& v : z) {
        v = std::exp(v - mx);
        s += v;
    }
    for (double& v : z) v /= s;
    return z;
}

namespace {

Var weighted_nll(Var logits, std::span<const Token> targets, const std::vector<double>* weights) {
    Tape& tape = *logits.tape;
    const Shape& shape = logits.shape();
    if (shape.size() != 2 || shape[0] != targets.size()) {
        throw ContractViolation("loss: logits " + shape_str(shape) + " do not match " +
                                std::to_string(targets.size()) + " targets");
    }
    const std::size_t T = shape[0], V = shape[1];
    Var scaled = logits;
    if (weights) {
        Var w{&tape, tape.constant(Tensor({T, 1}, *weights))};
        scaled = mul(logits, w);
    }
    Tensor onehot({T, V}, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
        if (targets[t] < 0 || static_cast<std::size_t>(targets[t]) >= V) {
            throw ContractViolation("loss: target " + std::to_string(targets[t]) + " outside vocabulary");
        }
        onehot.at(t, static_cast<std::size_t>(targets[t])) = 1.0;
    }
    Var picked = mul(log(row_softmax(scaled)), Var{&tape, tape.constant(std::move(onehot))});
    return scale(sum(picked), -1.0);
}

}  // namespace

Var anchor_loss(Var logits, std::span<const Token> targets, std::span<const double> final_weights) {
    if (final_weights.size() != targets.size()) {
        throw ContractViolation("anchor_loss: " + std::to_string(final_weights.size()) + " weights for " +
                                std::to_string(targets.size()) + " targets");
    }
    for (double w : final_weights) {
        if (!(w > 0.0) || !std::isfinite(w)) throw ContractViolation("anchor_loss: weights must be positive");
    }
    const std::vector<double> w(final_weights.begin(), final_weights.end());
    return weighted_nll(logits, targets, &w);
}

Var cross_entropy(Var logits, std::span<const Token> targets) { return weighted_nll(logits, targets, nullptr); }

TokenLossFn cross_entropy_loss() {
    return [](Var logits, const VDGExample& ex) { return cross_entropy(logits, ex.answer); };
}

TokenLossFn anchor_weighted_loss(std::shared_ptr<const FinalWeightTable> table) {
    if (!table) throw ContractViolation("anchor_weighted_loss: null weight table");
    return [table = std::move(table)](Var logits, const VDGExample& ex) {
        const auto it = table->find(ex.id);
        if (it == table->end()) throw ContractViolation("no anchor weights for example " + ex.id);
        return anchor_loss(logits, ex.answer, it->second);
    };
}

FinalWeightTable build_weight_table(std::span<const AnchorWeights> weights) {
    FinalWeightTable table;
    for (const auto& w : weights) {
        if (!table.emplace(w.example_id, normalize_weights(w.weights)).second) {
            throw ContractViolation("duplicate weights for example " + w.example_id);
        }
    }
    return table;
}

}  // namespace avdg
