#pragma once

// Anchor-weighted training objective.
//
// Raw anchor degrees are normalized per example to w_t = 1 + w_t / sum(w),
// so every weight is at least one and the answer's weights sum to T + 1.
// The weight then acts as an inverse temperature on that position's logits:
//   P_SW(. | t) = softmax(w_t * logits_t),   L_SW = -sum_t log P_SW(y_t | t).

#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "avdg/detection.hpp"
#include "avdg/model.hpp"
#include "avdg/tensor.hpp"

namespace avdg {

// All ones when the raw weights sum to zero. Throws ContractViolation on a
// negative or non-finite raw weight.
std::vector<double> normalize_weights(std::span<const double> raw);

// softmax(w * logits) for one position; w must be positive.
std::vector<double> anchor_softmax(std::span<const double> logits, double w);

// Scalar loss for teacher-forced logits [T, V]. `final_weights` holds one
// normalized weight per position.
Var anchor_loss(Var logits, std::span<const Token> targets, std::span<const double> final_weights);

// Plain token cross entropy. Shares the anchor_loss graph so that all-ones
// weights reproduce it bit for bit.
Var cross_entropy(Var logits, std::span<const Token> targets);

TokenLossFn cross_entropy_loss();

// Looks up each example's normalized weights by id. Throws ContractViolation
// for an example without weights or with a length mismatch.
using FinalWeightTable = std::map<std::string, std::vector<double>, std::less<>>;
TokenLossFn anchor_weighted_loss(std::shared_ptr<const FinalWeightTable> table);

// Normalizes every record of a weight file into a lookup table.
FinalWeightTable build_weight_table(std::span<const AnchorWeights> weights);

}  // namespace avdg
