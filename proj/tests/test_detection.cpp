#include <doctest.h>

#include <bit>
#include <cmath>
#include <random>
#include <sstream>

#include "avdg/anchor_loss.hpp"
#include "avdg/detection.hpp"
#include "avdg/errors.hpp"

using namespace avdg;

namespace {

Dataset masks_only(const std::vector<std::vector<bool>>& masks) {
    Dataset d;
    for (std::size_t i = 0; i < masks.size(); ++i) {
        VDGExample ex;
        ex.id = "e" + std::to_string(i);
        ex.anchor_mask = masks[i];
        ex.answer.assign(masks[i].size(), 100);
        ex.anchor_source.assign(masks[i].size(), Source::None);
        d.push_back(ex);
    }
    return d;
}

AnchorWeights weights_for(const std::string& id, std::vector<double> w) {
    AnchorWeights a;
    a.example_id = id;
    a.weights = std::move(w);
    return a;
}

// Brute-force AUC: the fraction of (positive, negative) pairs ordered
// correctly, counting ties as one half.
double pairwise_auc(const std::vector<double>& s, const std::vector<bool>& y) {
    double good = 0.0, pairs = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (!y[i] || y[j]) continue;
            pairs += 1.0;
            good += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
        }
    }
    return good / pairs;
}

}  // namespace

TEST_CASE("perplexity weights from log-probabilities") {
    const double lps[] = {0.0, -2.0};
    const AnchorWeights w = perplexity_from_logprobs("x", lps);
    CHECK(w.weights[0] == 0.0);
    CHECK(std::signbit(w.weights[0]) == false);
    CHECK(w.weights[1] == 2.0);
    CHECK(w.method == DetectionMethod::Perplexity);
    CHECK_FALSE(w.p1_mask.has_value());
}

TEST_CASE("counterfactual weights are an absolute gap") {
    const double a[] = {std::log(0.5), -1.0, -3.0};
    const double b[] = {std::log(0.25), -1.0, -0.5};
    const AnchorWeights w = counterfactual_from_logprobs("x", a, b, InputMask::question_only());
    CHECK(std::abs(w.weights[0] - std::log(2.0)) < 1e-12);
    CHECK(std::abs(w.weights[0] - 0.6931) < 1e-4);
    CHECK(w.weights[1] == 0.0);
    CHECK(w.weights[2] == 2.5);
    CHECK(w.p1_mask == InputMask::question_only());

    const AnchorWeights swapped = counterfactual_from_logprobs("x", b, a, InputMask::question_only());
    CHECK(swapped.weights == w.weights);

    const double shorter[] = {-1.0, -1.0};
    CHECK_THROWS_AS(counterfactual_from_logprobs("x", a, shorter, InputMask::question_only()), ContractViolation);
}

TEST_CASE("counterfactual weights vanish when the two models agree") {
    GenConfig g;
    g.n_examples = 6;
    ModelConfig m;
    m.vocab_size = static_cast<std::size_t>(g.vocab_size());
    m.d_model = 16;
    m.n_heads = 2;
    const Parameters p = init_params(m);
    for (const auto& ex : generate(g)) {
        const AnchorWeights w = counterfactual_weights({p, m}, InputMask::full(), {p, m}, ex);
        for (double x : w.weights) CHECK(x == 0.0);
        const AnchorWeights wp = perplexity_weights({p, m}, ex);
        CHECK(wp.weights.size() == ex.answer.size());
        for (double x : wp.weights) CHECK(x >= 0.0);
    }
    ModelConfig small = m;
    small.vocab_size = 50;
    CHECK_THROWS_AS(perplexity_weights({init_params(small), small}, generate(g).front()), ContractViolation);
}

TEST_CASE("smoothing toward the sentence mean") {
    const AnchorWeights w = weights_for("x", {0.0, 2.0});
    CHECK(smooth_weights(w, 0.0).weights == w.weights);
    const auto half = smooth_weights(w, 0.1).weights;
    CHECK(std::abs(half[0] - 0.1) < 1e-12);
    CHECK(std::abs(half[1] - 1.9) < 1e-12);
    CHECK(smooth_weights(w, 1.0).weights == std::vector<double>{1.0, 1.0});
    CHECK(smooth_weights(w, 0.1).smoothing == 0.1);
    CHECK_THROWS_AS(smooth_weights(w, -0.1), ConfigError);
    CHECK_THROWS_AS(smooth_weights(w, 1.5), ConfigError);

    std::mt19937_64 gen(4);
    std::uniform_real_distribution<double> u(0.0, 5.0);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> raw(1 + gen() % 7);
        for (double& x : raw) x = u(gen);
        const double s = u(gen) / 5.0;
        const auto out = smooth_weights(weights_for("x", raw), s).weights;
        double m0 = 0.0, m1 = 0.0;
        for (std::size_t i = 0; i < raw.size(); ++i) {
            m0 += raw[i];
            m1 += out[i];
            CHECK(out[i] >= 0.0);
        }
        CHECK(std::abs(m0 - m1) < 1e-9);
    }
}

TEST_CASE("causal effects") {
    const CausalEffects e = causal_effects({0.9, 0.3, 0.2});
    CHECK(std::abs(e.te - 0.7) < 1e-12);
    CHECK(std::abs(e.tie - 0.6) < 1e-12);
    CHECK(std::abs(e.nde - 0.1) < 1e-12);
    const CausalEffects z = causal_effects({0.4, 0.4, 0.4});
    CHECK(z.te == 0.0);
    CHECK(z.tie == 0.0);
    CHECK(z.nde == 0.0);
    CHECK_THROWS_AS(causal_effects({std::nan(""), 0.0, 0.0}), ContractViolation);
}

TEST_CASE("TE equals TIE plus NDE bit-exactly on random triples") {
    std::mt19937_64 gen(12);
    std::uniform_real_distribution<double> u(-1e3, 1e3);
    for (int trial = 0; trial < 1000; ++trial) {
        const CausalQuery q{u(gen), u(gen), u(gen)};
        const CausalEffects e = causal_effects(q);
        CHECK(std::bit_cast<std::uint64_t>(e.te) == std::bit_cast<std::uint64_t>(e.tie + e.nde));
        // And TE agrees with its direct definition to rounding.
        CHECK(std::abs(e.te - (q.y_x_mx - q.y_xstar_mxstar)) <= 1e-12 * 4e3);
    }
}

TEST_CASE("detection quality conventions") {
    const Dataset d = masks_only({{true, false, false}, {false, true, false, false}});
    const std::vector<AnchorWeights> perfect = {weights_for("e0", {1, 0, 0}), weights_for("e1", {0, 1, 0, 0})};
    CHECK(detection_quality(perfect, d, 1).auc == 1.0);
    CHECK(detection_quality(perfect, d, 1).precision_at_k == 1.0);

    const std::vector<AnchorWeights> flat = {weights_for("e0", {2, 2, 2}), weights_for("e1", {2, 2, 2, 2})};
    CHECK(detection_quality(flat, d, 1).auc == 0.5);

    const std::vector<AnchorWeights> reversed = {weights_for("e0", {0, 1, 1}), weights_for("e1", {1, 0, 1, 1})};
    CHECK(detection_quality(reversed, d, 1).auc == 0.0);
    CHECK(detection_quality(reversed, d, 1).precision_at_k == 0.0);

    CHECK_THROWS_AS(detection_quality(perfect, masks_only({{true, true, true}, {true, true, true, true}}), 1),
                    UndefinedMetricError);
    CHECK_THROWS_AS(detection_quality(perfect, masks_only({{false, false, false}, {false, false, false, false}}), 1),
                    UndefinedMetricError);
    CHECK_THROWS_AS(detection_quality(perfect, d, 4), ContractViolation);
}

TEST_CASE("precision at k averages per example") {
    const Dataset d = masks_only({{true, true, false, false}, {false, false, true, false}});
    const std::vector<AnchorWeights> w = {weights_for("e0", {3, 0, 2, 1}), weights_for("e1", {0, 0, 5, 4})};
    // e0: top-2 = positions 0, 2 -> 1 of 2; e1: top-2 = positions 2, 3 -> 1 of 2.
    CHECK(detection_quality(w, d, 2).precision_at_k == doctest::Approx(0.5));
    // e0: top-1 = position 0 (hit); e1: top-1 = position 2 (hit).
    CHECK(detection_quality(w, d, 1).precision_at_k == 1.0);
}

TEST_CASE("rank AUC agrees with the pairwise definition") {
    std::mt19937_64 gen(8);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 2 + gen() % 30;
        std::vector<double> s(n);
        std::vector<bool> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = static_cast<double>(gen() % 5);  // many ties
            y[i] = gen() % 3 == 0;
        }
        y[0] = true;
        y[1] = false;
        CHECK(std::abs(rank_auc(s, y) - pairwise_auc(s, y)) < 1e-12);
    }
}

TEST_CASE("weight files round-trip and validate") {
    AnchorWeights cf = weights_for("ex1", {0.5, 0.0, 2.25});
    cf.method = DetectionMethod::Counterfactual;
    cf.p1_mask = InputMask::from_code("HQ");
    cf.smoothing = 0.1;
    const std::vector<AnchorWeights> all = {weights_for("ex0", {1.0, 3.0}), cf};
    std::stringstream ss;
    write_weights(ss, all);
    CHECK(read_weights(ss) == all);

    std::stringstream bad("{\"schema_version\":1,\"example_id\":\"a\",\"method\":\"P\",\"p1_mask\":null,\"s\":0,"
                          "\"weights\":[1]}\n{\"schema_version\":1,\"example_id\":\"b\",\"method\":\"P\","
                          "\"p1_mask\":null,\"s\":0,\"weights\":[-1]}\n");
    try {
        (void)read_weights(bad);
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.line() == 2);
    }
    std::stringstream version("{\"schema_version\":9,\"example_id\":\"a\",\"method\":\"P\",\"p1_mask\":null,"
                              "\"s\":0,\"weights\":[1]}\n");
    CHECK_THROWS_AS(read_weights(version), ParseError);
}
