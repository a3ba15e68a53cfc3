#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "avdg/anchor_loss.hpp"
#include "avdg/decoding.hpp"
#include "avdg/errors.hpp"

using namespace avdg;

namespace {

// A fixed random next-token distribution for every prefix, drawn lazily.
class TableModel {
public:
    TableModel(std::uint64_t seed, std::size_t vocab, double spread) : seed_(seed), vocab_(vocab), spread_(spread) {}

    std::vector<double> operator()(std::span<const Token> prefix) {
        std::vector<Token> key(prefix.begin(), prefix.end());
        auto it = table_.find(key);
        if (it != table_.end()) return it->second;
        std::uint64_t h = seed_;
        for (Token t : key) h = h * 1000003u + static_cast<std::uint64_t>(t) + 1;
        std::mt19937_64 gen(h);
        std::normal_distribution<double> n(0.0, spread_);
        std::vector<double> l(vocab_);
        double mx = -INFINITY;
        for (double& x : l) {
            x = n(gen);
            mx = std::max(mx, x);
        }
        double s = 0.0;
        for (double x : l) s += std::exp(x - mx);
        for (double& x : l) x = x - mx - std::log(s);
        return table_.emplace(std::move(key), l).first->second;
    }

    NextLogprobFn fn() {
        return [this](std::span<const Token> p) { return (*this)(p); };
    }

private:
    std::uint64_t seed_;
    std::size_t vocab_;
    double spread_;
    std::map<std::vector<Token>, std::vector<double>> table_;
};

struct Best {
    std::vector<Token> tokens;
    double score = -INFINITY;
};

// Every sequence that either ends in EOS or reaches max_len without one.
void enumerate(TableModel& m, std::vector<Token>& prefix, double lp, std::size_t max_len, double alpha, Token eos,
               Best& best) {
    const auto dist = m(prefix);
    for (std::size_t v = 0; v < dist.size(); ++v) {
        prefix.push_back(static_cast<Token>(v));
        const double total = lp + dist[v];
        if (static_cast<Token>(v) == eos || prefix.size() == max_len) {
            const double score = total / length_penalty(prefix.size(), alpha);
            if (score > best.score || (score == best.score && prefix < best.tokens)) best = {prefix, score};
        } else {
            enumerate(m, prefix, total, max_len, alpha, eos, best);
        }
        prefix.pop_back();
    }
}

std::vector<std::vector<Token>> seqs(std::initializer_list<std::vector<Token>> s) { return s; }

}  // namespace

TEST_CASE("length penalty values") {
    CHECK(length_penalty(1, 0.0) == 1.0);
    CHECK(length_penalty(1, 0.6) == 1.0);
    CHECK(std::abs(length_penalty(7, 0.6) - std::pow(2.0, 0.6)) < 1e-15);
    BeamConfig bad;
    bad.beam_size = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = {};
    bad.length_penalty_alpha = -0.1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("beam 64 matches exhaustive search on small random models") {
    const Token eos = 0;
    std::mt19937_64 gen(2024);
    for (int trial = 0; trial < 100; ++trial) {
        TableModel m(gen(), 4, 1.0 + static_cast<double>(trial % 3));
        BeamConfig cfg;
        cfg.beam_size = 64;
        cfg.max_decode_len = 3;
        cfg.length_penalty_alpha = trial % 2 == 0 ? 0.6 : 0.0;
        const auto beams = beam_search(m.fn(), cfg, eos);
        Best best;
        std::vector<Token> prefix;
        enumerate(m, prefix, 0.0, 3, cfg.length_penalty_alpha, eos, best);
        REQUIRE_FALSE(beams.empty());
        CHECK(beams.front().tokens == best.tokens);
        CHECK(std::abs(beams.front().score - best.score) < 1e-12);
    }
}

TEST_CASE("beam 1 is greedy decoding") {
    std::mt19937_64 gen(99);
    for (int trial = 0; trial < 100; ++trial) {
        TableModel m(gen(), 2 + trial % 7, 1.5);
        BeamConfig cfg;
        cfg.beam_size = 1;
        cfg.max_decode_len = 8;
        const auto beams = beam_search(m.fn(), cfg, 0);
        REQUIRE(beams.size() == 1);
        CHECK(beams.front().tokens == greedy_decode(m.fn(), 8, 0));
    }
}

TEST_CASE("alpha zero scores are raw log-probabilities") {
    TableModel m(7, 5, 1.0);
    BeamConfig cfg;
    cfg.length_penalty_alpha = 0.0;
    cfg.max_decode_len = 5;
    for (const auto& h : beam_search(m.fn(), cfg, 0)) {
        CHECK(h.score == h.logprob);
        double lp = 0.0;
        for (std::size_t i = 0; i < h.tokens.size(); ++i) {
            lp += m(std::span<const Token>(h.tokens.data(), i))[static_cast<std::size_t>(h.tokens[i])];
        }
        CHECK(std::abs(lp - h.logprob) < 1e-12);
        CHECK(h.finished == (h.tokens.back() == 0));
    }
}

TEST_CASE("beam results are ranked by non-increasing score") {
    std::mt19937_64 gen(3);
    for (int trial = 0; trial < 50; ++trial) {
        TableModel m(gen(), 6, 1.0);
        BeamConfig cfg;
        cfg.beam_size = 1 + trial % 8;
        cfg.max_decode_len = 6;
        const auto beams = beam_search(m.fn(), cfg, 0);
        REQUIRE_FALSE(beams.empty());
        for (std::size_t i = 1; i < beams.size(); ++i) CHECK(beams[i - 1].score >= beams[i].score);
    }
}

TEST_CASE("a wider beam never lowers the top score") {
    std::mt19937_64 gen(17);
    for (int trial = 0; trial < 200; ++trial) {
        TableModel m(gen(), 5, 1.5);
        double prev = -INFINITY;
        for (std::size_t k = 1; k <= 8; ++k) {
            BeamConfig cfg;
            cfg.beam_size = k;
            cfg.max_decode_len = 5;
            const double top = beam_search(m.fn(), cfg, 0).front().score;
            CHECK(top >= prev);
            prev = top;
        }
    }
}

TEST_CASE("beam search over a model returns hypotheses from the answer vocabulary") {
    GenConfig g;
    g.n_examples = 3;
    ModelConfig mc;
    mc.vocab_size = static_cast<std::size_t>(g.vocab_size());
    mc.d_model = 16;
    mc.n_heads = 2;
    const Parameters p = init_params(mc);
    BeamConfig cfg;
    cfg.max_decode_len = 4;
    for (const auto& ex : generate(g)) {
        const auto beams = beam_search(p, mc, ex, cfg);
        REQUIRE_FALSE(beams.empty());
        for (const auto& h : beams) {
            CHECK(h.tokens.size() <= 4);
            for (Token t : h.tokens) CHECK(static_cast<std::size_t>(t) < mc.vocab_size);
        }
        cfg.beam_size = 1;
        IncrementalDecoder dec(p, mc, ex, InputMask::full());
        CHECK(beam_search(p, mc, ex, cfg).front().tokens ==
              greedy_decode([&](std::span<const Token> s) { return dec.next_logprobs(s); }, 4));
        cfg.beam_size = 6;
    }
}

TEST_CASE("BLEU and ROUGE-L examples") {
    const auto ref = seqs({{1, 2, 3, 4, 5}, {7, 8, 9}});
    for (int n = 1; n <= 4; ++n) CHECK(bleu(ref, ref, n) == doctest::Approx(1.0));
    CHECK(rouge_l(ref, ref) == doctest::Approx(1.0));

    CHECK(std::abs(bleu(seqs({{1, 2, 3}}), seqs({{1, 2, 4}}), 1) - 2.0 / 3.0) < 1e-12);
    CHECK(bleu(seqs({{1, 2}}), seqs({{3, 4}}), 1) == 0.0);
    CHECK(bleu(seqs({{1, 2}}), seqs({{3, 4}}), 4) == 0.0);
    CHECK(rouge_l(seqs({{1, 2}}), seqs({{3, 4}})) == 0.0);

    // LCS of [1 2 3 4] and [1 3 5] is 2: P = 1/2, R = 2/3.
    const double p = 0.5, r = 2.0 / 3.0, b2 = 1.44;
    CHECK(std::abs(rouge_l(seqs({{1, 2, 3, 4}}), seqs({{1, 3, 5}})) - (1 + b2) * p * r / (r + b2 * p)) < 1e-12);

    // Clipping: "a a a" against "a b" matches one unigram of three; short
    // candidate against a longer reference pays a brevity penalty.
    CHECK(std::abs(bleu(seqs({{1, 1, 1}}), seqs({{1, 2}}), 1) - 1.0 / 3.0) < 1e-12);
    CHECK(std::abs(bleu(seqs({{1}}), seqs({{1, 2}}), 1) - std::exp(1.0 - 2.0)) < 1e-12);

    CHECK_THROWS_AS(bleu({}, {}, 1), ContractViolation);
    CHECK_THROWS_AS(rouge_l({}, {}), ContractViolation);
    CHECK_THROWS_AS(bleu(ref, seqs({{1}}), 1), ContractViolation);
    CHECK_THROWS_AS(bleu(ref, ref, 5), ContractViolation);
}

TEST_CASE("BLEU and ROUGE-L ignore corpus order and stay in range") {
    std::mt19937_64 gen(44);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<std::vector<Token>> c(2 + gen() % 6), r(c.size());
        for (std::size_t i = 0; i < c.size(); ++i) {
            c[i].resize(1 + gen() % 6);
            r[i].resize(1 + gen() % 6);
            for (auto& t : c[i]) t = static_cast<Token>(gen() % 5);
            for (auto& t : r[i]) t = static_cast<Token>(gen() % 5);
        }
        std::vector<std::size_t> perm(c.size());
        for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
        std::shuffle(perm.begin(), perm.end(), gen);
        std::vector<std::vector<Token>> pc, pr;
        for (std::size_t i : perm) {
            pc.push_back(c[i]);
            pr.push_back(r[i]);
        }
        for (int n = 1; n <= 4; ++n) {
            const double b = bleu(c, r, n);
            CHECK(b >= 0.0);
            CHECK(b <= 1.0);
            CHECK(std::abs(b - bleu(pc, pr, n)) < 1e-12);
        }
        const double rl = rouge_l(c, r);
        CHECK(rl >= 0.0);
        CHECK(rl <= 1.0);
        CHECK(std::abs(rl - rouge_l(pc, pr)) < 1e-12);
    }
}

TEST_CASE("anchor token accuracy and exact match") {
    Dataset d(1);
    d[0].id = "a";
    d[0].answer = {10, 11, 12, 1};
    d[0].anchor_mask = {true, false, true, false};
    CHECK(anchor_token_accuracy(seqs({{10, 11, 13, 1}}), d) == 0.5);
    CHECK(anchor_token_accuracy(seqs({{10, 11, 12, 1}}), d) == 1.0);
    CHECK(anchor_token_accuracy(seqs({{}}), d) == 0.0);
    // Generation shorter than the anchor position counts as wrong.
    CHECK(anchor_token_accuracy(seqs({{10}}), d) == 0.5);
    CHECK(anchor_token_accuracy({}, Dataset{}) == 0.0);

    CHECK(exact_match(seqs({{1, 2}, {3}}), seqs({{1, 2}, {4}})) == 0.5);
    CHECK(exact_match(seqs({{1, 2}}), seqs({{1, 2}})) == 1.0);
}

TEST_CASE("corpus perplexity bounds") {
    GenConfig g;
    g.n_examples = 12;
    const Dataset data = generate(g);
    ModelConfig mc;
    mc.vocab_size = static_cast<std::size_t>(g.vocab_size());
    mc.d_model = 16;
    mc.n_heads = 2;
    const Parameters init = init_params(mc);
    const PerplexityResult fresh = corpus_perplexity(init, mc, data);
    const double v = static_cast<double>(mc.vocab_size);
    CHECK(fresh.perplexity > 0.8 * v);
    CHECK(fresh.perplexity < 1.2 * v);
    std::size_t n_tokens = 0;
    for (const auto& ex : data) n_tokens += ex.answer.size();
    REQUIRE(fresh.tokens.size() == n_tokens);
    double mean = 0.0;
    for (const auto& t : fresh.tokens) mean += t.nll;
    CHECK(std::abs(std::exp(mean / static_cast<double>(n_tokens)) - fresh.perplexity) < 1e-9);
    CHECK(fresh.tokens.front().position == 1);
    CHECK(fresh.tokens.front().example_id == data.front().id);

    const Dataset two(data.begin(), data.begin() + 2);
    OptimizerConfig o;
    o.epochs = 200;
    o.learning_rate = 3e-3;
    o.batch_size = 1;
    const Parameters fit = train(init, mc, two, cross_entropy_loss(), o).params;
    const double ppl = corpus_perplexity(fit, mc, two).perplexity;
    CHECK(ppl < 1.06);
    CHECK(ppl >= 1.0);

    CHECK_THROWS_AS(corpus_perplexity(init, mc, Dataset{}), ContractViolation);
}
