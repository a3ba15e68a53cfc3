#include "avdg/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>

#include <json.hpp>

#include "avdg/errors.hpp"
#include "avdg/parallel.hpp"

namespace avdg {

void BeamConfig::validate() const {
    std::string msg;
    if (beam_size == 0) msg += " beam_size must be >= 1;";
    if (!(length_penalty_alpha >= 0.0) || !std::isfinite(length_penalty_alpha)) {
        msg += " length_penalty_alpha must be finite and >= 0;";
    }
    if (max_decode_len == 0) msg += " max_decode_len must be >= 1;";
    if (!msg.empty()) throw ConfigError("beam config:" + msg);
}

double length_penalty(std::size_t len, double alpha) {
    return std::pow((5.0 + static_cast<double>(len)) / 6.0, alpha);
}

namespace {

bool better(const Hypothesis& a, const Hypothesis& b, bool by_score) {
    const double ka = by_score ? a.score : a.logprob;
    const double kb = by_score ? b.score : b.logprob;
    if (ka != kb) return ka > kb;
    return a.tokens < b.tokens;
}

// One pass of fixed-width beam search.
std::vector<Hypothesis> fixed_width_search(const NextLogprobFn& next, std::size_t width, std::size_t max_len,
                                           double alpha, Token eos) {
    std::vector<Hypothesis> alive(1);
    std::vector<Hypothesis> done;
    std::size_t vocab = 0;

    for (std::size_t step = 0; step < max_len && !alive.empty(); ++step) {
        std::vector<Hypothesis> candidates;
        for (const auto& h : alive) {
            const std::vector<double> lp = next(h.tokens);
            if (vocab == 0) vocab = lp.size();
            if (lp.size() != vocab || vocab == 0) throw ContractViolation("beam_search: scorer changed vocabulary size");
            for (std::size_t v = 0; v < vocab; ++v) {
                Hypothesis c;
                c.tokens = h.tokens;
                c.tokens.push_back(static_cast<Token>(v));
                c.logprob = h.logprob + lp[v];
                candidates.push_back(std::move(c));
            }
        }
        const std::size_t keep = std::min(width, candidates.size());
        std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep), candidates.end(),
                          [](const Hypothesis& a, const Hypothesis& b) { return better(a, b, false); });
        candidates.resize(keep);

        alive.clear();
        for (auto& c : candidates) {
            c.score = c.logprob / length_penalty(c.tokens.size(), alpha);
            if (c.tokens.back() == eos) {
                c.finished = true;
                done.push_back(std::move(c));
            } else {
                alive.push_back(std::move(c));
            }
        }
    }
    for (auto& h : alive) done.push_back(std::move(h));
    return done;
}

}  // namespace

std::vector<Hypothesis> beam_search(const NextLogprobFn& next, const BeamConfig& config, Token eos) {
    config.validate();
    // Narrower passes revisit prefixes of the wider ones, so the scorer is
    // called at most once per prefix.
    std::map<std::vector<Token>, std::vector<double>> memo;
    const NextLogprobFn cached = [&](std::span<const Token> prefix) {
        std::vector<Token> key(prefix.begin(), prefix.end());
        auto it = memo.find(key);
        if (it == memo.end()) it = memo.emplace(std::move(key), next(prefix)).first;
        return it->second;
    };
    std::map<std::vector<Token>, Hypothesis> pooled;
    for (std::size_t width = 1; width <= config.beam_size; ++width) {
        for (auto& h : fixed_width_search(cached, width, config.max_decode_len, config.length_penalty_alpha, eos)) {
            pooled.try_emplace(h.tokens, std::move(h));
        }
    }
    std::vector<Hypothesis> out;
    out.reserve(pooled.size());
    for (auto& [tokens, h] : pooled) out.push_back(std::move(h));
    std::sort(out.begin(), out.end(), [](const Hypothesis& a, const Hypothesis& b) { return better(a, b, true); });
    return out;
}

std::vector<Hypothesis> beam_search(const Parameters& params, const ModelConfig& model, const VDGExample& ex,
                                    const BeamConfig& config, const InputMask& mask) {
    IncrementalDecoder dec(params, model, ex, mask);
    return beam_search([&](std::span<const Token> prefix) { return dec.next_logprobs(prefix); }, config, special::kEos);
}

std::vector<Token> greedy_decode(const NextLogprobFn& next, std::size_t max_len, Token eos) {
    std::vector<Token> out;
    while (out.size() < max_len) {
        const auto lp = next(out);
        if (lp.empty()) throw ContractViolation("greedy_decode: empty distribution");
        const auto best = std::max_element(lp.begin(), lp.end());  // first maximum
        out.push_back(static_cast<Token>(best - lp.begin()));
        if (out.back() == eos) break;
    }
    return out;
}

std::vector<Token> strip_eos(std::span<const Token> tokens, Token eos) {
    std::vector<Token> out(tokens.begin(), tokens.end());
    if (!out.empty() && out.back() == eos) out.pop_back();
    return out;
}

namespace {

void check_pairs(std::size_t a, std::size_t b, const char* what) {
    if (a != b) {
        throw ContractViolation(std::string(what) + ": " + std::to_string(a) + " candidates for " +
                                std::to_string(b) + " references");
    }
}

std::map<std::vector<Token>, std::size_t> ngram_counts(const std::vector<Token>& s, std::size_t n) {
    std::map<std::vector<Token>, std::size_t> counts;
    for (std::size_t i = 0; i + n <= s.size(); ++i) {
        ++counts[std::vector<Token>(s.begin() + static_cast<std::ptrdiff_t>(i),
                                    s.begin() + static_cast<std::ptrdiff_t>(i + n))];
    }
    return counts;
}

std::size_t lcs_length(const std::vector<Token>& a, const std::vector<Token>& b) {
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

}  // namespace

double bleu(const std::vector<std::vector<Token>>& cands, const std::vector<std::vector<Token>>& refs, int n) {
    check_pairs(cands.size(), refs.size(), "bleu");
    if (cands.empty()) throw ContractViolation("bleu: empty corpus");
    if (n < 1 || n > 4) throw ContractViolation("bleu: order must be in 1..4");
    std::size_t cand_len = 0, ref_len = 0;
    double log_prec = 0.0;
    for (int k = 1; k <= n; ++k) {
        std::size_t matched = 0, total = 0;
        for (std::size_t i = 0; i < cands.size(); ++i) {
            const auto c = ngram_counts(cands[i], static_cast<std::size_t>(k));
            const auto r = ngram_counts(refs[i], static_cast<std::size_t>(k));
            for (const auto& [gram, cnt] : c) {
                total += cnt;
                const auto it = r.find(gram);
                if (it != r.end()) matched += std::min(cnt, it->second);
            }
        }
        if (k == 1) {
            if (matched == 0) return 0.0;
            log_prec += std::log(static_cast<double>(matched) / static_cast<double>(total));
        } else {
            log_prec += std::log((static_cast<double>(matched) + 1.0) / (static_cast<double>(total) + 1.0));
        }
    }
    for (std::size_t i = 0; i < cands.size(); ++i) {
        cand_len += cands[i].size();
        ref_len += refs[i].size();
    }
    const double bp = cand_len > ref_len
                          ? 1.0
                          : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(cand_len));
    return bp * std::exp(log_prec / static_cast<double>(n));
}

double rouge_l(const std::vector<std::vector<Token>>& cands, const std::vector<std::vector<Token>>& refs) {
    check_pairs(cands.size(), refs.size(), "rouge_l");
    if (cands.empty()) throw ContractViolation("rouge_l: empty corpus");
    constexpr double beta2 = 1.2 * 1.2;
    double total = 0.0;
    for (std::size_t i = 0; i < cands.size(); ++i) {
        const std::size_t lcs = lcs_length(cands[i], refs[i]);
        if (lcs == 0) continue;
        const double p = static_cast<double>(lcs) / static_cast<double>(cands[i].size());
        const double r = static_cast<double>(lcs) / static_cast<double>(refs[i].size());
        total += (1.0 + beta2) * p * r / (r + beta2 * p);
    }
    return total / static_cast<double>(cands.size());
}

double anchor_token_accuracy(const std::vector<std::vector<Token>>& cands, const Dataset& refs) {
    check_pairs(cands.size(), refs.size(), "anchor_token_accuracy");
    std::size_t hit = 0, total = 0;
    for (std::size_t i = 0; i < cands.size(); ++i) {
        const auto& ex = refs[i];
        for (std::size_t t = 0; t < ex.answer.size(); ++t) {
            if (!ex.anchor_mask[t]) continue;
            ++total;
            if (t < cands[i].size() && cands[i][t] == ex.answer[t]) ++hit;
        }
    }
    return total == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(total);
}

double exact_match(const std::vector<std::vector<Token>>& cands, const std::vector<std::vector<Token>>& refs) {
    check_pairs(cands.size(), refs.size(), "exact_match");
    if (cands.empty()) return 0.0;
    std::size_t hit = 0;
    for (std::size_t i = 0; i < cands.size(); ++i) hit += cands[i] == refs[i] ? 1 : 0;
    return static_cast<double>(hit) / static_cast<double>(cands.size());
}

PerplexityResult corpus_perplexity(const Parameters& params, const ModelConfig& model, const Dataset& data,
                                   const InputMask& mask, std::size_t threads) {
    if (data.empty()) throw ContractViolation("corpus_perplexity: empty dataset");
    const auto per_example = parallel_map(data.size(), threads,
                                          [&](std::size_t i) { return token_logprobs(params, model, data[i], mask); });
    PerplexityResult out;
    double nll_sum = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& ex = data[i];
        const auto& lp = per_example[i];
        for (std::size_t t = 0; t < lp.size(); ++t) {
            out.tokens.push_back({ex.id, t + 1, ex.answer[t], static_cast<bool>(ex.anchor_mask[t]), -lp[t]});
            nll_sum += -lp[t];
        }
    }
    if (out.tokens.empty()) throw ContractViolation("corpus_perplexity: no answer tokens");
    out.perplexity = std::exp(nll_sum / static_cast<double>(out.tokens.size()));
    return out;
}

EvalReport evaluate_model(const Parameters& params, const ModelConfig& model, const Dataset& data,
                          const BeamConfig& beam, const InputMask& mask, std::size_t threads) {
    const auto best = parallel_map(data.size(), threads, [&](std::size_t i) {
        return beam_search(params, model, data[i], beam, mask).front().tokens;
    });
    EvalReport report;
    std::vector<std::vector<Token>> hyps, refs;
    for (std::size_t i = 0; i < data.size(); ++i) {
        report.generations.emplace_back(data[i].id, best[i]);
        hyps.push_back(strip_eos(best[i]));
        refs.push_back(strip_eos(data[i].answer));
    }
    for (int n = 1; n <= 4; ++n) report.metrics["bleu" + std::to_string(n)] = bleu(hyps, refs, n);
    report.metrics["rouge_l"] = rouge_l(hyps, refs);
    report.metrics["exact_match"] = exact_match(hyps, refs);
    report.metrics["anchor_acc"] = anchor_token_accuracy(best, data);
    auto ppl = corpus_perplexity(params, model, data, mask, threads);
    report.metrics["perplexity"] = ppl.perplexity;
    report.token_nll = std::move(ppl.tokens);
    return report;
}

void write_eval_report(const std::filesystem::path& dir, const std::string& stem, const EvalReport& report) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream os(dir / (stem + ".metrics.json"));
        if (!os) throw IoError("cannot write metrics to " + dir.string());
        os << nlohmann::json(report.metrics).dump(2) << '\n';
    }
    {
        std::ofstream os(dir / (stem + ".generations.jsonl"));
        if (!os) throw IoError("cannot write generations to " + dir.string());
        for (const auto& [id, toks] : report.generations) {
            os << nlohmann::json{{"id", id}, {"tokens", toks}}.dump() << '\n';
        }
    }
    std::ofstream os(dir / (stem + ".tokens.csv"));
    if (!os) throw IoError("cannot write token table to " + dir.string());
    os << "example_id,position,token,anchor,nll,perplexity\n" << std::setprecision(17);
    for (const auto& r : report.token_nll) {
        os << r.example_id << ',' << r.position << ',' << r.token << ',' << (r.anchor ? 1 : 0) << ',' << r.nll << ','
           << std::exp(r.nll) << '\n';
    }
}

std::map<std::string, double> read_eval_metrics(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path.string());
    try {
        return nlohmann::json::parse(is).get<std::map<std::string, double>>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("metrics file ") + path.string() + ": " + e.what(), 1);
    }
}

}  // namespace avdg
