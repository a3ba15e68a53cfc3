#include "avdg/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "avdg/errors.hpp"
#include "avdg/rng.hpp"

namespace avdg {

char source_code(Source s) {
    switch (s) {
        case Source::Video: return 'V';
        case Source::Audio: return 'A';
        case Source::History: return 'H';
        case Source::None: break;
    }
    return '-';
}

Source source_from_code(char c) {
    switch (c) {
        case 'V': return Source::Video;
        case 'A': return Source::Audio;
        case 'H': return Source::History;
        case '-': return Source::None;
        default: break;
    }
    throw ContractViolation(std::string("unknown anchor source code '") + c + "'");
}

std::span<const Token> VDGExample::stream(Source s) const {
    switch (s) {
        case Source::Video: return video;
        case Source::Audio: return audio;
        case Source::History: return history;
        case Source::None: break;
    }
    return {};
}

Token GenConfig::vocab_size() const {
    Token top = special::kCount;
    for (const VocabRange& r : {video_vocab, audio_vocab, history_vocab, question_vocab, word_vocab, number_vocab}) {
        top = std::max(top, r.end());
    }
    return top;
}

namespace {

struct NamedRange {
    const char* name;
    VocabRange range;
};

std::size_t stream_len(const GenConfig& c, Source s) {
    switch (s) {
        case Source::Video: return c.video_len;
        case Source::Audio: return c.audio_len;
        case Source::History: return c.history_len;
        case Source::None: break;
    }
    return 0;
}

VocabRange stream_vocab(const GenConfig& c, Source s) {
    switch (s) {
        case Source::Video: return c.video_vocab;
        case Source::Audio: return c.audio_vocab;
        case Source::History: return c.history_vocab;
        case Source::None: break;
    }
    return {};
}

std::size_t weighted_pick(Rng& rng, std::span<const double> weights) {
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    double u = rng.uniform() * total;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (u < weights[i]) return i;
        u -= weights[i];
    }
    // Floating-point remainder lands on the last positive weight.
    for (std::size_t i = weights.size(); i-- > 0;) {
        if (weights[i] > 0) return i;
    }
    return 0;
}

constexpr std::array<Source, 3> kStreams = {Source::Video, Source::Audio, Source::History};

}  // namespace

void GenConfig::validate() const {
    std::vector<std::string> problems;
    const std::array<NamedRange, 6> ranges = {{{"video_vocab", video_vocab},
                                               {"audio_vocab", audio_vocab},
                                               {"history_vocab", history_vocab},
                                               {"question_vocab", question_vocab},
                                               {"word_vocab", word_vocab},
                                               {"number_vocab", number_vocab}}};
    for (const auto& r : ranges) {
        if (r.range.size <= 0) problems.push_back(std::string(r.name) + " is empty");
        if (r.range.begin < special::kCount) {
            problems.push_back(std::string(r.name) + " overlaps the special tokens");
        }
    }
    for (std::size_t i = 0; i < ranges.size(); ++i) {
        for (std::size_t j = i + 1; j < ranges.size(); ++j) {
            const VocabRange& a = ranges[i].range;
            const VocabRange& b = ranges[j].range;
            if (a.begin < b.end() && b.begin < a.end()) {
                problems.push_back(std::string("vocab partitions overlap: ") + ranges[i].name + " and " +
                                   ranges[j].name);
            }
        }
    }
    if (video_len == 0 || audio_len == 0 || history_len == 0) problems.push_back("stream lengths must be >= 1");
    if (question_len == 0) problems.push_back("question_len must be >= 1");
    if (n_templates == 0) problems.push_back("n_templates must be >= 1");
    if (question_vocab.size >= 0 && static_cast<std::size_t>(question_vocab.size) < n_templates) {
        problems.push_back("question_vocab must hold at least n_templates tokens");
    }
    if (answer_min_words == 0 || answer_max_words < answer_min_words) {
        problems.push_back("need 1 <= answer_min_words <= answer_max_words");
    }
    if (!(anchor_rate >= 0.0 && anchor_rate < 1.0)) problems.push_back("anchor_rate must be in [0, 1)");
    if (!(noise_rate >= 0.0 && noise_rate <= 1.0)) problems.push_back("noise_rate must be in [0, 1]");
    for (const auto* w : {&kind_weights, &source_weights}) {
        double total = 0.0;
        for (double x : *w) {
            if (!(x >= 0.0)) problems.push_back("anchor weights must be nonnegative");
            total += x;
        }
        if (!(total > 0.0)) problems.push_back("anchor weights must have a positive sum");
    }
    if (kind_weights[2] > 0.0 && number_vocab.size < 2) problems.push_back("count anchors need >= 2 number tokens");
    for (Source s : kStreams) {
        if (stream_vocab(*this, s).size < 2) problems.push_back("knowledge vocabularies need >= 2 tokens");
    }
    if (!problems.empty()) {
        std::string msg = "invalid GenConfig:";
        for (const auto& p : problems) msg += "\n  - " + p;
        throw ConfigError(msg);
    }
}

std::vector<AnswerTemplate> make_templates(const GenConfig& config) {
    config.validate();
    Rng rng(derive_seed(config.seed, "templates"));
    std::vector<AnswerTemplate> out;
    out.reserve(config.n_templates);
    for (std::size_t j = 0; j < config.n_templates; ++j) {
        AnswerTemplate t;
        t.question.push_back(config.question_vocab.begin + static_cast<Token>(j));
        for (std::size_t k = 1; k < config.question_len; ++k) {
            t.question.push_back(config.question_vocab.begin +
                                 static_cast<Token>(rng.below(static_cast<std::uint64_t>(config.question_vocab.size))));
        }
        const std::size_t len =
            config.answer_min_words + rng.below(config.answer_max_words - config.answer_min_words + 1);
        std::size_t n_anchor = 0;
        if (config.anchor_rate > 0.0) {
            n_anchor = static_cast<std::size_t>(std::lround(config.anchor_rate * static_cast<double>(len)));
            n_anchor = std::clamp<std::size_t>(n_anchor, 1, len);
        }
        std::vector<std::size_t> positions(len);
        std::iota(positions.begin(), positions.end(), 0);
        rng.shuffle(positions.begin(), positions.end());
        std::vector<bool> is_anchor(len, false);
        for (std::size_t k = 0; k < n_anchor; ++k) is_anchor[positions[k]] = true;

        std::array<bool, 3> has_count{};
        for (std::size_t p = 0; p < len; ++p) {
            if (!is_anchor[p]) {
                t.slots.emplace_back(config.word_vocab.begin +
                                     static_cast<Token>(rng.below(static_cast<std::uint64_t>(config.word_vocab.size))));
                continue;
            }
            AnchorSlot slot;
            const std::size_t si = weighted_pick(rng, config.source_weights);
            slot.source = kStreams[si];
            slot.kind = static_cast<AnchorKind>(weighted_pick(rng, config.kind_weights));
            if (slot.kind == AnchorKind::Count && has_count[si]) slot.kind = AnchorKind::Copy;
            const VocabRange vocab = stream_vocab(config, slot.source);
            switch (slot.kind) {
                case AnchorKind::Copy:
                    slot.arg = static_cast<Token>(rng.below(stream_len(config, slot.source)));
                    break;
                case AnchorKind::Count:
                    has_count[si] = true;
                    slot.arg = vocab.begin + static_cast<Token>(rng.below(static_cast<std::uint64_t>(vocab.size)));
                    break;
                case AnchorKind::Last:
                    break;
            }
            t.slots.emplace_back(slot);
        }
        out.push_back(std::move(t));
    }
    return out;
}

Dataset generate(const GenConfig& config) {
    const std::vector<AnswerTemplate> templates = make_templates(config);
    Dataset out;
    out.reserve(config.n_examples);
    for (std::size_t i = 0; i < config.n_examples; ++i) {
        Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(i)));
        const AnswerTemplate& t = templates[rng.below(templates.size())];

        VDGExample ex;
        ex.id = "ex" + std::to_string(i);
        for (std::size_t si = 0; si < kStreams.size(); ++si) {
            const Source s = kStreams[si];
            const VocabRange vocab = stream_vocab(config, s);
            const std::size_t len = stream_len(config, s);
            const AnchorSlot* count_slot = nullptr;
            for (const auto& slot : t.slots) {
                const auto* a = std::get_if<AnchorSlot>(&slot);
                if (a && a->source == s && a->kind == AnchorKind::Count) count_slot = a;
            }
            std::vector<Token> stream(len);
            if (count_slot) {
                const Token symbol = count_slot->arg;
                const std::size_t max_count =
                    std::min<std::size_t>(len, static_cast<std::size_t>(config.number_vocab.size - 1));
                const std::size_t c = rng.below(max_count + 1);
                for (auto& tok : stream) {
                    tok = vocab.begin + static_cast<Token>(rng.below(static_cast<std::uint64_t>(vocab.size - 1)));
                    if (tok >= symbol) ++tok;
                }
                std::vector<std::size_t> idx(len);
                std::iota(idx.begin(), idx.end(), 0);
                rng.shuffle(idx.begin(), idx.end());
                for (std::size_t k = 0; k < c; ++k) stream[idx[k]] = symbol;
            } else {
                for (auto& tok : stream) {
                    tok = vocab.begin + static_cast<Token>(rng.below(static_cast<std::uint64_t>(vocab.size)));
                }
            }
            if (s == Source::Video) ex.video = std::move(stream);
            else if (s == Source::Audio) ex.audio = std::move(stream);
            else ex.history = std::move(stream);
        }
        ex.question = t.question;

        for (const auto& slot : t.slots) {
            if (const auto* word = std::get_if<Token>(&slot)) {
                ex.answer.push_back(*word);
                ex.anchor_mask.push_back(false);
                ex.anchor_source.push_back(Source::None);
                continue;
            }
            const auto& a = std::get<AnchorSlot>(slot);
            const auto stream = ex.stream(a.source);
            Token value = 0;
            switch (a.kind) {
                case AnchorKind::Copy: value = stream[static_cast<std::size_t>(a.arg)]; break;
                case AnchorKind::Last: value = stream.back(); break;
                case AnchorKind::Count:
                    value = config.number_vocab.begin +
                            static_cast<Token>(std::count(stream.begin(), stream.end(), a.arg));
                    break;
            }
            ex.answer.push_back(value);
            ex.anchor_mask.push_back(true);
            ex.anchor_source.push_back(a.source);
        }
        ex.answer.push_back(special::kEos);
        ex.anchor_mask.push_back(false);
        ex.anchor_source.push_back(Source::None);

        if (rng.bernoulli(config.noise_rate)) {
            for (std::size_t p = 0; p + 1 < ex.answer.size(); ++p) {
                if (!ex.anchor_mask[p]) {
                    ex.answer[p] = config.word_vocab.begin +
                                   static_cast<Token>(rng.below(static_cast<std::uint64_t>(config.word_vocab.size)));
                }
            }
        }
        out.push_back(std::move(ex));
    }
    return out;
}

std::vector<Dataset> split(const Dataset& data, std::span<const double> fractions, std::uint64_t seed) {
    if (fractions.empty() || fractions.size() > 3) throw ConfigError("split: need 1 to 3 fractions");
    double total = 0.0;
    for (double f : fractions) {
        if (!(f > 0.0)) throw ConfigError("split: fractions must be positive");
        total += f;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split: fractions must sum to 1");

    const std::size_t n = data.size();
    std::vector<std::size_t> sizes(fractions.size());
    std::size_t assigned = 0;
    for (std::size_t k = 0; k + 1 < fractions.size(); ++k) {
        sizes[k] = static_cast<std::size_t>(std::llround(fractions[k] * static_cast<double>(n)));
        sizes[k] = std::min(sizes[k], n - assigned);
        assigned += sizes[k];
    }
    sizes.back() = n - assigned;
    for (std::size_t k = 0; k < sizes.size(); ++k) {
        if (sizes[k] == 0) throw ConfigError("split: part " + std::to_string(k) + " would be empty");
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, "split"));
    rng.shuffle(order.begin(), order.end());
    std::vector<std::size_t> part(n);
    std::size_t off = 0;
    for (std::size_t k = 0; k < sizes.size(); ++k) {
        for (std::size_t i = 0; i < sizes[k]; ++i) part[order[off + i]] = k;
        off += sizes[k];
    }
    std::vector<Dataset> out(sizes.size());
    for (std::size_t k = 0; k < sizes.size(); ++k) out[k].reserve(sizes[k]);
    for (std::size_t i = 0; i < n; ++i) out[part[i]].push_back(data[i]);
    return out;
}

namespace {

using nlohmann::json;

json to_json(const VDGExample& ex) {
    json j;
    j["schema_version"] = kDatasetSchemaVersion;
    j["id"] = ex.id;
    j["v"] = ex.video;
    j["a"] = ex.audio;
    j["h"] = ex.history;
    j["q"] = ex.question;
    j["y"] = ex.answer;
    std::vector<int> mask(ex.anchor_mask.begin(), ex.anchor_mask.end());
    j["anchor_mask"] = mask;
    std::vector<std::string> src;
    for (Source s : ex.anchor_source) src.emplace_back(1, source_code(s));
    j["anchor_source"] = src;
    return j;
}

VDGExample from_json(const json& j) {
    if (!j.is_object()) throw std::runtime_error("record is not an object");
    if (j.at("schema_version").get<int>() != kDatasetSchemaVersion) {
        throw std::runtime_error("unsupported schema_version");
    }
    VDGExample ex;
    ex.id = j.at("id").get<std::string>();
    ex.video = j.at("v").get<std::vector<Token>>();
    ex.audio = j.at("a").get<std::vector<Token>>();
    ex.history = j.at("h").get<std::vector<Token>>();
    ex.question = j.at("q").get<std::vector<Token>>();
    ex.answer = j.at("y").get<std::vector<Token>>();
    for (int m : j.at("anchor_mask").get<std::vector<int>>()) {
        if (m != 0 && m != 1) throw std::runtime_error("anchor_mask entries must be 0 or 1");
        ex.anchor_mask.push_back(m == 1);
    }
    for (const auto& s : j.at("anchor_source").get<std::vector<std::string>>()) {
        if (s.size() != 1) throw std::runtime_error("anchor_source entries must be one character");
        ex.anchor_source.push_back(source_from_code(s[0]));
    }
    if (ex.answer.empty()) throw std::runtime_error("answer must not be empty");
    if (ex.anchor_mask.size() != ex.answer.size() || ex.anchor_source.size() != ex.answer.size()) {
        throw std::runtime_error("anchor_mask/anchor_source length differs from y");
    }
    for (std::size_t t = 0; t < ex.answer.size(); ++t) {
        if (ex.anchor_mask[t] != (ex.anchor_source[t] != Source::None)) {
            throw std::runtime_error("anchor_source disagrees with anchor_mask at position " + std::to_string(t));
        }
    }
    return ex;
}

}  // namespace

void write_dataset(std::ostream& os, const Dataset& data) {
    for (const auto& ex : data) os << to_json(ex).dump() << '\n';
}

Dataset read_dataset(std::istream& is) {
    Dataset out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(from_json(json::parse(line)));
        } catch (const std::exception& e) {
            throw ParseError(e.what(), lineno);
        }
    }
    return out;
}

void save_dataset(const Dataset& data, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    write_dataset(os, data);
}

Dataset load_dataset(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    return read_dataset(is);
}

}  // namespace avdg
