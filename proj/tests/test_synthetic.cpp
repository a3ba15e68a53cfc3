#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "avdg/errors.hpp"
#include "avdg/synthetic.hpp"

using namespace avdg;

namespace {

GenConfig small_config(double noise = 0.0) {
    GenConfig c;
    c.n_examples = 400;
    c.noise_rate = noise;
    c.seed = 17;
    return c;
}

std::string to_text(const Dataset& d) {
    std::ostringstream os;
    write_dataset(os, d);
    return os.str();
}

// A rule that reads one knowledge stream: copy a position, take the last
// element, or count a symbol and emit the matching number token.
struct Rule {
    enum Kind { Copy, Last, Count } kind;
    Token arg;
};

Token apply_rule(const Rule& r, std::span<const Token> stream, const GenConfig& c) {
    switch (r.kind) {
        case Rule::Copy: return stream[static_cast<std::size_t>(r.arg)];
        case Rule::Last: return stream.back();
        case Rule::Count:
            return c.number_vocab.begin + static_cast<Token>(std::count(stream.begin(), stream.end(), r.arg));
    }
    return -1;
}

std::vector<Rule> candidate_rules(const GenConfig& c, std::size_t len, VocabRange vocab) {
    std::vector<Rule> rules;
    for (std::size_t i = 0; i < len; ++i) rules.push_back({Rule::Copy, static_cast<Token>(i)});
    rules.push_back({Rule::Last, 0});
    for (Token s = vocab.begin; s < vocab.end(); ++s) rules.push_back({Rule::Count, s});
    (void)c;
    return rules;
}

VocabRange vocab_of(const GenConfig& c, Source s) {
    return s == Source::Video ? c.video_vocab : s == Source::Audio ? c.audio_vocab : c.history_vocab;
}

}  // namespace

TEST_CASE("generation is deterministic to the byte") {
    const GenConfig c = small_config(0.2);
    CHECK(to_text(generate(c)) == to_text(generate(c)));
    GenConfig other = c;
    other.seed = 18;
    CHECK(to_text(generate(c)) != to_text(generate(other)));
}

TEST_CASE("anchor_rate zero gives no anchors") {
    GenConfig c = small_config();
    c.anchor_rate = 0.0;
    for (const auto& ex : generate(c)) {
        CHECK(std::none_of(ex.anchor_mask.begin(), ex.anchor_mask.end(), [](bool b) { return b; }));
    }
}

TEST_CASE("examples satisfy the structural invariants") {
    const GenConfig c = small_config(0.3);
    for (const auto& ex : generate(c)) {
        REQUIRE(ex.answer.size() == ex.anchor_mask.size());
        REQUIRE(ex.answer.size() == ex.anchor_source.size());
        CHECK(ex.answer.size() >= 2);
        CHECK(ex.answer.size() <= c.answer_max_words + 1);
        CHECK(ex.answer.back() == special::kEos);
        CHECK(ex.video.size() == c.video_len);
        CHECK(ex.audio.size() == c.audio_len);
        CHECK(ex.history.size() == c.history_len);
        for (Token t : ex.video) CHECK(c.video_vocab.contains(t));
        for (Token t : ex.audio) CHECK(c.audio_vocab.contains(t));
        for (Token t : ex.history) CHECK(c.history_vocab.contains(t));
        for (Token t : ex.question) CHECK(c.question_vocab.contains(t));
        for (std::size_t p = 0; p < ex.answer.size(); ++p) {
            CHECK(ex.anchor_mask[p] == (ex.anchor_source[p] != Source::None));
            if (!ex.anchor_mask[p] && p + 1 < ex.answer.size()) CHECK(c.word_vocab.contains(ex.answer[p]));
        }
    }
}

TEST_CASE("question-only oracle predicts every filler on noise-free data") {
    const GenConfig c = small_config(0.0);
    const Dataset d = generate(c);
    // Lookup table from question to the filler sequence of its first example.
    std::map<std::vector<Token>, const VDGExample*> table;
    for (const auto& ex : d) table.emplace(ex.question, &ex);
    std::size_t hits = 0, total = 0;
    for (const auto& ex : d) {
        const VDGExample& ref = *table.at(ex.question);
        REQUIRE(ref.answer.size() == ex.answer.size());
        CHECK(ref.anchor_mask == ex.anchor_mask);
        for (std::size_t p = 0; p < ex.answer.size(); ++p) {
            if (ex.anchor_mask[p]) continue;
            ++total;
            hits += ref.answer[p] == ex.answer[p] ? 1 : 0;
        }
    }
    CHECK(total > 0);
    CHECK(hits == total);
}

TEST_CASE("knowledge oracle predicts every anchor from its source stream") {
    const GenConfig c = small_config(0.25);
    const Dataset d = generate(c);
    // Group anchor occurrences by (question, position) and search for a
    // single stream rule that explains all of them.
    std::map<std::pair<std::vector<Token>, std::size_t>, std::vector<const VDGExample*>> groups;
    for (const auto& ex : d) {
        for (std::size_t p = 0; p < ex.answer.size(); ++p) {
            if (ex.anchor_mask[p]) groups[{ex.question, p}].push_back(&ex);
        }
    }
    REQUIRE(!groups.empty());
    std::size_t explained = 0;
    for (const auto& [key, members] : groups) {
        const std::size_t p = key.second;
        const Source src = members.front()->anchor_source[p];
        const std::size_t len = members.front()->stream(src).size();
        bool found = false;
        for (const Rule& r : candidate_rules(c, len, vocab_of(c, src))) {
            const bool all = std::all_of(members.begin(), members.end(), [&](const VDGExample* ex) {
                return ex->anchor_source[p] == src && apply_rule(r, ex->stream(src), c) == ex->answer[p];
            });
            if (all) {
                found = true;
                break;
            }
        }
        explained += found ? 1 : 0;
    }
    CHECK(explained == groups.size());
}

TEST_CASE("resampling a source stream moves its anchors but never the fillers") {
    const GenConfig c = small_config(0.0);
    const auto templates = make_templates(c);
    const Dataset d = generate(c);
    std::mt19937_64 gen(99);
    std::size_t changed = 0, trials = 0;
    for (const auto& ex : d) {
        const auto t = std::find_if(templates.begin(), templates.end(),
                                    [&](const AnswerTemplate& tt) { return tt.question == ex.question; });
        REQUIRE(t != templates.end());
        for (Source s : {Source::Video, Source::Audio, Source::History}) {
            const VocabRange vocab = vocab_of(c, s);
            std::vector<Token> fresh(ex.stream(s).size());
            std::uniform_int_distribution<Token> pick(vocab.begin, vocab.end() - 1);
            for (auto& tok : fresh) tok = pick(gen);
            for (std::size_t p = 0; p < t->slots.size(); ++p) {
                if (const auto* word = std::get_if<Token>(&t->slots[p])) {
                    CHECK(*word == ex.answer[p]);  // fillers ignore every stream
                    continue;
                }
                const auto& slot = std::get<AnchorSlot>(t->slots[p]);
                if (slot.source != s) continue;
                const Rule r{slot.kind == AnchorKind::Copy   ? Rule::Copy
                             : slot.kind == AnchorKind::Last ? Rule::Last
                                                             : Rule::Count,
                             slot.arg};
                CHECK(apply_rule(r, ex.stream(s), c) == ex.answer[p]);
                ++trials;
                changed += apply_rule(r, fresh, c) != ex.answer[p] ? 1 : 0;
            }
        }
    }
    REQUIRE(trials > 100);
    CHECK(static_cast<double>(changed) / static_cast<double>(trials) > 0.9);
}

TEST_CASE("overlapping vocabulary partitions are rejected") {
    GenConfig c;
    c.audio_vocab.begin = c.video_vocab.begin + 3;
    CHECK_THROWS_AS(generate(c), ConfigError);
    GenConfig bad_rate;
    bad_rate.anchor_rate = 1.0;
    CHECK_THROWS_AS(bad_rate.validate(), ConfigError);
}

TEST_CASE("split sizes, coverage and determinism") {
    GenConfig c = small_config();
    c.n_examples = 100;
    const Dataset d = generate(c);
    const double f3[] = {0.8, 0.1, 0.1};
    const auto parts = split(d, f3, 5);
    REQUIRE(parts.size() == 3);
    CHECK(parts[0].size() == 80);
    CHECK(parts[1].size() == 10);
    CHECK(parts[2].size() == 10);
    CHECK(split(d, f3, 5) == parts);

    std::vector<std::string> ids, joined;
    for (const auto& ex : d) ids.push_back(to_text({ex}));
    for (const auto& p : parts) {
        for (const auto& ex : p) joined.push_back(to_text({ex}));
    }
    std::sort(ids.begin(), ids.end());
    std::sort(joined.begin(), joined.end());
    CHECK(ids == joined);

    const double f1[] = {1.0};
    CHECK(split(d, f1, 5).front() == d);
}

TEST_CASE("split rejects bad fractions and empty parts") {
    GenConfig c = small_config();
    c.n_examples = 5;
    const Dataset d = generate(c);
    const double empty_part[] = {0.95, 0.05};
    CHECK_THROWS_AS(split(d, empty_part, 1), ConfigError);
    const double bad_sum[] = {0.5, 0.2};
    CHECK_THROWS_AS(split(d, bad_sum, 1), ConfigError);
    const double negative[] = {1.2, -0.2};
    CHECK_THROWS_AS(split(d, negative, 1), ConfigError);
}

TEST_CASE("dataset files round-trip") {
    const Dataset d = generate(small_config(0.2));
    std::stringstream ss;
    write_dataset(ss, d);
    CHECK(read_dataset(ss) == d);

    std::stringstream empty;
    write_dataset(empty, {});
    CHECK(empty.str().empty());
    CHECK(read_dataset(empty).empty());

    const auto path = std::filesystem::temp_directory_path() / "avdg_roundtrip.jsonl";
    save_dataset(d, path);
    CHECK(load_dataset(path) == d);
    std::filesystem::remove(path);
}

TEST_CASE("hand-written fixture parses to the expected fields") {
    const Dataset d = load_dataset(std::filesystem::path(AVDG_FIXTURE_DIR) / "two_examples.jsonl");
    REQUIRE(d.size() == 2);
    CHECK(d[0].id == "fx0");
    CHECK(d[0].video == std::vector<Token>{9, 10, 11, 12, 13, 14});
    CHECK(d[0].question == std::vector<Token>{73, 80, 81});
    CHECK(d[0].answer == std::vector<Token>{100, 11, 101, 36, 2});
    CHECK(d[0].anchor_mask == std::vector<bool>{false, true, false, true, false});
    CHECK(d[0].anchor_source[1] == Source::Video);
    CHECK(d[0].anchor_source[3] == Source::Audio);
    CHECK(d[1].id == "fx1");
    CHECK(d[1].audio == std::vector<Token>{40, 41, 42, 43});
    CHECK(d[1].anchor_source[2] == Source::History);
    CHECK(d[1].anchor_mask == std::vector<bool>{true, false, true, false});
}

TEST_CASE("malformed lines report their line number") {
    std::stringstream ss;
    write_dataset(ss, generate(small_config()));
    std::string text = ss.str();
    const auto second = text.find('\n') + 1;
    const auto third = text.find('\n', second) + 1;
    text.insert(third, "{\"schema_version\":1,\"id\":\"broken\"\n");
    std::stringstream in(text);
    try {
        (void)read_dataset(in);
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.line() == 3);
    }

    std::stringstream mismatch(
        "{\"schema_version\":1,\"id\":\"x\",\"v\":[9],\"a\":[33],\"h\":[49],\"q\":[73],\"y\":[100,2],"
        "\"anchor_mask\":[0],\"anchor_source\":[\"-\",\"-\"]}\n");
    CHECK_THROWS_AS(read_dataset(mismatch), ParseError);
}
