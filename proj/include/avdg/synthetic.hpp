#pragma once

// Synthetic grounded-dialogue data with planted anchor tokens.
//
// Every example carries three knowledge streams (video, audio, history), a
// question and an answer. The question selects one of a fixed set of answer
// templates. Template filler words are a function of the question alone;
// anchor slots read the knowledge streams (copy a position, take the last
// element, or count a symbol), so anchor_mask marks exactly the positions
// that cannot be predicted without the knowledge.

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace avdg {

using Token = std::int32_t;

namespace special {
inline constexpr Token kPad = 0;
inline constexpr Token kBos = 1;
inline constexpr Token kEos = 2;
inline constexpr Token kNull = 3;
inline constexpr Token kSepVideo = 4;
inline constexpr Token kSepAudio = 5;
inline constexpr Token kSepHistory = 6;
inline constexpr Token kSepQuestion = 7;
inline constexpr Token kSepAnswer = 8;
inline constexpr Token kCount = 9;
}  // namespace special

enum class Source : std::uint8_t { None, Video, Audio, History };

char source_code(Source s);  // 'V', 'A', 'H', or '-'
Source source_from_code(char c);

struct VDGExample {
    std::string id;
    std::vector<Token> video;
    std::vector<Token> audio;
    std::vector<Token> history;
    std::vector<Token> question;
    // Answer tokens including the terminating EOS; T = answer.size().
    std::vector<Token> answer;
    std::vector<bool> anchor_mask;
    // Per answer position; Source::None where anchor_mask is false.
    std::vector<Source> anchor_source;

    std::span<const Token> stream(Source s) const;
    bool operator==(const VDGExample&) const = default;
};

using Dataset = std::vector<VDGExample>;

struct VocabRange {
    Token begin = 0;
    Token size = 0;
    Token end() const { return begin + size; }
    bool contains(Token t) const { return t >= begin && t < end(); }
};

enum class AnchorKind : std::uint8_t { Copy, Last, Count };

struct GenConfig {
    std::size_t n_examples = 2000;

    VocabRange video_vocab{special::kCount, 24};
    VocabRange audio_vocab{special::kCount + 24, 16};
    VocabRange history_vocab{special::kCount + 40, 24};
    VocabRange question_vocab{special::kCount + 64, 24};
    VocabRange word_vocab{special::kCount + 88, 32};
    // Count anchors emit number tokens; the range size bounds the count.
    VocabRange number_vocab{special::kCount + 120, 7};

    std::size_t video_len = 6;
    std::size_t audio_len = 4;
    std::size_t history_len = 6;
    std::size_t question_len = 3;

    std::size_t n_templates = 12;
    std::size_t answer_min_words = 4;
    std::size_t answer_max_words = 7;

    // Fraction of answer words that are anchors (rounded per template).
    double anchor_rate = 0.3;
    // Fraction of examples whose filler words are resampled at random.
    double noise_rate = 0.2;

    std::array<double, 3> kind_weights{0.6, 0.25, 0.15};    // copy, last, count
    std::array<double, 3> source_weights{0.4, 0.3, 0.3};    // video, audio, history

    std::uint64_t seed = 1;

    // One past the largest token id in use.
    Token vocab_size() const;
    // Throws ConfigError listing every violation.
    void validate() const;
};

struct AnchorSlot {
    Source source = Source::Video;
    AnchorKind kind = AnchorKind::Copy;
    // Stream position for Copy; symbol token for Count; unused for Last.
    Token arg = 0;
};

struct AnswerTemplate {
    std::vector<Token> question;
    // Filler word token or anchor slot, per answer word (EOS not included).
    std::vector<std::variant<Token, AnchorSlot>> slots;
};

// Templates are a function of (config, seed) only.
std::vector<AnswerTemplate> make_templates(const GenConfig& config);

Dataset generate(const GenConfig& config);

// Partitions `data` into 1..3 disjoint parts with the given fractions. Each
// part keeps the original relative order. Throws ConfigError on bad
// fractions or an empty part.
std::vector<Dataset> split(const Dataset& data, std::span<const double> fractions, std::uint64_t seed);

inline constexpr int kDatasetSchemaVersion = 1;

// One JSON object per line:
//   {"schema_version":1,"id":..,"v":[..],"a":[..],"h":[..],"q":[..],"y":[..],
//    "anchor_mask":[0|1,..],"anchor_source":["V"|"A"|"H"|"-",..]}
void write_dataset(std::ostream& os, const Dataset& data);
Dataset read_dataset(std::istream& is);
void save_dataset(const Dataset& data, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace avdg
