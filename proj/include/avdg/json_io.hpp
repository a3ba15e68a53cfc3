#pragma once

// JSON forms of the configuration records. Readers reject unknown keys with
// a ConfigError so typos in experiment configs surface early; missing keys
// keep their defaults.

#include <json.hpp>

#include "avdg/decoding.hpp"
#include "avdg/errors.hpp"
#include "avdg/model.hpp"
#include "avdg/synthetic.hpp"

namespace avdg {

void to_json(nlohmann::json& j, const VocabRange& r);
void from_json(const nlohmann::json& j, VocabRange& r);
void to_json(nlohmann::json& j, const GenConfig& c);
void from_json(const nlohmann::json& j, GenConfig& c);
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const OptimizerConfig& c);
void from_json(const nlohmann::json& j, OptimizerConfig& c);
void to_json(nlohmann::json& j, const BeamConfig& c);
void from_json(const nlohmann::json& j, BeamConfig& c);
void to_json(nlohmann::json& j, const InputMask& m);
void from_json(const nlohmann::json& j, InputMask& m);

// Throws ConfigError naming the first key of `j` not in `allowed`.
void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                         const char* where);

// Reads `key` into `out` if present; type errors become ConfigError.
template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out, const char* where) {
    auto it = j.find(key);
    if (it == j.end()) return;
    try {
        out = it->template get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string(where) + "." + key + ": " + e.what());
    }
}

}  // namespace avdg
