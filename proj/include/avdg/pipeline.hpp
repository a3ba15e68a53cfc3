#pragma once

// Declarative two-stage experiment: synthetic data, detector models, anchor
// weights, retraining with the anchor-weighted loss next to a cross-entropy
// baseline, evaluation, and a report. Each stage is made of units (one
// detector, one weight file, one model, ...). A unit writes its artifacts
// under the run directory and manifest.json records their SHA-256 together
// with a fingerprint of the unit's config slice and input hashes.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "avdg/decoding.hpp"
#include "avdg/detection.hpp"
#include "avdg/model.hpp"
#include "avdg/synthetic.hpp"

namespace avdg {

inline constexpr int kPipelineSchemaVersion = 1;
inline constexpr const char* kOutputRootEnv = "AVDG_OUTPUT_ROOT";

struct DetectionSettings {
    std::vector<DetectionMethod> methods{DetectionMethod::Perplexity, DetectionMethod::Counterfactual};
    // Inputs kept by the P1 detector of the main counterfactual run.
    InputMask p1_mask = InputMask::question_only();
    // Further counterfactual runs, each with its own P1 detector and model.
    std::vector<InputMask> extra_p1_masks;
    double smoothing = 0.1;
    std::size_t precision_k = 1;

    bool uses(DetectionMethod m) const;
    bool operator==(const DetectionSettings&) const = default;
};

struct PipelineConfig {
    std::uint64_t seed = 1;
    std::filesystem::path output_dir = "runs/default";
    // Workers for detection and evaluation; 0 = one per hardware thread.
    // Results do not depend on it.
    std::size_t threads = 1;

    GenConfig data;
    std::array<double, 3> split{0.8, 0.1, 0.1};  // train, valid, test

    ModelConfig detector_q;
    ModelConfig detector_full;
    ModelConfig final_model;
    OptimizerConfig detector_optim;
    OptimizerConfig final_optim;

    DetectionSettings detection;
    BeamConfig beam;
    std::size_t report_examples = 3;

    // Copies the global seed into every component and fills unset vocab
    // sizes from the data config.
    PipelineConfig resolved() const;
    // Throws ConfigError listing every problem.
    void validate() const;
};

DetectionSettings parse_detection_settings(const nlohmann::json& j);
// Strict: unknown keys and per-component seeds are ConfigErrors.
PipelineConfig parse_pipeline_config(const nlohmann::json& j);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);
// Everything except output_dir and threads, with component seeds resolved.
nlohmann::json pipeline_config_json(const PipelineConfig& config);

// Relative paths resolve against $AVDG_OUTPUT_ROOT when it is set.
std::filesystem::path resolve_output_dir(const std::filesystem::path& dir);

enum class Stage { GenData, TrainDetectors, Detect, Retrain, Evaluate, Report };

inline constexpr std::array<Stage, 6> kAllStages{Stage::GenData, Stage::TrainDetectors, Stage::Detect,
                                                 Stage::Retrain,  Stage::Evaluate,       Stage::Report};

// "gen-data", "train-detectors", "detect", "retrain", "evaluate", "report".
std::string stage_name(Stage s);
Stage stage_from_name(const std::string& name);

// Label of each retrained model, baseline first: "baseline", "M2K-P",
// "M2K-CF", then "M2K-CF-<mask>" for each extra P1 mask.
std::vector<std::string> model_labels(const DetectionSettings& d);
// Label of each weight file: "P", "CF", "CF-<mask>".
std::vector<std::string> weight_labels(const DetectionSettings& d);

struct UnitRecord {
    std::string fingerprint;
    std::map<std::string, std::string> artifacts;  // relative path -> sha256
    bool operator==(const UnitRecord&) const = default;
};

using StageRecord = std::map<std::string, UnitRecord>;  // unit name -> record

struct Manifest {
    int schema_version = kPipelineSchemaVersion;
    std::uint64_t seed = 0;
    nlohmann::json config;
    std::map<std::string, StageRecord> stages;

    // Every artifact of one stage; empty when the stage has not run.
    std::map<std::string, std::string> artifacts(const std::string& stage) const;
    nlohmann::json to_json() const;
    static Manifest from_json(const nlohmann::json& j);
    bool operator==(const Manifest&) const = default;
};

Manifest load_manifest(const std::filesystem::path& run_dir);
void save_manifest(const std::filesystem::path& run_dir, const Manifest& manifest);

struct RunOptions {
    // Stages whose units all run even when their artifacts are current.
    std::set<Stage> force;
    // Progress lines; silent when empty.
    std::function<void(const std::string&)> log;
};

struct RunSummary {
    std::filesystem::path run_dir;
    std::vector<Stage> executed;  // stages where at least one unit ran
    std::vector<Stage> skipped;
    std::vector<std::string> executed_units;  // "<stage>/<unit>"
};

// Runs the given stages in pipeline order. A unit is skipped when the
// manifest holds its record with the same fingerprint, every recorded
// artifact is on disk with its hash, and no input of the unit was written
// earlier in this call. Missing inputs or a failure raise StageError naming
// the stage; the manifest keeps the records of completed units.
RunSummary run_stages(const PipelineConfig& config, const std::vector<Stage>& stages, const RunOptions& options = {});

// Stages gen-data through evaluate.
RunSummary run(const PipelineConfig& config, const RunOptions& options = {});
// Every stage, including the report.
RunSummary run_all(const PipelineConfig& config, const RunOptions& options = {});

}  // namespace avdg
