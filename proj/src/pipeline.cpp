#include "avdg/pipeline.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <memory>

#include "avdg/anchor_loss.hpp"
#include "avdg/errors.hpp"
#include "avdg/hash.hpp"
#include "avdg/json_io.hpp"
#include "avdg/parallel.hpp"
#include "avdg/report.hpp"

namespace avdg {

namespace fs = std::filesystem;
using nlohmann::json;

bool DetectionSettings::uses(DetectionMethod m) const {
    return std::find(methods.begin(), methods.end(), m) != methods.end();
}

PipelineConfig PipelineConfig::resolved() const {
    PipelineConfig c = *this;
    c.data.seed = seed;
    const auto vocab = static_cast<std::size_t>(c.data.vocab_size());
    for (ModelConfig* m : {&c.detector_q, &c.detector_full, &c.final_model}) {
        m->seed = seed;
        if (m->vocab_size == 0) m->vocab_size = vocab;
    }
    c.detector_optim.seed = seed;
    c.final_optim.seed = seed;
    return c;
}

namespace {

template <typename F>
void collect(std::string& msg, const char* where, F&& check) {
    try {
        check();
    } catch (const ConfigError& e) {
        msg += std::string(" ") + where + ": " + e.what() + ";";
    }
}

}  // namespace

void PipelineConfig::validate() const {
    const PipelineConfig c = resolved();
    std::string msg;
    if (output_dir.empty()) msg += " output_dir is empty;";
    collect(msg, "data", [&] { c.data.validate(); });
    double total = 0.0;
    for (double f : split) {
        if (!(f >= 0.0)) msg += " split fractions must be non-negative;";
        total += f;
    }
    if (std::abs(total - 1.0) > 1e-9) msg += " split fractions must sum to 1;";
    if (split[0] <= 0.0 || split[2] <= 0.0) msg += " train and test splits must be non-empty;";

    const auto vocab = static_cast<std::size_t>(c.data.vocab_size());
    const std::pair<const char*, const ModelConfig*> roles[] = {
        {"models.detector_q", &c.detector_q}, {"models.detector_full", &c.detector_full}, {"models.final", &c.final_model}};
    for (const auto& [name, m] : roles) {
        collect(msg, name, [&] { m->validate(); });
        if (m->vocab_size != vocab) {
            msg += std::string(" ") + name + ".vocab_size " + std::to_string(m->vocab_size) +
                   " does not match the data vocabulary " + std::to_string(vocab) + ";";
        }
    }
    collect(msg, "optimizers.detector", [&] { c.detector_optim.validate(); });
    collect(msg, "optimizers.final", [&] { c.final_optim.validate(); });
    collect(msg, "beam", [&] { c.beam.validate(); });

    const auto& d = c.detection;
    if (d.methods.empty()) msg += " detection.methods is empty;";
    for (std::size_t i = 0; i < d.methods.size(); ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            if (d.methods[i] == d.methods[j]) msg += " detection.methods lists " + method_code(d.methods[i]) + " twice;";
        }
    }
    std::vector<InputMask> masks{d.p1_mask};
    masks.insert(masks.end(), d.extra_p1_masks.begin(), d.extra_p1_masks.end());
    for (std::size_t i = 0; i < masks.size(); ++i) {
        if (masks[i] == InputMask::full()) msg += " a P1 mask must ablate some knowledge stream;";
        for (std::size_t j = 0; j < i; ++j) {
            if (masks[i] == masks[j]) msg += " P1 mask " + masks[i].code() + " is repeated;";
        }
    }
    if (!d.extra_p1_masks.empty() && !d.uses(DetectionMethod::Counterfactual)) {
        msg += " detection.extra_p1_masks needs the CF method;";
    }
    if (!(d.smoothing >= 0.0 && d.smoothing <= 1.0)) msg += " detection.smoothing must lie in [0, 1];";
    if (d.precision_k == 0 || d.precision_k > c.data.answer_min_words) {
        msg += " detection.precision_k must be in 1.." + std::to_string(c.data.answer_min_words) + ";";
    }
    if (!msg.empty()) throw ConfigError("pipeline config:" + msg);
}

namespace {

void reject_seed(const json& j, const char* where) {
    if (j.is_object() && j.contains("seed")) {
        throw ConfigError(std::string(where) + ".seed: component seeds derive from the top-level seed");
    }
}

template <typename T>
void read_section(const json& j, const char* key, T& out) {
    auto it = j.find(key);
    if (it == j.end()) return;
    reject_seed(*it, key);
    out = it->template get<T>();
}

}  // namespace

DetectionSettings parse_detection_settings(const json& j) {
    constexpr const char* where = "detection";
    reject_unknown_keys(j, {"methods", "p1_mask", "extra_p1_masks", "smoothing", "precision_k"}, where);
    DetectionSettings d;
    if (j.contains("methods")) {
        std::vector<std::string> codes;
        read_opt(j, "methods", codes, where);
        d.methods.clear();
        for (const auto& code : codes) d.methods.push_back(method_from_code(code));
    }
    read_opt(j, "p1_mask", d.p1_mask, where);
    read_opt(j, "extra_p1_masks", d.extra_p1_masks, where);
    read_opt(j, "smoothing", d.smoothing, where);
    read_opt(j, "precision_k", d.precision_k, where);
    return d;
}

PipelineConfig parse_pipeline_config(const json& j) {
    reject_unknown_keys(j,
                        {"schema_version", "seed", "output_dir", "threads", "data", "split", "models", "optimizers",
                         "detection", "beam", "report"},
                        "config");
    int version = kPipelineSchemaVersion;
    read_opt(j, "schema_version", version, "config");
    if (version != kPipelineSchemaVersion) {
        throw ConfigError("config: unsupported schema_version " + std::to_string(version));
    }
    PipelineConfig c;
    read_opt(j, "seed", c.seed, "config");
    std::string out = c.output_dir.string();
    read_opt(j, "output_dir", out, "config");
    c.output_dir = out;
    read_opt(j, "threads", c.threads, "config");
    read_section(j, "data", c.data);
    read_opt(j, "split", c.split, "config");

    if (auto it = j.find("models"); it != j.end()) {
        reject_unknown_keys(*it, {"detector_q", "detector_full", "final"}, "models");
        read_section(*it, "detector_q", c.detector_q);
        read_section(*it, "detector_full", c.detector_full);
        read_section(*it, "final", c.final_model);
    }
    if (auto it = j.find("optimizers"); it != j.end()) {
        reject_unknown_keys(*it, {"detector", "final"}, "optimizers");
        read_section(*it, "detector", c.detector_optim);
        read_section(*it, "final", c.final_optim);
    }
    if (auto it = j.find("detection"); it != j.end()) c.detection = parse_detection_settings(*it);
    read_section(j, "beam", c.beam);
    if (auto it = j.find("report"); it != j.end()) {
        reject_unknown_keys(*it, {"examples"}, "report");
        read_opt(*it, "examples", c.report_examples, "report");
    }
    return c;
}

PipelineConfig load_pipeline_config(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(is);
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
    return parse_pipeline_config(j);
}

json pipeline_config_json(const PipelineConfig& config) {
    const PipelineConfig c = config.resolved();
    json methods = json::array();
    for (auto m : c.detection.methods) methods.push_back(method_code(m));
    return json{{"schema_version", kPipelineSchemaVersion},
                {"seed", c.seed},
                {"data", c.data},
                {"split", c.split},
                {"models", {{"detector_q", c.detector_q}, {"detector_full", c.detector_full}, {"final", c.final_model}}},
                {"optimizers", {{"detector", c.detector_optim}, {"final", c.final_optim}}},
                {"detection",
                 {{"methods", methods},
                  {"p1_mask", c.detection.p1_mask},
                  {"extra_p1_masks", c.detection.extra_p1_masks},
                  {"smoothing", c.detection.smoothing},
                  {"precision_k", c.detection.precision_k}}},
                {"beam", c.beam},
                {"report", {{"examples", c.report_examples}}}};
}

fs::path resolve_output_dir(const fs::path& dir) {
    if (dir.is_absolute()) return dir;
    const char* root = std::getenv(kOutputRootEnv);
    if (root && *root) return fs::path(root) / dir;
    return dir;
}

std::string stage_name(Stage s) {
    switch (s) {
        case Stage::GenData: return "gen-data";
        case Stage::TrainDetectors: return "train-detectors";
        case Stage::Detect: return "detect";
        case Stage::Retrain: return "retrain";
        case Stage::Evaluate: return "evaluate";
        case Stage::Report: return "report";
    }
    throw ContractViolation("unknown stage");
}

Stage stage_from_name(const std::string& name) {
    for (Stage s : kAllStages) {
        if (stage_name(s) == name) return s;
    }
    throw ConfigError("unknown stage '" + name + "'");
}

std::vector<std::string> weight_labels(const DetectionSettings& d) {
    std::vector<std::string> out;
    if (d.uses(DetectionMethod::Perplexity)) out.push_back("P");
    if (d.uses(DetectionMethod::Counterfactual)) {
        out.push_back("CF");
        for (const auto& m : d.extra_p1_masks) out.push_back("CF-" + m.code());
    }
    return out;
}

std::vector<std::string> model_labels(const DetectionSettings& d) {
    std::vector<std::string> out{"baseline"};
    for (const auto& w : weight_labels(d)) out.push_back("M2K-" + w);
    return out;
}

std::map<std::string, std::string> Manifest::artifacts(const std::string& stage) const {
    std::map<std::string, std::string> out;
    const auto it = stages.find(stage);
    if (it == stages.end()) return out;
    for (const auto& [unit, rec] : it->second) out.insert(rec.artifacts.begin(), rec.artifacts.end());
    return out;
}

json Manifest::to_json() const {
    json st = json::object();
    for (const auto& [name, units] : stages) {
        json u = json::object();
        for (const auto& [unit, rec] : units) {
            u[unit] = json{{"fingerprint", rec.fingerprint}, {"artifacts", rec.artifacts}};
        }
        st[name] = u;
    }
    return json{{"schema_version", schema_version}, {"seed", seed}, {"config", config}, {"stages", st}};
}

Manifest Manifest::from_json(const json& j) {
    try {
        Manifest m;
        m.schema_version = j.at("schema_version").get<int>();
        if (m.schema_version != kPipelineSchemaVersion) {
            throw IoError("manifest: unsupported schema_version " + std::to_string(m.schema_version));
        }
        m.seed = j.at("seed").get<std::uint64_t>();
        m.config = j.at("config");
        for (const auto& [name, units] : j.at("stages").items()) {
            StageRecord& rec = m.stages[name];
            for (const auto& [unit, u] : units.items()) {
                rec[unit] = UnitRecord{u.at("fingerprint").get<std::string>(),
                                       u.at("artifacts").get<std::map<std::string, std::string>>()};
            }
        }
        return m;
    } catch (const json::exception& e) {
        throw IoError(std::string("manifest: ") + e.what());
    }
}

Manifest load_manifest(const fs::path& run_dir) {
    const fs::path path = run_dir / "manifest.json";
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path.string());
    try {
        return Manifest::from_json(json::parse(is));
    } catch (const json::parse_error& e) {
        throw IoError("manifest " + path.string() + ": " + e.what());
    }
}

void save_manifest(const fs::path& run_dir, const Manifest& manifest) {
    fs::create_directories(run_dir);
    const fs::path tmp = run_dir / "manifest.json.tmp";
    {
        std::ofstream os(tmp);
        if (!os) throw IoError("cannot write " + tmp.string());
        os << manifest.to_json().dump(2) << '\n';
        if (!os) throw IoError("write failed for " + tmp.string());
    }
    fs::rename(tmp, run_dir / "manifest.json");
}

namespace {

std::vector<InputMask> p1_masks(const DetectionSettings& d) {
    std::vector<InputMask> out;
    if (!d.uses(DetectionMethod::Counterfactual)) return out;
    out.push_back(d.p1_mask);
    out.insert(out.end(), d.extra_p1_masks.begin(), d.extra_p1_masks.end());
    return out;
}

struct Paths {
    static std::string train() { return "data/train.jsonl"; }
    static std::string valid() { return "data/valid.jsonl"; }
    static std::string test() { return "data/test.jsonl"; }
    static std::string detector_full() { return "detectors/full.ckpt"; }
    static std::string detector_q(const InputMask& m) { return "detectors/q-" + m.code() + ".ckpt"; }
    static std::string weights(const std::string& label) { return "weights/" + label + ".jsonl"; }
    static std::string quality(const std::string& label) { return "weights/" + label + ".quality.json"; }
    static std::string model(const std::string& label) { return "models/" + label + ".ckpt"; }
    static std::string eval(const std::string& label, const char* ext) { return "eval/" + label + ext; }
};

constexpr const char* kEvalExts[] = {".metrics.json", ".generations.jsonl", ".tokens.csv"};

Stage producer_of(const std::string& rel) {
    const std::string dir = rel.substr(0, rel.find('/'));
    if (dir == "data") return Stage::GenData;
    if (dir == "detectors") return Stage::TrainDetectors;
    if (dir == "weights") return Stage::Detect;
    if (dir == "models") return Stage::Retrain;
    if (dir == "eval") return Stage::Evaluate;
    return Stage::Report;
}

// One independently cached piece of a stage. `run` returns the relative
// paths it wrote.
struct Unit {
    std::string name;
    std::vector<std::string> inputs;
    json config;
    std::function<std::vector<std::string>()> run;
};

class Planner {
public:
    Planner(const PipelineConfig& config, fs::path dir) : c_(config.resolved()), all_(pipeline_config_json(c_)),
                                                          dir_(std::move(dir)) {}

    std::vector<Unit> units(Stage s) const {
        switch (s) {
            case Stage::GenData: return gen_data();
            case Stage::TrainDetectors: return train_detectors();
            case Stage::Detect: return detect();
            case Stage::Retrain: return retrain();
            case Stage::Evaluate: return evaluate();
            case Stage::Report: return report();
        }
        throw ContractViolation("unknown stage");
    }

private:
    fs::path at(const std::string& rel) const { return dir_ / rel; }

    void prepare(const std::string& rel) const { fs::create_directories(at(rel).parent_path()); }

    std::vector<Unit> gen_data() const {
        return {{"data", {}, {{"data", all_["data"]}, {"split", all_["split"]}}, [this] {
                     const auto parts = split(generate(c_.data), c_.split, c_.seed);
                     prepare(Paths::train());
                     save_dataset(parts[0], at(Paths::train()));
                     save_dataset(parts[1], at(Paths::valid()));
                     save_dataset(parts[2], at(Paths::test()));
                     return std::vector<std::string>{Paths::train(), Paths::valid(), Paths::test()};
                 }}};
    }

    Unit detector_unit(const std::string& name, const ModelConfig& m, const InputMask& mask, const std::string& role,
                       const std::string& rel) const {
        json cfg = {{"model", m}, {"optimizer", all_["optimizers"]["detector"]}, {"mask", mask}};
        return {name, {Paths::train()}, cfg, [this, m, mask, role, rel] {
                    const Dataset train_set = load_dataset(at(Paths::train()));
                    const auto result =
                        train(init_params(m), m, train_set, cross_entropy_loss(), c_.detector_optim, mask);
                    prepare(rel);
                    save_checkpoint(at(rel), result.params, {m, false, c_.detector_optim.epochs, c_.seed, role});
                    return std::vector<std::string>{rel};
                }};
    }

    std::vector<Unit> train_detectors() const {
        std::vector<Unit> out{
            detector_unit("full", c_.detector_full, InputMask::full(), "detector_full", Paths::detector_full())};
        for (const auto& mask : p1_masks(c_.detection)) {
            out.push_back(detector_unit("q-" + mask.code(), c_.detector_q, mask, "detector_q", Paths::detector_q(mask)));
        }
        return out;
    }

    // Quality is measured on the unsmoothed degrees; the saved weights are
    // the smoothed ones used for retraining.
    std::vector<std::string> save_detection(const std::string& label, const Dataset& train_set,
                                            const std::vector<AnchorWeights>& raw) const {
        const std::size_t k = c_.detection.precision_k;
        json q = {{"k", k}};
        try {
            const DetectionQuality dq = detection_quality(raw, train_set, k);
            q["auc"] = dq.auc;
            q["precision_at_k"] = dq.precision_at_k;
        } catch (const UndefinedMetricError&) {
            q["auc"] = nullptr;
            q["precision_at_k"] = nullptr;
        }
        std::vector<AnchorWeights> smoothed;
        smoothed.reserve(raw.size());
        for (const auto& w : raw) smoothed.push_back(smooth_weights(w, c_.detection.smoothing));
        prepare(Paths::weights(label));
        save_weights(smoothed, at(Paths::weights(label)));
        std::ofstream os(at(Paths::quality(label)));
        if (!os) throw IoError("cannot write " + Paths::quality(label));
        os << q.dump(2) << '\n';
        return {Paths::weights(label), Paths::quality(label)};
    }

    std::vector<Unit> detect() const {
        const json cfg = {{"smoothing", c_.detection.smoothing}, {"precision_k", c_.detection.precision_k}};
        std::vector<Unit> out;
        if (c_.detection.uses(DetectionMethod::Perplexity)) {
            out.push_back({"P", {Paths::train(), Paths::detector_full()}, cfg, [this] {
                               const Dataset train_set = load_dataset(at(Paths::train()));
                               const Checkpoint full = load_checkpoint(at(Paths::detector_full()));
                               const ModelRef ref{full.params, full.meta.config};
                               return save_detection("P", train_set,
                                                     parallel_map(train_set.size(), c_.threads, [&](std::size_t i) {
                                                         return perplexity_weights(ref, train_set[i]);
                                                     }));
                           }});
        }
        const auto masks = p1_masks(c_.detection);
        for (std::size_t i = 0; i < masks.size(); ++i) {
            const InputMask mask = masks[i];
            const std::string label = i == 0 ? "CF" : "CF-" + mask.code();
            json ucfg = cfg;
            ucfg["p1_mask"] = mask;
            out.push_back({label, {Paths::train(), Paths::detector_full(), Paths::detector_q(mask)}, ucfg,
                           [this, mask, label] {
                               const Dataset train_set = load_dataset(at(Paths::train()));
                               const Checkpoint full = load_checkpoint(at(Paths::detector_full()));
                               const Checkpoint q = load_checkpoint(at(Paths::detector_q(mask)));
                               const ModelRef full_ref{full.params, full.meta.config};
                               const ModelRef q_ref{q.params, q.meta.config};
                               return save_detection(
                                   label, train_set, parallel_map(train_set.size(), c_.threads, [&](std::size_t e) {
                                       return counterfactual_weights(q_ref, mask, full_ref, train_set[e]);
                                   }));
                           }});
        }
        return out;
    }

    std::vector<Unit> retrain() const {
        const json cfg = {{"model", all_["models"]["final"]}, {"optimizer", all_["optimizers"]["final"]}};
        const auto fit = [this](const std::string& label, const std::optional<std::string>& weights) {
            const Dataset train_set = load_dataset(at(Paths::train()));
            TokenLossFn loss = cross_entropy_loss();
            if (weights) {
                loss = anchor_weighted_loss(
                    std::make_shared<const FinalWeightTable>(build_weight_table(load_weights(at(*weights)))));
            }
            // Every model starts from the same initialization.
            const auto result = train(init_params(c_.final_model), c_.final_model, train_set, loss, c_.final_optim);
            prepare(Paths::model(label));
            save_checkpoint(at(Paths::model(label)), result.params,
                            {c_.final_model, false, c_.final_optim.epochs, c_.seed, label});
            return std::vector<std::string>{Paths::model(label)};
        };
        std::vector<Unit> out{{"baseline", {Paths::train()}, cfg, [fit] { return fit("baseline", std::nullopt); }}};
        for (const auto& w : weight_labels(c_.detection)) {
            const std::string label = "M2K-" + w, rel = Paths::weights(w);
            out.push_back({label, {Paths::train(), rel}, cfg, [fit, label, rel] { return fit(label, rel); }});
        }
        return out;
    }

    std::vector<Unit> evaluate() const {
        std::vector<Unit> out;
        for (const auto& label : model_labels(c_.detection)) {
            out.push_back({label, {Paths::test(), Paths::model(label)}, {{"beam", all_["beam"]}}, [this, label] {
                               const Dataset test_set = load_dataset(at(Paths::test()));
                               const Checkpoint ck = load_checkpoint(at(Paths::model(label)));
                               const EvalReport r = evaluate_model(ck.params, ck.meta.config, test_set, c_.beam,
                                                                   InputMask::full(), c_.threads);
                               write_eval_report(dir_ / "eval", label, r);
                               std::vector<std::string> written;
                               for (const char* ext : kEvalExts) written.push_back(Paths::eval(label, ext));
                               return written;
                           }});
        }
        return out;
    }

    std::vector<Unit> report() const {
        std::vector<std::string> inputs{Paths::train()};
        for (const auto& w : weight_labels(c_.detection)) {
            inputs.push_back(Paths::weights(w));
            inputs.push_back(Paths::quality(w));
        }
        for (const auto& m : model_labels(c_.detection)) {
            inputs.push_back(Paths::eval(m, ".metrics.json"));
            inputs.push_back(Paths::eval(m, ".tokens.csv"));
        }
        const json cfg = {{"report", all_["report"]}, {"detection", all_["detection"]}};
        return {{"report", inputs, cfg, [this] { return emit_report(dir_).files; }}};
    }

    PipelineConfig c_;
    json all_;
    fs::path dir_;
};

bool artifacts_current(const fs::path& dir, const UnitRecord& rec) {
    for (const auto& [rel, hash] : rec.artifacts) {
        if (!fs::exists(dir / rel) || sha256_file(dir / rel) != hash) return false;
    }
    return true;
}

}  // namespace

RunSummary run_stages(const PipelineConfig& config, const std::vector<Stage>& stages, const RunOptions& options) {
    config.validate();
    const PipelineConfig c = config.resolved();
    RunSummary summary;
    summary.run_dir = resolve_output_dir(c.output_dir);
    const fs::path& dir = summary.run_dir;
    fs::create_directories(dir);

    Manifest manifest;
    if (fs::exists(dir / "manifest.json")) manifest = load_manifest(dir);
    manifest.schema_version = kPipelineSchemaVersion;
    manifest.seed = c.seed;
    manifest.config = pipeline_config_json(c);
    save_manifest(dir, manifest);

    const auto say = [&](const std::string& line) {
        if (options.log) options.log(line);
    };

    const Planner planner(c, dir);
    std::set<std::string> written;  // paths produced earlier in this call
    for (Stage s : kAllStages) {
        if (std::find(stages.begin(), stages.end(), s) == stages.end()) continue;
        const std::string name = stage_name(s);
        const std::vector<Unit> units = planner.units(s);
        StageRecord& record = manifest.stages[name];

        // Records of units no longer planned are dropped.
        for (auto it = record.begin(); it != record.end();) {
            const bool planned = std::any_of(units.begin(), units.end(), [&](const Unit& u) { return u.name == it->first; });
            it = planned ? std::next(it) : record.erase(it);
        }

        bool ran = false;
        for (const Unit& unit : units) {
            json inputs = json::object();
            bool input_rewritten = false;
            for (const auto& rel : unit.inputs) {
                if (!fs::exists(dir / rel)) {
                    save_manifest(dir, manifest);
                    throw StageError(name,
                                     "missing input " + rel + "; run stage " + stage_name(producer_of(rel)) + " first");
                }
                inputs[rel] = sha256_file(dir / rel);
                input_rewritten = input_rewritten || written.contains(rel);
            }
            const std::string fingerprint = sha256_hex(
                json{{"stage", name}, {"unit", unit.name}, {"config", unit.config}, {"inputs", inputs}}.dump());

            const auto prev = record.find(unit.name);
            if (!input_rewritten && !options.force.contains(s) && prev != record.end() &&
                prev->second.fingerprint == fingerprint && artifacts_current(dir, prev->second)) {
                continue;
            }

            say(name + "/" + unit.name + ": running");
            record.erase(unit.name);
            std::vector<std::string> outputs;
            try {
                outputs = unit.run();
            } catch (const std::exception& e) {
                save_manifest(dir, manifest);
                throw StageError(name, unit.name + ": " + e.what());
            }
            UnitRecord rec{fingerprint, {}};
            for (const auto& rel : outputs) {
                rec.artifacts[rel] = sha256_file(dir / rel);
                written.insert(rel);
            }
            record[unit.name] = std::move(rec);
            save_manifest(dir, manifest);
            summary.executed_units.push_back(name + "/" + unit.name);
            ran = true;
        }
        say(name + (ran ? ": done" : ": up to date"));
        (ran ? summary.executed : summary.skipped).push_back(s);
    }
    save_manifest(dir, manifest);
    return summary;
}

RunSummary run(const PipelineConfig& config, const RunOptions& options) {
    return run_stages(config, {Stage::GenData, Stage::TrainDetectors, Stage::Detect, Stage::Retrain, Stage::Evaluate},
                      options);
}

RunSummary run_all(const PipelineConfig& config, const RunOptions& options) {
    return run_stages(config, std::vector<Stage>(kAllStages.begin(), kAllStages.end()), options);
}

}  // namespace avdg
