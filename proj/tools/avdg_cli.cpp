// Command-line entry point for the pipeline stages.
//
//   avdg <stage> --config run.json [--out DIR] [--seed N] [--stage-override STAGE]...
//
// Exit codes: 0 success, 1 stage or I/O failure, 2 usage or configuration
// error. Failures print one JSON record to stderr.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "avdg/errors.hpp"
#include "avdg/pipeline.hpp"

namespace {

using nlohmann::json;

int fail(int code, const std::string& kind, const std::string& message, const std::string& stage = {}) {
    json record{{"error", kind}, {"message", message}, {"exit_code", code}};
    if (!stage.empty()) record["stage"] = stage;
    std::cerr << record.dump() << '\n';
    return code;
}

struct Common {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> overrides;
    std::optional<std::size_t> threads;
    bool quiet = false;
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--config", c.config, "Pipeline config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", c.out, "Run directory; overrides output_dir");
    sub->add_option("--seed", c.seed, "Global seed; overrides the config");
    sub->add_option("--stage-override", c.overrides, "Re-run this stage even if its artifacts are current")
        ->take_all();
    sub->add_option("--threads", c.threads, "Workers for detection and evaluation (0 = all cores)");
    sub->add_flag("-q,--quiet", c.quiet, "No progress lines on stderr");
}

avdg::PipelineConfig load(const Common& c) {
    avdg::PipelineConfig cfg = avdg::load_pipeline_config(c.config);
    if (!c.out.empty()) cfg.output_dir = c.out;
    if (c.seed) cfg.seed = *c.seed;
    if (c.threads) cfg.threads = *c.threads;
    cfg.validate();
    return cfg;
}

json summary_json(const avdg::RunSummary& s) {
    json executed = json::array(), skipped = json::array();
    for (auto st : s.executed) executed.push_back(avdg::stage_name(st));
    for (auto st : s.skipped) skipped.push_back(avdg::stage_name(st));
    return json{{"run_dir", s.run_dir.string()}, {"executed", executed}, {"skipped", skipped}};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Anchor-weighted grounded dialogue pipeline"};
    app.require_subcommand(1);

    Common common;
    std::vector<std::pair<CLI::App*, std::optional<avdg::Stage>>> subs;
    for (avdg::Stage s : avdg::kAllStages) {
        auto* sub = app.add_subcommand(avdg::stage_name(s), "Run the " + avdg::stage_name(s) + " stage");
        add_common(sub, common);
        subs.emplace_back(sub, s);
    }
    auto* all = app.add_subcommand("run-all", "Run every stage, skipping those already current");
    add_common(all, common);
    subs.emplace_back(all, std::nullopt);

    std::string check_path;
    auto* check = app.add_subcommand("check-config", "Validate a config and print it with seeds resolved");
    check->add_option("config", check_path, "Pipeline config (JSON)")->required()->check(CLI::ExistingFile);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail(2, "usage", e.what());
    }

    try {
        if (check->parsed()) {
            const auto cfg = avdg::load_pipeline_config(check_path);
            cfg.validate();
            std::cout << avdg::pipeline_config_json(cfg).dump(2) << '\n';
            return 0;
        }
        for (const auto& [sub, stage] : subs) {
            if (!sub->parsed()) continue;
            const avdg::PipelineConfig cfg = load(common);
            avdg::RunOptions opts;
            for (const auto& name : common.overrides) opts.force.insert(avdg::stage_from_name(name));
            if (!common.quiet) opts.log = [](const std::string& line) { std::cerr << "[avdg] " << line << '\n'; };
            const avdg::RunSummary s = stage ? avdg::run_stages(cfg, {*stage}, opts) : avdg::run_all(cfg, opts);
            std::cout << summary_json(s).dump() << '\n';
            return 0;
        }
    } catch (const avdg::ConfigError& e) {
        return fail(2, "config", e.what());
    } catch (const avdg::StageError& e) {
        return fail(1, "stage", e.what(), e.stage());
    } catch (const avdg::IoError& e) {
        return fail(1, "io", e.what());
    } catch (const std::exception& e) {
        return fail(1, "internal", e.what());
    }
    return fail(2, "usage", "no subcommand");
}
