// Drives the avdg executable as a user would.

#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>
#include <unistd.h>

#include "avdg/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
    int code = -1;
    std::string out;
    std::string err;
};

Result run_cli(const std::string& args, const fs::path& scratch) {
    const fs::path out = scratch / "stdout.txt", err = scratch / "stderr.txt";
    const std::string cmd = std::string(AVDG_CLI_PATH) + " " + args + " >" + out.string() + " 2>" + err.string();
    const int status = std::system(cmd.c_str());
    Result r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream o(out), e(err);
    std::stringstream so, se;
    so << o.rdbuf();
    se << e.rdbuf();
    r.out = so.str();
    r.err = se.str();
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

struct Scratch {
    fs::path path;
    Scratch() {
        path = fs::temp_directory_path() / ("avdg_cli_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
        std::ofstream(path / "config.json") << R"({
          "seed": 3,
          "data": {"n_examples": 40},
          "split": [0.6, 0.2, 0.2],
          "models": {
            "detector_q": {"d_model": 8, "n_layers": 1, "n_heads": 2},
            "detector_full": {"d_model": 8, "n_layers": 1, "n_heads": 2},
            "final": {"d_model": 8, "n_layers": 1, "n_heads": 2}
          },
          "optimizers": {"detector": {"epochs": 1, "batch_size": 8}, "final": {"epochs": 1, "batch_size": 8}},
          "beam": {"beam_size": 2, "max_decode_len": 10},
          "report": {"examples": 1}
        })";
    }
    ~Scratch() { fs::remove_all(path); }
    std::string config() const { return (path / "config.json").string(); }
};

}  // namespace

TEST_CASE("cli usage errors exit with status 2 and a JSON record") {
    Scratch s;
    Result r = run_cli("run-all --config " + (s.path / "absent.json").string(), s.path);
    CHECK(r.code == 2);
    const auto rec = nlohmann::json::parse(r.err);
    CHECK(rec.at("error") == "usage");
    CHECK(rec.at("exit_code") == 2);

    CHECK(run_cli("", s.path).code == 2);
    CHECK(run_cli("run-all --config " + s.config() + " --no-such-flag", s.path).code == 2);
    CHECK(run_cli("evaluate", s.path).code == 2);

    std::ofstream(s.path / "broken.json") << "{\"seed\": ";
    CHECK(run_cli("check-config " + (s.path / "broken.json").string(), s.path).code == 2);
    std::ofstream(s.path / "typo.json") << "{\"sead\": 1}";
    r = run_cli("check-config " + (s.path / "typo.json").string(), s.path);
    CHECK(r.code == 2);
    CHECK(r.err.find("sead") != std::string::npos);

    r = run_cli("check-config " + s.config(), s.path);
    CHECK(r.code == 0);
    CHECK(nlohmann::json::parse(r.out).at("data").at("seed") == 3);

    r = run_cli("detect -q --config " + s.config() + " --out " + (s.path / "empty").string(), s.path);
    CHECK(r.code == 1);
    CHECK(nlohmann::json::parse(r.err).at("stage") == "detect");
    CHECK(run_cli("detect -q --config " + s.config() + " --stage-override nonsense", s.path).code == 2);
}

TEST_CASE("cli run-all is reproducible and matches the sequential subcommands") {
    Scratch s;
    const std::string a = (s.path / "a").string(), b = (s.path / "b").string(), c = (s.path / "c").string();
    Result r = run_cli("run-all -q --config " + s.config() + " --out " + a, s.path);
    REQUIRE(r.code == 0);
    CHECK(nlohmann::json::parse(r.out).at("executed").size() == 6);
    REQUIRE(run_cli("run-all -q --config " + s.config() + " --out " + b, s.path).code == 0);
    CHECK(slurp(s.path / "a/manifest.json") == slurp(s.path / "b/manifest.json"));

    for (const char* stage : {"gen-data", "train-detectors", "detect", "retrain", "evaluate", "report"}) {
        REQUIRE(run_cli(std::string(stage) + " -q --config " + s.config() + " --out " + c, s.path).code == 0);
    }
    CHECK(slurp(s.path / "a/manifest.json") == slurp(s.path / "c/manifest.json"));

    r = run_cli("run-all -q --config " + s.config() + " --out " + a, s.path);
    CHECK(nlohmann::json::parse(r.out).at("executed").empty());
    r = run_cli("run-all -q --config " + s.config() + " --out " + a + " --stage-override evaluate", s.path);
    CHECK(nlohmann::json::parse(r.out).at("executed") == nlohmann::json::array({"evaluate", "report"}));

    // The seed flag reaches the manifest.
    REQUIRE(run_cli("gen-data -q --config " + s.config() + " --out " + b + " --seed 11", s.path).code == 0);
    CHECK(avdg::load_manifest(s.path / "b").seed == 11);

    // Relative output directories land under the output-root variable.
    const std::string env = std::string(avdg::kOutputRootEnv) + "=" + (s.path / "root").string() + " ";
    const std::string cmd = env + AVDG_CLI_PATH + " gen-data -q --config " + s.config() + " --out rel >/dev/null";
    CHECK(std::system(cmd.c_str()) == 0);
    CHECK(fs::exists(s.path / "root/rel/data/train.jsonl"));
}
