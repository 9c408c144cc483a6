// Drives the efe executable as a subprocess.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;

namespace {

struct Run {
    int code = -1;
    std::string output;
};

Run run(const std::string& args, const std::string& env = "") {
    const std::string cmd = env + " " + EFE_CLI_PATH + " " + args + " 2>&1";
    Run r;
    FILE* pipe = ::popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    std::array<char, 4096> buf{};
    while (std::fgets(buf.data(), buf.size(), pipe)) r.output += buf.data();
    const int status = ::pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("efe_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

nlohmann::json read_json(const fs::path& p) {
    std::ifstream in(p);
    return nlohmann::json::parse(in);
}

}  // namespace

TEST_CASE("help lists every subcommand") {
    const Run r = run("--help");
    CHECK(r.code == 0);
    for (const char* sub : {"gen-data", "train", "eval", "ablation", "cross-camera", "gradcheck", "report"})
        CHECK(r.output.find(sub) != std::string::npos);
}

TEST_CASE("no subcommand is an error") { CHECK(run("").code != 0); }

TEST_CASE("unknown flags print usage and fail") {
    const Run r = run("gen-data --bogus 1");
    CHECK(r.code != 0);
    CHECK(r.output.find("--bogus") != std::string::npos);
    CHECK(r.output.find("Usage") != std::string::npos);
}

TEST_CASE("missing inputs name the path") {
    const fs::path dir = scratch("missing");
    const Run r = run("train --data " + (dir / "nope.efeds").string() + " --out " + dir.string());
    CHECK(r.code != 0);
    CHECK(r.output.find("nope.efeds") != std::string::npos);
    const Run e = run("eval --run " + (dir / "norun").string() + " --data " + (dir / "nope.efeds").string());
    CHECK(e.code != 0);
    CHECK(e.output.find("norun") != std::string::npos);
    const Run c = run("gen-data --config " + (dir / "nocfg.json").string());
    CHECK(c.code != 0);
    CHECK(c.output.find("nocfg.json") != std::string::npos);
}

TEST_CASE("flags beat the config file, which beats defaults") {
    const fs::path dir = scratch("precedence");
    std::ofstream(dir / "cfg.json") << R"({"seed": 5, "threads": 2, "data": {"n": 12}, "train": {"epochs": 3}})";
    const Run r = run("gen-data --config " + (dir / "cfg.json").string() + " --seed 11 --out " + (dir / "out").string());
    REQUIRE(r.code == 0);
    const auto cfg = read_json(dir / "out" / "config.json");
    CHECK(cfg["seed"] == 11);
    CHECK(cfg["threads"] == 2);
    CHECK(cfg["data"]["n"] == 12);
    CHECK(cfg["train"]["epochs"] == 3);
    CHECK(cfg["train"]["batch_size"] == 32);
    CHECK(fs::exists(dir / "out" / "dataset.efeds"));
}

TEST_CASE("default run directory honours the environment") {
    const fs::path dir = scratch("envdir");
    const Run r = run("gen-data --n 4 --seed 1", "EFE_RUN_DIR=" + dir.string());
    REQUIRE(r.code == 0);
    std::size_t runs = 0;
    for (const auto& e : fs::directory_iterator(dir)) {
        ++runs;
        CHECK(fs::exists(e.path() / "config.json"));
        CHECK(e.path().filename().string().find('_') == 16);
    }
    CHECK(runs == 1);
}

TEST_CASE("train, eval and report write their artifacts") {
    const fs::path dir = scratch("pipeline");
    REQUIRE(run("gen-data --n 40 --seed 3 --out " + (dir / "data").string()).code == 0);
    const std::string data = (dir / "data" / "dataset.efeds").string();
    const Run t = run("train --data " + data + " --epochs 1 --batch-size 16 --warmup-steps 1 --threads 1 --out " +
                      (dir / "run").string());
    REQUIRE(t.code == 0);
    for (const char* f : {"config.json", "metrics.csv", "model.ckpt", "checkpoints/epoch_1.ckpt"})
        CHECK(fs::exists(dir / "run" / f));
    const Run e = run("eval --run " + (dir / "run").string() + " --data " + data + " --out " + (dir / "eval").string());
    REQUIRE(e.code == 0);
    CHECK(read_json(dir / "eval" / "report.json")["count"] == 8);
    CHECK(fs::exists(dir / "eval" / "config.json"));
    const Run rep = run("report --run " + (dir / "run").string() + " --data " + data + " --out " + (dir / "rep").string());
    REQUIRE(rep.code == 0);
    CHECK(fs::exists(dir / "rep" / "residual_histogram.csv"));
    CHECK(fs::exists(dir / "rep" / "maps" / "depth_0.pgm"));
}
