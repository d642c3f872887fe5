#include <doctest.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "cli.hpp"
#include "cot/data.hpp"

using namespace cot;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out, err;
};

Run invoke(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cot::cli::run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("cot_cli_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

std::set<std::string> lines_of(const std::string& text) {
    std::set<std::string> s;
    std::istringstream is(text);
    for (std::string l; std::getline(is, l);) s.insert(l);
    return s;
}

}  // namespace

TEST_CASE("git blob hash matches git hash-object") {
    CHECK(cli::git_blob_hash("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
    CHECK(cli::git_blob_hash("hello world\n") == "3b18e512dba79e4c8300dd08aeb37f8e728b8dad");
}

TEST_CASE("generate, train one epoch, eval and plot end to end") {
    const auto root = scratch("e2e");
    const auto data = (root / "data").string(), run = (root / "run").string();
    const auto t0 = std::chrono::steady_clock::now();

    auto g = invoke({"generate", "--count", "2", "--out", data});
    REQUIRE(g.code == 0);
    auto t = invoke({"train", "--data", data, "--out", run, "--epochs", "1", "--quiet"});
    REQUIRE_MESSAGE(t.code == 0, t.err);
    const auto ckpt = (fs::path(run) / "checkpoints" / "epoch_0001.ckpt").string();
    CHECK(fs::exists(ckpt));
    auto e = invoke({"eval", "--checkpoint", ckpt, "--data", data});
    REQUIRE_MESSAGE(e.code == 0, e.err);
    CHECK(e.out.find("AEPE (px)") != std::string::npos);
    CHECK(e.out.find(eval_csv_header()) != std::string::npos);

    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    MESSAGE("generate + train + eval: " << seconds << " s");
    CHECK(seconds < 60.0);

    // The manifest is complete and hashes its own config.
    auto j = nlohmann::json::parse(slurp(fs::path(run) / "manifest.json"));
    auto m = cli::manifest_from_json(j);
    CHECK(m.config_hash == cli::git_blob_hash(slurp(fs::path(run) / "config.txt")));
    CHECK(m.checkpoints == std::vector<std::string>{ckpt});
    CHECK(m.seed_a == 1);
    CHECK_FALSE(m.started_at.empty());
    CHECK_FALSE(m.finished_at.empty());

    auto p = invoke({"plot", "--log", (fs::path(run) / "train_log.csv").string(), "--out", (root / "plots").string(),
                  "--checkpoint", ckpt, "--data", data});
    REQUIRE_MESSAGE(p.code == 0, p.err);
    CHECK(fs::exists(root / "plots" / "loss_curve.svg"));
    CHECK(fs::exists(root / "plots" / "scene_0000_disp.png"));
    CHECK(fs::exists(root / "plots" / "scene_0000_error.png"));
    CHECK(invoke({"plot", "--log", (fs::path(run) / "train_log.csv").string(), "--out", (root / "plots").string()})
              .code == 2);

    // Replaying the manifest reproduces the loss log byte for byte.
    const auto replay = (root / "replay").string();
    auto r = invoke({"train", "--manifest", (fs::path(run) / "manifest.json").string(), "--out", replay, "--quiet"});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(slurp(fs::path(run) / "train_log.csv") == slurp(fs::path(replay) / "train_log.csv"));

    // Existing outputs are never overwritten silently.
    auto again = invoke({"train", "--data", data, "--out", run, "--epochs", "1", "--quiet"});
    CHECK(again.code == 2);
    CHECK(again.err.find("AlreadyExists") != std::string::npos);
    CHECK(invoke({"generate", "--count", "1", "--out", data}).code == 2);
    CHECK(invoke({"generate", "--count", "1", "--out", data, "--force"}).code == 0);
    CHECK(load_dataset(data).size() == 1);
}

TEST_CASE("ablation presets differ only in swap, threshold and loss flags") {
    const auto g = lines_of(to_text(cli::resolve_config("", "g", 0)));
    const auto a = lines_of(to_text(cli::resolve_config("", "a", 0)));
    const std::set<std::string> allowed{"swap", "dynamic_threshold", "use_smoothness", "use_augmentation"};
    std::set<std::string> differing;
    for (const auto* side : {&g, &a})
        for (const auto& l : *side)
            if (!g.count(l) || !a.count(l)) differing.insert(l.substr(0, l.find('=')));
    CHECK_FALSE(differing.empty());
    for (const auto& k : differing) CHECK_MESSAGE(allowed.count(k), k);
    CHECK(invoke({"train", "--data", "x", "--out", "y", "--ablation", "z"}).code != 0);
}

TEST_CASE("eval on perfect predictions reports zero error") {
    const auto root = scratch("perfect");
    SceneRanges r;
    r.width = 32;
    r.height = 24;
    r.max_disparity = 8;
    const auto samples = generate_dataset(3, 5, r);
    save_dataset(root / "data", samples);
    fs::create_directories(root / "pred");
    for (const auto& s : samples) {
        DisparityMap d(s.height(), s.width());
        d.values = *s.gt_disparity;
        save_pfm(root / "pred" / (s.id + ".pfm"), d);
    }
    auto e = invoke({"eval", "--predictions", (root / "pred").string(), "--data", (root / "data").string()});
    REQUIRE_MESSAGE(e.code == 0, e.err);
    CHECK(e.out.find("AEPE (px)   0.000") != std::string::npos);
    CHECK(e.out.find("F1 (%)      0.00") != std::string::npos);
}

TEST_CASE("typed errors give a nonzero exit code") {
    const auto root = scratch("errors");
    auto e = invoke({"eval", "--checkpoint", (root / "missing.ckpt").string(), "--data", (root / "none").string()});
    CHECK(e.code == 2);
    CHECK(e.err.rfind("error: ", 0) == 0);
    fs::create_directories(root);
    std::ofstream(root / "bad.cfg") << "learning_rate=3\n";
    auto t = invoke({"train", "--data", (root / "none").string(), "--out", (root / "run").string(), "--config",
                  (root / "bad.cfg").string()});
    CHECK(t.code == 2);
    CHECK(t.err.find("InvalidConfig") != std::string::npos);
    std::ofstream(root / "log.csv") << "not,a,log\n";
    CHECK(invoke({"plot", "--log", (root / "log.csv").string(), "--out", (root / "p").string()}).code == 2);
    CHECK(invoke({}).code != 0);
}
