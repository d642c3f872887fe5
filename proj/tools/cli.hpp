#pragma once

// Command-line front end: generate, train, eval, plot. run_cli is the whole
// program minus process exit so tests can drive it in-process.

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "cot/trainer.hpp"

namespace cot::cli {

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// SHA-1 of "blob <size>\0" + text, hex encoded, as `git hash-object` prints.
std::string git_blob_hash(const std::string& text);

struct RunManifest {
    std::string config_text;
    std::string config_hash;
    std::uint64_t seed_a = 0, seed_b = 0, data_seed = 0;
    std::string ablation;  // empty when no preset was applied
    std::string data_dir;
    std::string out_dir;
    std::string started_at, finished_at;  // UTC, ISO 8601
    std::vector<std::string> checkpoints;
    std::string train_log;
};

nlohmann::json to_json(const RunManifest& m);
RunManifest manifest_from_json(const nlohmann::json& j);

// Resolves config file, preset and overrides in that order.
CoTeachConfig resolve_config(const std::string& config_path, const std::string& ablation, int epochs);

}  // namespace cot::cli
