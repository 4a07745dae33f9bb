// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "treesr/loss.hpp"
#include "treesr/model.hpp"
#include "treesr/training.hpp"

namespace treesr {

// Everything a run needs. Parsed from a flat `dotted.key = value` file
// (blank lines and '#' comments allowed); every key is checked against the
// schema and unknown or repeated keys are errors.
struct RunConfig {
    ModelConfig model;
    TrainConfig train;  // train.loss holds the loss settings
    std::filesystem::path train_manifest;
    std::filesystem::path test_manifest;
    std::filesystem::path output_root = "runs";
    std::string run_name = "run";
    std::uint64_t seed = 0;

    std::filesystem::path run_dir() const { return output_root / run_name; }
    void validate() const;
};

// Known keys in echo order.
const std::vector<std::string>& config_keys();

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);
std::string get_config_value(const RunConfig& cfg, const std::string& key);

RunConfig parse_run_config(const std::string& text, const std::string& origin = "<string>");
RunConfig load_run_config(const std::filesystem::path& path);
// Applies "key=value" overrides in order.
void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides);

// Every key with its resolved value, one per line; parse_run_config of the
// echo reproduces the config.
std::string echo_run_config(const RunConfig& cfg);

}  // namespace treesr
