#pragma once

// Flat `key = value` experiment configuration. Blank lines and text after `#` are ignored;
// unknown or repeated keys are rejected. Every key has a documented default, so an empty file
// is a valid configuration.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "hyperfscil/dataset.hpp"
#include "hyperfscil/protocol.hpp"

namespace hyperfscil {

struct ExperimentConfig {
    std::uint64_t seed = 0;

    // Dataset: a CSV file when `data_path` is set, otherwise synthetic blobs.
    std::string data_path;
    SyntheticSpec synthetic;
    bool standardize = true;  // z-score features with base-session training statistics

    std::size_t base_classes = 6;
    std::size_t ways = 2;
    std::size_t shots = 5;
    std::size_t sessions = 2;

    ProtocolConfig model;
    std::string out_dir = "results";

    void validate() const;
    bool operator==(const ExperimentConfig&) const = default;
};

using ConfigEntries = std::vector<std::pair<std::string, std::string>>;

// Every key in canonical order with the value rendered so that it parses back exactly.
ConfigEntries config_entries(const ExperimentConfig& cfg);
// Applies entries over the defaults and validates. Errors name the offending key.
ExperimentConfig config_from_entries(const ConfigEntries& entries);

ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig parse_config(const std::filesystem::path& path);
std::string format_config(const ExperimentConfig& cfg);

std::vector<std::string> config_keys();

} // namespace hyperfscil
