#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hyperfscil/config.hpp"
#include "hyperfscil/dataset.hpp"
#include "hyperfscil/protocol.hpp"

namespace hyperfscil {

struct PreparedData {
    FeatureDataset data;  // standardized when the config asks for it
    SessionPlan plan;
    std::optional<FeatureScaler> scaler;
};

// Loads or generates the dataset, builds the session plan and fits the scaler on the base
// session's training samples.
PreparedData prepare_data(const ExperimentConfig& cfg);

// The model configuration with the backbone input width taken from the dataset.
ProtocolConfig protocol_config(const ExperimentConfig& cfg, std::size_t input_dim);

ProtocolRun run_experiment(const ExperimentConfig& cfg);

// `session,overall_acc,novel_acc,known_acc,unknown_acc`, 2 decimals, blanks for undefined cells.
std::string results_csv(const SessionReport& report);
// PD, average accuracy, per-session values at full precision, the seed and the config echo.
std::string summary_json(const SessionReport& report, const ExperimentConfig& cfg);
// Re-parses the config echo of a summary.
ExperimentConfig config_from_summary(const std::string& json_text);

// Writes `results.csv` and `summary.json` under `out_dir`, each atomically.
void emit_results(const SessionReport& report, const ExperimentConfig& cfg, const std::filesystem::path& out_dir);

enum class SweepParam { beta, curvature, tau, threshold };

SweepParam parse_sweep_param(const std::string& name);
const char* sweep_param_name(SweepParam p) noexcept;
// A validated copy of `cfg` with the swept value set.
ExperimentConfig with_sweep_value(const ExperimentConfig& cfg, SweepParam p, double value);

struct SweepRow {
    double value = 0.0;
    double final_accuracy = 0.0;
    double pd = 0.0;
    double average = 0.0;
};

// One full protocol run per value with the config's seed. Every value is validated before the
// first run starts.
std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, SweepParam p, std::span<const double> values);
// `<param>,final_acc,pd,average_acc`, 2 decimals.
std::string sweep_csv(SweepParam p, std::span<const SweepRow> rows);

} // namespace hyperfscil
