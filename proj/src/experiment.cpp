#include "hyperfscil/experiment.hpp"

#include <json.hpp>

#include "hyperfscil/errors.hpp"

namespace hyperfscil {

using nlohmann::json;

PreparedData prepare_data(const ExperimentConfig& cfg) {
    cfg.validate();
    FeatureDataset data = cfg.data_path.empty() ? generate_synthetic(cfg.synthetic) : load_csv_dataset(cfg.data_path);
    SessionPlan plan = build_sessions(data, cfg.base_classes, cfg.ways, cfg.shots, cfg.sessions, cfg.seed);
    if (!cfg.standardize) return {std::move(data), std::move(plan), std::nullopt};
    auto scaler = FeatureScaler::fit(data, plan.base_train_indices);
    return {scaler.apply(data), std::move(plan), std::move(scaler)};
}

ProtocolConfig protocol_config(const ExperimentConfig& cfg, std::size_t input_dim) {
    ProtocolConfig out = cfg.model;
    out.backbone.input_dim = input_dim;
    return out;
}

ProtocolRun run_experiment(const ExperimentConfig& cfg) {
    const auto prepared = prepare_data(cfg);
    return run_protocol(prepared.data, prepared.plan, protocol_config(cfg, prepared.data.dim()), cfg.seed);
}

std::string results_csv(const SessionReport& report) {
    std::string out = "session,overall_acc,novel_acc,known_acc,unknown_acc\n";
    for (std::size_t i = 0; i < report.overall.size(); ++i) {
        out += std::to_string(i + 1) + "," + format_fixed(round2(report.overall[i]), 2) + ",";
        if (i < report.novel.size() && report.novel[i]) out += format_fixed(round2(*report.novel[i]), 2);
        out += ",";
        if (i == 0) out += format_fixed(round2(report.known_accuracy), 2);
        out += ",";
        if (i == 0 && report.unknown_accuracy) out += format_fixed(round2(*report.unknown_accuracy), 2);
        out += "\n";
    }
    return out;
}

std::string summary_json(const SessionReport& report, const ExperimentConfig& cfg) {
    json j;
    j["seed"] = cfg.seed;
    j["pd"] = report.pd;
    j["pd_rounded"] = round2(report.pd);
    j["average_accuracy"] = report.average;
    j["average_accuracy_rounded"] = round2(report.average);
    j["final_accuracy"] = report.overall.empty() ? 0.0 : report.overall.back();
    j["overall_accuracy"] = report.overall;
    json novel = json::array();
    for (const auto& n : report.novel) novel.push_back(n ? json(*n) : json(nullptr));
    j["novel_accuracy"] = novel;
    j["known_accuracy"] = report.known_accuracy;
    j["unknown_accuracy"] = report.unknown_accuracy ? json(*report.unknown_accuracy) : json(nullptr);
    j["base_close_set_accuracy"] = report.base_close_set_accuracy;
    j["gamma"] = cfg.model.rpl.gamma();
    j["routing"] = {{"base", report.routing.base}, {"novel", report.routing.novel}};
    json echo = json::array();
    for (const auto& [key, value] : config_entries(cfg)) echo.push_back({key, value});
    j["config"] = echo;
    return j.dump(2) + "\n";
}

ExperimentConfig config_from_summary(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("summary is not valid JSON: ") + e.what());
    }
    if (!j.contains("config") || !j["config"].is_array()) throw ConfigError("summary has no config echo");
    ConfigEntries entries;
    for (const auto& item : j["config"]) {
        if (!item.is_array() || item.size() != 2 || !item[0].is_string() || !item[1].is_string())
            throw ConfigError("malformed config echo entry");
        entries.emplace_back(item[0].get<std::string>(), item[1].get<std::string>());
    }
    return config_from_entries(entries);
}

void emit_results(const SessionReport& report, const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create output directory '" + out_dir.string() + "'");
    write_file_atomic(out_dir / "results.csv", results_csv(report));
    write_file_atomic(out_dir / "summary.json", summary_json(report, cfg));
}

SweepParam parse_sweep_param(const std::string& name) {
    if (name == "beta") return SweepParam::beta;
    if (name == "curvature") return SweepParam::curvature;
    if (name == "tau") return SweepParam::tau;
    if (name == "threshold") return SweepParam::threshold;
    throw ConfigError("'" + name + "' is not sweepable (beta, curvature, tau, threshold)");
}

const char* sweep_param_name(SweepParam p) noexcept {
    switch (p) {
    case SweepParam::beta: return "beta";
    case SweepParam::curvature: return "curvature";
    case SweepParam::tau: return "tau";
    case SweepParam::threshold: return "threshold";
    }
    return "?";
}

ExperimentConfig with_sweep_value(const ExperimentConfig& cfg, SweepParam p, double value) {
    ExperimentConfig out = cfg;
    switch (p) {
    case SweepParam::beta: out.model.rpl.beta = value; break;
    case SweepParam::curvature: out.model.ball.curvature = value; break;
    case SweepParam::tau: out.model.incremental_loss.tau = value; break;
    case SweepParam::threshold: out.model.rpl.threshold = value; break;
    }
    out.validate();
    return out;
}

std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, SweepParam p, std::span<const double> values) {
    if (values.empty()) throw ConfigError("sweep needs at least one value");
    std::vector<ExperimentConfig> configs;
    for (double v : values) configs.push_back(with_sweep_value(cfg, p, v));
    std::vector<SweepRow> rows;
    for (std::size_t i = 0; i < configs.size(); ++i) {
        const auto run = run_experiment(configs[i]);
        rows.push_back({values[i], run.report.overall.back(), run.report.pd, run.report.average});
    }
    return rows;
}

std::string sweep_csv(SweepParam p, std::span<const SweepRow> rows) {
    std::string out = std::string(sweep_param_name(p)) + ",final_acc,pd,average_acc\n";
    for (const auto& r : rows)
        out += format_double(r.value) + "," + format_fixed(round2(r.final_accuracy), 2) + "," +
               format_fixed(round2(r.pd), 2) + "," + format_fixed(round2(r.average), 2) + "\n";
    return out;
}

} // namespace hyperfscil
