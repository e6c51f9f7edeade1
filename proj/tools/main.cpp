#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "hyperfscil/config.hpp"
#include "hyperfscil/dataset.hpp"
#include "hyperfscil/errors.hpp"
#include "hyperfscil/experiment.hpp"
#include "hyperfscil/gradient_suite.hpp"

namespace {

using namespace hyperfscil;

enum ExitCode { ok = 0, other = 1, config = 2, dataset = 3, numerical = 4, protocol = 5 };

void print_report(const SessionReport& r) {
    std::cout << results_csv(r);
    std::cout << "pd=" << format_fixed(round2(r.pd), 2) << " average_acc=" << format_fixed(round2(r.average), 2)
              << " base_close_set_acc=" << format_fixed(round2(r.base_close_set_accuracy), 2) << "\n";
}

int run_command(const std::string& config_path, const std::optional<std::string>& out,
                const std::optional<std::uint64_t>& seed) {
    ExperimentConfig cfg = parse_config(config_path);
    if (seed) cfg.seed = *seed;
    if (out) cfg.out_dir = *out;
    cfg.validate();
    const auto run = run_experiment(cfg);
    print_report(run.report);
    emit_results(run.report, cfg, cfg.out_dir);
    std::cout << "wrote " << (std::filesystem::path(cfg.out_dir) / "results.csv").string() << " and summary.json\n";
    return ok;
}

int sweep_command(const std::string& config_path, const std::string& param, const std::vector<double>& values,
                  const std::optional<std::string>& out) {
    ExperimentConfig cfg = parse_config(config_path);
    if (out) cfg.out_dir = *out;
    const SweepParam p = parse_sweep_param(param);
    const auto rows = run_sweep(cfg, p, values);
    const std::string csv = sweep_csv(p, rows);
    std::cout << csv;
    std::error_code ec;
    std::filesystem::create_directories(cfg.out_dir, ec);
    if (ec) throw IoError("cannot create output directory '" + cfg.out_dir + "'");
    write_file_atomic(std::filesystem::path(cfg.out_dir) / ("sweep_" + param + ".csv"), csv);
    return ok;
}

int gen_data_command(const SyntheticSpec& spec, const std::string& out) {
    if (spec.classes == 0 || spec.train_per_class == 0 || spec.test_per_class == 0 || spec.dim == 0)
        throw ConfigError("gen-data: counts and dimension must be >= 1");
    const auto data = generate_synthetic(spec);
    save_csv_dataset(data, out);
    std::cout << "wrote " << data.samples().size() << " samples of dimension " << data.dim() << " to " << out << "\n";
    return ok;
}

int gradcheck_command(std::uint64_t seed) {
    bool all = true;
    for (const auto& r : run_gradient_suite(seed)) {
        std::cout << r.loss << " fixtures=" << r.fixtures << " max_rel_err=" << r.max_relative_error
                  << (r.passed() ? " ok" : " FAILED") << "\n";
        all = all && r.passed();
    }
    return all ? ok : numerical;
}

int report(const char* kind, const std::exception& e, int code) {
    std::cerr << "hyperfscil: " << kind << ": " << e.what() << "\n";
    return code;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hyperbolic open-set few-shot class-incremental learning"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::string> out;
    std::optional<std::uint64_t> seed;
    auto* run = app.add_subcommand("run", "Run the full session protocol and emit results");
    run->add_option("--config", config_path, "Config file")->required();
    run->add_option("--out", out, "Output directory");
    run->add_option("--seed", seed, "Override the config seed");

    std::string param;
    std::vector<double> values;
    auto* sweep = app.add_subcommand("sweep", "One protocol run per value of a parameter");
    sweep->add_option("--config", config_path, "Config file")->required();
    sweep->add_option("--param", param, "beta, curvature, tau or threshold")->required();
    sweep->add_option("--values", values, "Comma-separated values")->required()->delimiter(',');
    sweep->add_option("--out", out, "Output directory");

    SyntheticSpec spec;
    std::string data_out;
    auto* gen = app.add_subcommand("gen-data", "Write a synthetic Gaussian-blob dataset as CSV");
    gen->add_option("--classes", spec.classes)->required();
    gen->add_option("--train", spec.train_per_class)->required();
    gen->add_option("--test", spec.test_per_class)->required();
    gen->add_option("--dim", spec.dim)->required();
    gen->add_option("--sep", spec.separation)->required();
    gen->add_option("--seed", spec.seed)->required();
    gen->add_option("--out", data_out)->required();

    std::uint64_t check_seed = 0;
    auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every training loss");
    grad->add_option("--seed", check_seed, "Fixture seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? ok : config;
    }

    try {
        if (*run) return run_command(config_path, out, seed);
        if (*sweep) return sweep_command(config_path, param, values, out);
        if (*gen) return gen_data_command(spec, data_out);
        if (*grad) return gradcheck_command(check_seed);
    } catch (const ConfigError& e) {
        return report("config error", e, config);
    } catch (const DatasetError& e) {
        return report("dataset error", e, dataset);
    } catch (const IoError& e) {
        return report("io error", e, dataset);
    } catch (const NumericalError& e) {
        return report("numerical error", e, numerical);
    } catch (const DomainError& e) {
        return report("numerical error", e, numerical);
    } catch (const ProtocolError& e) {
        return report("protocol violation", e, protocol);
    } catch (const std::exception& e) {
        return report("error", e, other);
    }
    return other;
}
