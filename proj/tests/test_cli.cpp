#include <doctest.h>

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "hyperfscil/config.hpp"
#include "hyperfscil/dataset.hpp"
#include "hyperfscil/errors.hpp"
#include "hyperfscil/experiment.hpp"
#include "oracles.hpp"

using namespace hyperfscil;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("hyperfscil_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

ExperimentConfig quick_config(std::uint64_t seed) {
    ExperimentConfig cfg;
    cfg.seed = seed;
    cfg.synthetic.seed = seed;
    cfg.sessions = 1;
    cfg.model.base_train.epochs = 10;
    cfg.model.incremental_train.epochs = 4;
    cfg.validate();
    return cfg;
}

SessionReport table_report() {
    SessionReport r;
    r.overall = {63.55, 62.88, 61.05, 58.13, 55.68, 54.59, 52.93, 50.39, 49.48};
    r.novel.push_back(std::nullopt);
    for (std::size_t i = 1; i < r.overall.size(); ++i) r.novel.push_back(10.0 * static_cast<double>(i));
    r.known_accuracy = 63.55;
    r.unknown_accuracy = 70.25;
    r.pd = performance_drop(r.overall);
    r.average = average_accuracy(r.overall);
    return r;
}

} // namespace

TEST_CASE("empty config yields documented defaults") {
    const auto cfg = parse_config_text("");
    CHECK(cfg.model.rpl.beta == 0.7);
    CHECK(cfg.model.rpl.gamma() == doctest::Approx(0.3).epsilon(1e-15));
    CHECK(cfg.model.ball.curvature == 0.1);
    CHECK(cfg.model.incremental_loss.tau == 1.0);
    CHECK(cfg.model.incremental_loss.eta == 1.0);
    CHECK(cfg.model.rpl.threshold == 0.75);
    CHECK(cfg == parse_config_text("# only a comment\n\n   \n"));
}

TEST_CASE("config values and constraint errors") {
    CHECK(parse_config_text("beta = 0.5").model.rpl.gamma() == 0.5);
    CHECK_THROWS_WITH_AS(parse_config_text("beta = 1.2"), doctest::Contains("beta must lie in [0,1]"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config_text("curvature = 0"), doctest::Contains("curvature"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config_text("tau = -1"), doctest::Contains("tau"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config_text("colour = red"), doctest::Contains("unknown key 'colour'"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config_text("seed = 1\nseed = 2"), doctest::Contains("more than once"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config_text("seed 1"), doctest::Contains("line 1"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config_text("seed = x"), doctest::Contains("seed"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config_text("base.milestones = 80"), doctest::Contains("base.milestones"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("base.milestones = 80:0.1,40:0.1"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("backbone.frozen_prefix_layers = 9"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("data.classes = 7"), ConfigError);
    CHECK_THROWS_AS(parse_config(fs::path("/nonexistent/hyperfscil.cfg")), ConfigError);
}

TEST_CASE("config text round-trips") {
    const auto cfg = parse_config_text(
        "seed = 9\nbeta = 0.25\ncurvature = 0.3\nbackbone.hidden_dims = 12,7\nbase.milestones = 40:0.1,50:0.5\n"
        "rpl.geometry = euclidean_only\nreplay = false   # trailing comment\nout_dir = some dir\n");
    CHECK(cfg.model.backbone.hidden_dims == std::vector<std::size_t>{12, 7});
    CHECK(cfg.model.base_train.sgd.milestones.size() == 2);
    CHECK(cfg.out_dir == "some dir");
    CHECK(parse_config_text(format_config(cfg)) == cfg);
    CHECK(config_entries(cfg).size() == config_keys().size());
}

TEST_CASE("summary echo re-parses to the same config") {
    const auto cfg = parse_config_text("seed = 4\ntau = 0.8\nthreshold = 0.73\ninc.clip_norm = 2.5");
    const auto json = summary_json(table_report(), cfg);
    CHECK(config_from_summary(json) == cfg);
    CHECK_THROWS_AS(config_from_summary("{not json"), ConfigError);
    CHECK_THROWS_AS(config_from_summary("{}"), ConfigError);
}

TEST_CASE("synthetic blobs") {
    const SyntheticSpec spec{6, 30, 40, 5, 10.0, 3};
    const auto data = generate_synthetic(spec);
    CHECK(data == generate_synthetic(spec));
    CHECK_FALSE(data == generate_synthetic({6, 30, 40, 5, 10.0, 4}));
    CHECK(data.class_count() == 6);
    CHECK(data.dim() == 5);
    for (ClassId c = 0; c < 6; ++c) {
        CHECK(data.indices_of(c, Split::train).size() == 30);
        CHECK(data.indices_of(c, Split::test).size() == 40);
    }

    std::map<std::size_t, std::vector<double>> means;
    for (ClassId c = 0; c < 6; ++c) {
        std::vector<double> mu(5, 0.0);
        for (auto i : data.indices_of(c, Split::train))
            for (std::size_t k = 0; k < 5; ++k) mu[k] += data.samples()[i].features[k] / 30.0;
        means[c] = mu;
    }
    std::size_t ok = 0, total = 0;
    for (const auto& s : data.samples()) {
        if (s.split != Split::test) continue;
        ++total;
        ok += oracles::nearest_mean(s.features, means) == s.label;
    }
    CHECK(static_cast<double>(ok) / static_cast<double>(total) >= 0.99);
    CHECK_THROWS_AS(generate_synthetic({0, 1, 1, 2, 1.0, 0}), DatasetError);
}

TEST_CASE("dataset CSV parsing") {
    const auto two = parse_csv_dataset("split,class,f0,f1\ntrain,0,1.5,-2\ntest,0,0.25,3e-1\n");
    CHECK(two.samples().size() == 2);
    CHECK(two.samples()[1].features == std::vector<double>{0.25, 0.3});
    CHECK(two.samples()[1].split == Split::test);

    try {
        parse_csv_dataset("split,class,f0,f1,f2,f3\ntrain,0,1,2,3,4\ntrain,0,1,2,3\n");
        FAIL("expected a ragged row error");
    } catch (const RaggedRowError& e) {
        CHECK(e.line() == 3);
    }
    CHECK_THROWS_AS(parse_csv_dataset("split,class,f0\ntrain,0,abc\n"), NonNumericFeatureError);
    CHECK_THROWS_AS(parse_csv_dataset("split,class,f0\ntrain,0,nan\n"), NonNumericFeatureError);
    CHECK_THROWS_AS(parse_csv_dataset("split,class,f0\ntrain,0,1\ntrain,2,1\n"), ClassIdError);
    CHECK_THROWS_AS(parse_csv_dataset("split,class,f0\ntrain,-1,1\n"), ClassIdError);
    CHECK_THROWS_AS(parse_csv_dataset("split,class,f0\nvalid,0,1\n"), DatasetParseError);
    CHECK_THROWS_AS(parse_csv_dataset("split,label,f0\ntrain,0,1\n"), DatasetParseError);
    CHECK_THROWS_AS(parse_csv_dataset(""), DatasetParseError);
    CHECK_THROWS_AS(load_csv_dataset("/nonexistent/data.csv"), IoError);
}

TEST_CASE("dataset CSV round trip is exact") {
    const auto dir = scratch_dir("csv");
    const auto data = generate_synthetic({4, 5, 3, 7, 6.0, 11});
    save_csv_dataset(data, dir / "data.csv");
    CHECK(load_csv_dataset(dir / "data.csv") == data);
    const auto text = read_file(dir / "data.csv");
    CHECK(text.rfind("split,class,f0,f1,f2,f3,f4,f5,f6\n", 0) == 0);
    CHECK(text.find('\r') == std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("feature scaler") {
    const FeatureDataset data(2, {{{1.0, 5.0}, 0, Split::train}, {{3.0, 5.0}, 0, Split::train}, {{100.0, 5.0}, 0, Split::test}});
    const std::vector<std::size_t> train{0, 1};
    const auto scaler = FeatureScaler::fit(data, train);
    CHECK(scaler.mean == std::vector<double>{2.0, 5.0});
    CHECK(scaler.scale == std::vector<double>{1.0, 1.0});
    CHECK(scaler.apply(std::vector<double>{4.0, 6.0}) == std::vector<double>{2.0, 1.0});
    CHECK(scaler.apply(data).samples()[2].features == std::vector<double>{98.0, 0.0});
    CHECK_THROWS_AS(scaler.apply(std::vector<double>{1.0}), ShapeError);
    CHECK_THROWS_AS(FeatureScaler::fit(data, std::vector<std::size_t>{}), ContractError);
}

TEST_CASE("locale-independent number formatting") {
    CHECK(format_fixed(14.07, 2) == "14.07");
    CHECK(format_fixed(1234567.0, 2) == "1234567.00");
    CHECK(format_double(0.1) == "0.1");
    CHECK(std::stod(format_double(1.0 / 3.0)) == 1.0 / 3.0);
}

TEST_CASE("results emission") {
    const auto dir = scratch_dir("emit");
    const auto cfg = parse_config_text("seed = 5");
    emit_results(table_report(), cfg, dir);
    const auto summary = nlohmann::json::parse(read_file(dir / "summary.json"));
    CHECK(summary["pd_rounded"].get<double>() == 14.07);
    CHECK(summary["average_accuracy_rounded"].get<double>() == 56.52);
    CHECK(summary["seed"].get<std::uint64_t>() == 5);
    CHECK(summary["novel_accuracy"][0].is_null());
    const auto csv = read_file(dir / "results.csv");
    CHECK(csv.rfind("session,overall_acc,novel_acc,known_acc,unknown_acc\n1,63.55,,63.55,70.25\n2,62.88,10.00,,\n", 0) == 0);

    SessionReport single;
    single.overall = {80.0};
    single.novel = {std::nullopt};
    single.known_accuracy = 80.0;
    emit_results(single, cfg, dir);
    const auto rows = read_file(dir / "results.csv");
    CHECK(rows == "session,overall_acc,novel_acc,known_acc,unknown_acc\n1,80.00,,80.00,\n");
    std::size_t leftovers = 0;
    for (const auto& entry : fs::directory_iterator(dir)) leftovers += entry.path().extension() == ".tmp";
    CHECK(leftovers == 0);
    CHECK_THROWS_AS(emit_results(single, cfg, "/proc/hyperfscil/denied"), IoError);
    fs::remove_all(dir);
}

TEST_CASE("identical config and seed give byte-identical results") {
    const auto cfg = quick_config(6);
    CHECK(results_csv(run_experiment(cfg).report) == results_csv(run_experiment(cfg).report));
}

TEST_CASE("parameter sweeps") {
    const auto cfg = quick_config(7);
    CHECK(parse_sweep_param("curvature") == SweepParam::curvature);
    CHECK_THROWS_AS(parse_sweep_param("lambda_open"), ConfigError);
    const std::vector<double> bad{0.5, 1.5};
    CHECK_THROWS_AS(run_sweep(cfg, SweepParam::beta, bad), ConfigError);
    CHECK_THROWS_AS(run_sweep(cfg, SweepParam::tau, std::vector<double>{0.0}), ConfigError);
    CHECK_THROWS_AS(run_sweep(cfg, SweepParam::beta, std::vector<double>{}), ConfigError);

    const std::vector<double> betas{0.0, 0.3, 0.7, 1.0};
    const auto rows = run_sweep(cfg, SweepParam::beta, betas);
    CHECK(rows.size() == 4);
    auto euclid = cfg;
    euclid.model.rpl.beta = 1.0;
    euclid.model.base_train.geometry = RplGeometry::euclidean_only;
    const auto baseline = run_experiment(euclid).report;
    CHECK(rows[3].final_accuracy == baseline.overall.back());
    CHECK(rows[3].pd == baseline.pd);
    CHECK(rows[3].average == baseline.average);

    const auto plain = run_experiment(cfg).report;
    const auto one = run_sweep(cfg, SweepParam::threshold, std::vector<double>{cfg.model.rpl.threshold});
    CHECK(one.size() == 1);
    CHECK(one[0].final_accuracy == plain.overall.back());
    CHECK(one[0].pd == plain.pd);

    const auto csv = sweep_csv(SweepParam::beta, rows);
    CHECK(csv.rfind("beta,final_acc,pd,average_acc\n0,", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
}

TEST_CASE("temperature sweep grid") {
    const auto rows = run_sweep(quick_config(8), SweepParam::tau, std::vector<double>{0.7, 0.8, 0.9, 1.0});
    CHECK(rows.size() == 4);
    CHECK(rows[0].value == 0.7);
    CHECK(rows[3].value == 1.0);
}
