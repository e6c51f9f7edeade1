#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hyperfscil/config.hpp"
#include "hyperfscil/errors.hpp"
#include "hyperfscil/experiment.hpp"
#include "hyperfscil/gradient_suite.hpp"
#include "hyperfscil/hyper_rpl.hpp"
#include "hyperfscil/hyperbolic.hpp"
#include "hyperfscil/incremental.hpp"
#include "hyperfscil/protocol.hpp"

namespace py = pybind11;
using namespace hyperfscil;

namespace {

BallConfig ball(double c, double eps) {
    BallConfig cfg{c, eps};
    cfg.validate();
    return cfg;
}

py::dict report_dict(const SessionReport& r) {
    py::dict d;
    d["overall"] = r.overall;
    d["novel"] = r.novel;
    d["known_accuracy"] = r.known_accuracy;
    d["unknown_accuracy"] = r.unknown_accuracy;
    d["base_close_set_accuracy"] = r.base_close_set_accuracy;
    d["pd"] = r.pd;
    d["average"] = r.average;
    d["routed_base"] = r.routing.base;
    d["routed_novel"] = r.routing.novel;
    d["results_csv"] = results_csv(r);
    return d;
}

} // namespace

PYBIND11_MODULE(_hyperfscil, m) {
    m.doc() = "Hyperbolic open-set few-shot class-incremental learning";
    m.attr("__version__") = "0.1.0";

    auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<InvalidInputError>(m, "InvalidInputError", base);
    py::register_exception<ShapeError>(m, "ShapeError", base);
    py::register_exception<DomainError>(m, "DomainError", base);
    py::register_exception<NumericalError>(m, "NumericalError", base);
    py::register_exception<ContractError>(m, "ContractError", base);
    py::register_exception<LabelError>(m, "LabelError", base);
    py::register_exception<DeterminismError>(m, "DeterminismError", base);
    py::register_exception<ProtocolError>(m, "ProtocolError", base);
    py::register_exception<ConfigError>(m, "ConfigError", base);
    py::register_exception<IoError>(m, "IoError", base);
    py::register_exception<DatasetError>(m, "DatasetError", base);

    constexpr double kEps = 1e-5;
    m.def("mobius_add",
          [](std::vector<double> x, std::vector<double> y, double c, double eps) {
              return mobius_add(BallPoint(std::move(x)), BallPoint(std::move(y)), ball(c, eps)).components();
          },
          py::arg("x"), py::arg("y"), py::arg("c") = 0.1, py::arg("boundary_eps") = kEps);
    m.def("poincare_distance",
          [](std::vector<double> x, std::vector<double> y, double c, double eps) {
              return poincare_distance(BallPoint(std::move(x)), BallPoint(std::move(y)), ball(c, eps));
          },
          py::arg("x"), py::arg("y"), py::arg("c") = 0.1, py::arg("boundary_eps") = kEps);
    m.def("conformal_factor",
          [](std::vector<double> x, double c, double eps) {
              return conformal_factor(BallPoint(std::move(x)), ball(c, eps));
          },
          py::arg("x"), py::arg("c") = 0.1, py::arg("boundary_eps") = kEps);
    m.def("exp_map_origin",
          [](std::vector<double> v, double c, double eps) {
              return exp_map_origin(EuclideanVector(std::move(v)), ball(c, eps)).components();
          },
          py::arg("v"), py::arg("c") = 0.1, py::arg("boundary_eps") = kEps);
    m.def("log_map_origin",
          [](std::vector<double> x, double c, double eps) {
              return log_map_origin(BallPoint(std::move(x)), ball(c, eps)).components();
          },
          py::arg("x"), py::arg("c") = 0.1, py::arg("boundary_eps") = kEps);
    m.def("project_to_ball",
          [](std::vector<double> x, double c, double eps) {
              return project_to_ball(EuclideanVector(std::move(x)), ball(c, eps)).components();
          },
          py::arg("x"), py::arg("c") = 0.1, py::arg("boundary_eps") = kEps);

    m.def("class_probabilities", [](const std::vector<double>& d) { return class_probabilities(d); },
          py::arg("distances"));
    m.def("open_set_decide",
          [](const std::vector<double>& p, double threshold) { return open_set_decide(p, threshold); },
          py::arg("probabilities"), py::arg("threshold"));

    m.def("performance_drop", [](const std::vector<double>& a) { return performance_drop(a); }, py::arg("accuracies"));
    m.def("average_accuracy", [](const std::vector<double>& a) { return average_accuracy(a); }, py::arg("accuracies"));
    m.def("round2", &round2, py::arg("value"));

    m.def("herding_select",
          [](const std::vector<std::vector<double>>& e, const std::vector<double>& mean, std::size_t budget) {
              return herding_select(e, mean, budget);
          },
          py::arg("embeddings"), py::arg("mean"), py::arg("budget"));
    m.def("nme_classify",
          [](std::vector<double> x, const std::map<ClassId, std::vector<double>>& means) {
              ClassMeans cm;
              for (const auto& [id, mu] : means) cm.emplace(id, EuclideanVector(mu));
              return nme_classify(EuclideanVector(std::move(x)), cm);
          },
          py::arg("feature"), py::arg("means"));

    m.def("generate_synthetic",
          [](std::size_t classes, std::size_t train, std::size_t test, std::size_t dim, double separation,
             std::uint64_t seed) {
              const auto data = generate_synthetic({classes, train, test, dim, separation, seed});
              py::list samples;
              for (const auto& s : data.samples())
                  samples.append(py::make_tuple(s.features, s.label, s.split == Split::train ? "train" : "test"));
              return samples;
          },
          py::arg("classes") = 10, py::arg("train_per_class") = 40, py::arg("test_per_class") = 20,
          py::arg("dim") = 8, py::arg("separation") = 8.0, py::arg("seed") = 0);

    py::class_<ExperimentConfig>(m, "ExperimentConfig")
        .def(py::init<>())
        .def_readwrite("seed", &ExperimentConfig::seed)
        .def("entries", [](const ExperimentConfig& c) { return config_entries(c); })
        .def("validate", &ExperimentConfig::validate)
        .def("__str__", [](const ExperimentConfig& c) { return format_config(c); })
        .def("__eq__", [](const ExperimentConfig& a, const ExperimentConfig& b) { return a == b; });
    m.def("parse_config_text", &parse_config_text, py::arg("text"));
    m.def("config_from_entries", &config_from_entries, py::arg("entries"));
    m.def("config_keys", &config_keys);

    m.def("run_experiment",
          [](const ExperimentConfig& cfg) {
              SessionReport report;
              {
                  py::gil_scoped_release release;
                  report = run_experiment(cfg).report;
              }
              return report_dict(report);
          },
          py::arg("config"));

    m.def("run_gradient_suite",
          [](std::uint64_t seed, std::size_t fixtures, double tolerance) {
              py::list out;
              for (const auto& r : run_gradient_suite(seed, fixtures, tolerance)) {
                  py::dict d;
                  d["loss"] = r.loss;
                  d["fixtures"] = r.fixtures;
                  d["max_relative_error"] = r.max_relative_error;
                  d["tolerance"] = r.tolerance;
                  d["passed"] = r.passed();
                  out.append(d);
              }
              return out;
          },
          py::arg("seed") = 0, py::arg("fixtures") = 20, py::arg("tolerance") = 1e-4);
}
