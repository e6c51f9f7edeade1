#include "hyperfscil/gradient_suite.hpp"

#include <algorithm>
#include <functional>
#include <random>

#include "hyperfscil/backbone.hpp"
#include "hyperfscil/hyper_rpl.hpp"
#include "hyperfscil/incremental.hpp"
#include "hyperfscil/optim.hpp"

namespace hyperfscil {

namespace {

using diff::Var;

std::vector<double> normal_values(std::mt19937_64& rng, std::size_t n, double sd) {
    std::normal_distribution<double> dist(0.0, sd);
    std::vector<double> out(n);
    for (auto& v : out) v = dist(rng);
    return out;
}

std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

double uniform(std::mt19937_64& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

BallConfig random_ball(std::mt19937_64& rng) {
    static constexpr double curvatures[] = {0.1, 0.5, 1.0};
    return {curvatures[pick(rng, 0, 2)], 1e-5};
}

// Reciprocal points, margins and a head scale for `classes` x `m` points of width `dim`.
void add_rpl_params(ParameterStore& store, std::mt19937_64& rng, std::size_t classes, std::size_t m, std::size_t dim) {
    store.add("rpl.points", classes * m, dim, normal_values(rng, classes * m * dim, 0.6));
    std::vector<double> margins(classes);
    for (auto& r : margins) r = uniform(rng, 0.2, 2.0);
    store.add("rpl.margins", classes, 1, margins);
    store.add("head.log_scale", 1, 1, {uniform(rng, -0.5, 0.5)});
}

RpView<Var> rp_view(const Binding& bind, std::size_t classes, std::size_t m, std::size_t dim) {
    return {bind["rpl.points"], bind["rpl.margins"], classes, m, dim};
}

BackboneConfig small_backbone(std::size_t input, std::size_t embed) {
    BackboneConfig cfg;
    cfg.input_dim = input;
    cfg.hidden_dims = {5};
    cfg.embed_dim = embed;
    cfg.frozen_prefix_layers = 0;
    return cfg;
}

using FixtureFactory = std::function<double(std::mt19937_64&, double, double)>;

GradientSuiteResult run_family(const std::string& name, std::uint64_t seed, std::size_t fixtures, double tolerance,
                               double step, const FixtureFactory& make) {
    GradientSuiteResult out{name, fixtures, 0.0, tolerance};
    for (std::size_t i = 0; i < fixtures; ++i) {
        std::mt19937_64 rng(seed * 1000003ULL + i);
        out.max_relative_error = std::max(out.max_relative_error, make(rng, step, tolerance));
    }
    return out;
}

double classification_fixture(std::mt19937_64& rng, double step, double tol) {
    const std::size_t k = pick(rng, 2, 4), m = pick(rng, 1, 2), d = pick(rng, 2, 4);
    const std::size_t label = pick(rng, 0, k - 1);
    const BallConfig ball = random_ball(rng);
    const RplLossConfig rpl{uniform(rng, 0.1, 0.9), 0.1, 0.75};
    ParameterStore store;
    store.add("feature", 1, d, normal_values(rng, d, 0.6));
    add_rpl_params(store, rng, k, m, d);
    const LossBuilder loss = [=](diff::Tape&, const Binding& bind) {
        const auto rp = rp_view(bind, k, m, d);
        const Var log_scale = bind["head.log_scale"][0];
        const auto mapped = map_all_points(rp, log_scale, ball, RplGeometry::integrated);
        const auto dist = class_distances(bind["feature"], rp, mapped, log_scale, ball, rpl, RplGeometry::integrated);
        return classification_loss(std::span<const Var>(dist), label);
    };
    return finite_difference_check(loss, store, step, tol).max_relative_error();
}

double risk_fixture(std::mt19937_64& rng, double step, double tol) {
    const std::size_t k = pick(rng, 1, 3), m = pick(rng, 1, 3), d = pick(rng, 2, 4);
    const std::size_t label = pick(rng, 0, k - 1);
    const BallConfig ball = random_ball(rng);
    const RplLossConfig rpl{uniform(rng, 0.0, 1.0), 0.1, 0.75};
    ParameterStore store;
    store.add("feature", 1, d, normal_values(rng, d, 0.6));
    add_rpl_params(store, rng, k, m, d);
    const LossBuilder loss = [=](diff::Tape&, const Binding& bind) {
        const auto rp = rp_view(bind, k, m, d);
        const Var log_scale = bind["head.log_scale"][0];
        const Var dist = integrated_rp_distance(bind["feature"], rp.points_of(label), log_scale, ball, rpl);
        return open_space_risk(dist, rp.margins[label]);
    };
    return finite_difference_check(loss, store, step, tol).max_relative_error();
}

double base_loss_fixture(std::mt19937_64& rng, double step, double tol) {
    const std::size_t k = pick(rng, 2, 3), m = pick(rng, 1, 2), in = 3, d = 3, batch = 4;
    const BallConfig ball = random_ball(rng);
    const RplLossConfig rpl{uniform(rng, 0.1, 0.9), uniform(rng, 0.05, 0.5), 0.75};
    const BackboneConfig net_cfg = small_backbone(in, d);
    const Backbone net(net_cfg, "backbone");
    ParameterStore store;
    net.init_params(store, rng());
    add_rpl_params(store, rng, k, m, d);
    std::vector<std::vector<double>> xs;
    std::vector<std::size_t> labels;
    for (std::size_t i = 0; i < batch; ++i) {
        xs.push_back(normal_values(rng, in, 0.5));
        labels.push_back(pick(rng, 0, k - 1));
    }
    const LossBuilder loss = [=](diff::Tape&, const Binding& bind) {
        std::vector<LabeledFeature<Var>> items;
        for (std::size_t i = 0; i < batch; ++i) items.push_back({net.embed(xs[i], bind), labels[i]});
        return base_loss(std::span<const LabeledFeature<Var>>(items), rp_view(bind, k, m, d),
                         bind["head.log_scale"][0], ball, rpl);
    };
    return finite_difference_check(loss, store, step, tol).max_relative_error();
}

double metric_fixture(std::mt19937_64& rng, double step, double tol) {
    const std::size_t t = 2 * pick(rng, 1, 3), d = pick(rng, 2, 4);
    const BallConfig ball = random_ball(rng);
    const double tau = uniform(rng, 0.5, 1.5);
    ParameterStore store;
    store.add("embeddings", t, d, normal_values(rng, t * d, 0.6));
    store.add("head.log_scale", 1, 1, {uniform(rng, -0.5, 0.5)});
    const LossBuilder loss = [=](diff::Tape&, const Binding& bind) {
        std::vector<std::vector<Var>> rows;
        for (std::size_t i = 0; i < t; ++i) {
            const auto r = bind.row("embeddings", i);
            rows.emplace_back(r.begin(), r.end());
        }
        return hyper_metric_loss(rows, bind["head.log_scale"][0], ball, tau);
    };
    return finite_difference_check(loss, store, step, tol).max_relative_error();
}

double composite_fixture(std::mt19937_64& rng, double step, double tol) {
    const std::size_t n = pick(rng, 2, 4), in = 3, d = 3, t = 4;
    const std::size_t old_count = pick(rng, 1, n - 1);
    const BallConfig ball = random_ball(rng);
    const double tau = uniform(rng, 0.5, 1.5), eta = uniform(rng, 0.5, 1.5);
    const double zeta = adaptive_zeta(old_count, n - old_count, uniform(rng, 0.5, 2.0));
    const Backbone net(small_backbone(in, d), "backbone");
    ParameterStore store;
    net.init_params(store, rng());
    store.add("head.weight", n, d, normal_values(rng, n * d, 0.5));
    store.add("head.bias", n, 1, normal_values(rng, n, 0.1));
    store.add("head.log_scale", 1, 1, {uniform(rng, -0.5, 0.5)});
    std::vector<std::vector<double>> xs, old_logits;
    std::vector<std::size_t> labels;
    for (std::size_t i = 0; i < t; ++i) {
        xs.push_back(normal_values(rng, in, 0.5));
        old_logits.push_back(normal_values(rng, n, 1.0));
        labels.push_back(pick(rng, 0, n - 1));
    }
    const LossBuilder loss = [=](diff::Tape&, const Binding& bind) {
        const auto w = bind["head.weight"];
        const auto b = bind["head.bias"];
        std::vector<Var> ce, dl;
        std::vector<std::vector<Var>> embeddings;
        for (std::size_t i = 0; i < t; ++i) {
            embeddings.push_back(net.embed(xs[i], bind));
            std::vector<Var> z;
            for (std::size_t r = 0; r < n; ++r)
                z.push_back(diff::affine(w.subspan(r * d, d), std::span<const Var>(embeddings.back()), b[r]));
            ce.push_back(cross_entropy_loss(std::span<const Var>(z), labels[i]));
            dl.push_back(distillation_loss(std::span<const Var>(z), old_logits[i], old_count));
        }
        const Var metric = hyper_metric_loss(embeddings, bind["head.log_scale"][0], ball, tau);
        return combine_incremental_loss(diff::mean_of(std::span<const Var>(ce)), diff::mean_of(std::span<const Var>(dl)),
                                        metric, zeta, eta);
    };
    return finite_difference_check(loss, store, step, tol).max_relative_error();
}

} // namespace

std::vector<GradientSuiteResult> run_gradient_suite(std::uint64_t seed, std::size_t fixtures, double tolerance,
                                                    double step) {
    return {
        run_family("classification", seed, fixtures, tolerance, step, classification_fixture),
        run_family("open_space_risk", seed, fixtures, tolerance, step, risk_fixture),
        run_family("base_loss", seed, fixtures, tolerance, step, base_loss_fixture),
        run_family("metric", seed, fixtures, tolerance, step, metric_fixture),
        run_family("incremental_composite", seed, fixtures, tolerance, step, composite_fixture),
    };
}

} // namespace hyperfscil
