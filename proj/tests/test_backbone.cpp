#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "hyperfscil/backbone.hpp"
#include "hyperfscil/errors.hpp"
#include "hyperfscil/hyper_rpl.hpp"
#include "support.hpp"

using namespace hyperfscil;
using diff::Tape;
using diff::Var;

namespace {

BackboneConfig single_layer(std::size_t in, std::size_t out, bool activate) {
    BackboneConfig cfg;
    cfg.input_dim = in;
    cfg.hidden_dims = {};
    cfg.embed_dim = out;
    cfg.activate_output = activate;
    cfg.frozen_prefix_layers = 0;
    return cfg;
}

} // namespace

TEST_CASE("zero parameters embed to zero") {
    BackboneConfig cfg;
    cfg.input_dim = 3;
    cfg.hidden_dims = {4};
    cfg.embed_dim = 2;
    const Backbone net(cfg);
    ParameterStore store;
    net.init_params(store, 1);
    for (auto& t : store.tensors()) std::fill(t.values.begin(), t.values.end(), 0.0);
    CHECK(net.embed(std::vector<double>{1.0, -2.0, 3.0}, store).components() == std::vector<double>{0.0, 0.0});
}

TEST_CASE("identity single layer with relu") {
    const Backbone net(single_layer(2, 2, true));
    ParameterStore store;
    net.init_params(store, 0);
    store.at(layer_weight_name("backbone", 0)).values = {1.0, 0.0, 0.0, 1.0};
    CHECK(net.embed(std::vector<double>{-1.0, 2.0}, store).components() == std::vector<double>{0.0, 2.0});

    const Backbone affine(single_layer(2, 2, false));
    CHECK(affine.embed(std::vector<double>{-1.0, 2.0}, store).components() == std::vector<double>{-1.0, 2.0});
}

TEST_CASE("embed checks the input width") {
    const Backbone net(single_layer(2, 2, true));
    ParameterStore store;
    net.init_params(store, 0);
    CHECK_THROWS_AS(net.embed(std::vector<double>{1.0}, store), ShapeError);
}

TEST_CASE("config validation") {
    BackboneConfig cfg;
    cfg.embed_dim = 1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.embed_dim = 4;
    cfg.frozen_prefix_layers = 3;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.frozen_prefix_layers = 2;
    CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("gradient of the squared embedding norm matches finite differences") {
    for (bool activate : {false, true}) {
        BackboneConfig cfg;
        cfg.input_dim = 4;
        cfg.hidden_dims = {6, 5};
        cfg.embed_dim = 3;
        cfg.activate_output = activate;
        cfg.frozen_prefix_layers = 0;
        const Backbone net(cfg);
        ParameterStore store;
        net.init_params(store, 17);
        const std::vector<double> x{0.3, -0.7, 1.1, 0.2};
        const LossBuilder loss = [&](Tape&, const Binding& bind) {
            const auto e = net.embed(x, bind);
            return diff::squared_norm(std::span<const Var>(e));
        };
        CHECK(finite_difference_check(loss, store, 1e-5, 1e-4).passed());
    }
}

TEST_CASE("taped and plain forward passes agree") {
    BackboneConfig cfg;
    cfg.input_dim = 5;
    cfg.hidden_dims = {7};
    cfg.embed_dim = 3;
    const Backbone net(cfg);
    ParameterStore store;
    net.init_params(store, 4);
    const std::vector<double> x{0.1, 0.2, -0.3, 0.4, -0.5};
    Tape tape;
    Binding bind(tape, store);
    const auto taped = net.embed(x, bind);
    const auto plain = net.embed(x, store);
    for (std::size_t i = 0; i < 3; ++i) CHECK(taped[i].value() == plain[i]);
}

TEST_CASE("init is deterministic and fan-in scaled") {
    BackboneConfig cfg;
    cfg.input_dim = 64;
    cfg.hidden_dims = {};
    cfg.embed_dim = 64;
    const auto a = init_params(cfg, 5);
    const auto b = init_params(cfg, 5);
    const auto c = init_params(cfg, 6);
    CHECK(a.same_values(b));
    CHECK_FALSE(a.same_values(c));

    const auto& w = a.at(layer_weight_name("backbone", 0)).values;
    double mean = 0.0, sq = 0.0;
    for (double v : w) mean += v;
    mean /= static_cast<double>(w.size());
    for (double v : w) sq += (v - mean) * (v - mean);
    const double sd = std::sqrt(sq / static_cast<double>(w.size()));
    CHECK(std::abs(sd - std::sqrt(2.0 / 64.0)) <= 0.2 * std::sqrt(2.0 / 64.0));
    for (double v : a.at(layer_bias_name("backbone", 0)).values) CHECK(v == 0.0);
}

TEST_CASE("embeddings are finite for finite inputs") {
    BackboneConfig cfg;
    cfg.input_dim = 6;
    cfg.hidden_dims = {16, 16};
    cfg.embed_dim = 4;
    const Backbone net(cfg);
    ParameterStore store;
    net.init_params(store, 2);
    std::mt19937_64 rng(3);
    for (int i = 0; i < 200; ++i) {
        const auto x = testing_support::random_point(rng, 6, 1e3);
        for (double v : net.embed(x, store).components()) CHECK(std::isfinite(v));
    }
}

TEST_CASE("hyperbolic head") {
    const HyperbolicHead unit{{1.0, 1e-5}, 0.0};
    CHECK(to_hyperbolic(EuclideanVector({0.0, 0.0}), unit).components() == std::vector<double>{0.0, 0.0});
    const auto a = to_hyperbolic(EuclideanVector({1.0, 0.0}), unit);
    CHECK(a[0] == doctest::Approx(std::tanh(1.0)).epsilon(1e-12));
    const HyperbolicHead doubled{{1.0, 1e-5}, std::log(2.0)};
    const auto b = to_hyperbolic(EuclideanVector({0.5, 0.0}), doubled);
    CHECK(b[0] == doctest::Approx(std::tanh(1.0)).epsilon(1e-12));
    CHECK(b[1] == 0.0);

    std::mt19937_64 rng(6);
    for (int i = 0; i < 200; ++i) {
        const HyperbolicHead head{{0.1, 1e-5}, std::normal_distribution<double>(0.0, 1.0)(rng)};
        const auto p = to_hyperbolic(EuclideanVector(testing_support::random_point(rng, 3, 100.0)), head);
        CHECK(in_ball(p.span(), head.ball));
    }
}

TEST_CASE("trained base branch freezes its prefix layers") {
    BackboneConfig cfg;
    cfg.input_dim = 2;
    cfg.hidden_dims = {8};
    cfg.embed_dim = 4;
    cfg.frozen_prefix_layers = 1;
    std::vector<Sample> samples;
    std::mt19937_64 rng(1);
    std::normal_distribution<double> normal(0.0, 0.5);
    for (int i = 0; i < 20; ++i) samples.push_back({{normal(rng) + (i % 2 ? 3.0 : -3.0), normal(rng)}, ClassId(i % 2)});
    BaseTrainConfig train;
    train.epochs = 5;
    train.batch_size = 4;
    auto trained = train_base_session(samples, {0, 1}, cfg, {}, {}, train, 3);
    for (const char* name : {"backbone.0.weight", "backbone.0.bias"}) CHECK(trained.params.at(name).frozen);
    for (const char* name : {"backbone.1.weight", "backbone.1.bias"}) CHECK_FALSE(trained.params.at(name).frozen);

    const auto before = trained.params;
    for (int epoch = 0; epoch < 3; ++epoch) {
        for (auto& t : trained.params.tensors()) std::fill(t.grads.begin(), t.grads.end(), 1.0);
        sgd_step(trained.params, epoch);
    }
    for (const char* name : {"backbone.0.weight", "backbone.0.bias"})
        CHECK(before.at(name).values == trained.params.at(name).values);
    CHECK(before.at("backbone.1.weight").values != trained.params.at("backbone.1.weight").values);
}
