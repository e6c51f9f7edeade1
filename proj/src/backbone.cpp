#include "hyperfscil/backbone.hpp"

#include <random>

#include "hyperfscil/errors.hpp"

namespace hyperfscil {

std::pair<std::size_t, std::size_t> BackboneConfig::layer_shape(std::size_t i) const {
    const std::size_t in = i == 0 ? input_dim : hidden_dims[i - 1];
    const std::size_t out = i < hidden_dims.size() ? hidden_dims[i] : embed_dim;
    return {in, out};
}

void BackboneConfig::validate() const {
    if (input_dim == 0) throw ConfigError("input_dim must be >= 1");
    if (embed_dim < 2) throw ConfigError("embed_dim must be >= 2");
    for (auto h : hidden_dims)
        if (h == 0) throw ConfigError("hidden_dims entries must be >= 1");
    if (frozen_prefix_layers > layer_count())
        throw ConfigError("frozen_prefix_layers must not exceed the number of layers (" +
                          std::to_string(layer_count()) + ")");
}

std::string layer_weight_name(const std::string& prefix, std::size_t layer) {
    return prefix + "." + std::to_string(layer) + ".weight";
}

std::string layer_bias_name(const std::string& prefix, std::size_t layer) {
    return prefix + "." + std::to_string(layer) + ".bias";
}

std::string head_log_scale_name(const std::string& prefix) { return prefix + ".log_scale"; }

Backbone::Backbone(BackboneConfig cfg, std::string prefix) : cfg_(std::move(cfg)), prefix_(std::move(prefix)) {
    cfg_.validate();
}

void Backbone::init_params(ParameterStore& store, std::uint64_t seed) const {
    std::mt19937_64 rng(seed);
    for (std::size_t l = 0; l < cfg_.layer_count(); ++l) {
        const auto [in, out] = cfg_.layer_shape(l);
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(in)));
        std::vector<double> w(in * out);
        for (auto& x : w) x = dist(rng);
        store.add(layer_weight_name(prefix_, l), out, in, std::move(w));
        store.add_zeros(layer_bias_name(prefix_, l), out, 1);
    }
}

void Backbone::apply_freeze(ParameterStore& store) const {
    for (std::size_t l = 0; l < cfg_.layer_count(); ++l) {
        const bool frozen = l < cfg_.frozen_prefix_layers;
        store.set_frozen(layer_weight_name(prefix_, l), frozen);
        store.set_frozen(layer_bias_name(prefix_, l), frozen);
    }
}

void Backbone::check_input(std::span<const double> x) const {
    if (x.size() != cfg_.input_dim)
        throw ShapeError("embed: expected " + std::to_string(cfg_.input_dim) + " input features, got " +
                         std::to_string(x.size()));
}

EuclideanVector Backbone::embed(std::span<const double> x, const ParameterStore& store) const {
    check_input(x);
    std::vector<double> h(x.begin(), x.end());
    for (std::size_t l = 0; l < cfg_.layer_count(); ++l) {
        const auto& w = store.at(layer_weight_name(prefix_, l));
        const auto& b = store.at(layer_bias_name(prefix_, l));
        std::vector<double> next(w.rows);
        const bool act = activates(l);
        for (std::size_t o = 0; o < w.rows; ++o) {
            const double z = diff::affine(w.row(o), h, b.values[o]);
            next[o] = act ? diff::relu(z) : z;
        }
        h = std::move(next);
    }
    return EuclideanVector(std::move(h));
}

std::vector<diff::Var> Backbone::embed(std::span<const double> x, const Binding& binding) const {
    check_input(x);
    std::vector<diff::Var> h;
    for (std::size_t l = 0; l < cfg_.layer_count(); ++l) {
        const auto [in, out] = cfg_.layer_shape(l);
        const auto w = binding[layer_weight_name(prefix_, l)];
        const auto b = binding[layer_bias_name(prefix_, l)];
        std::vector<diff::Var> next;
        next.reserve(out);
        for (std::size_t o = 0; o < out; ++o) {
            const auto row = w.subspan(o * in, in);
            const auto z = l == 0 ? diff::affine(row, x, b[o]) : diff::affine(row, std::span<const diff::Var>(h), b[o]);
            next.push_back(activates(l) ? diff::relu(z) : z);
        }
        h = std::move(next);
    }
    return h;
}

ParameterStore init_params(const BackboneConfig& cfg, std::uint64_t seed) {
    ParameterStore store;
    Backbone(cfg).init_params(store, seed);
    return store;
}

BallPoint to_hyperbolic(const EuclideanVector& v, const HyperbolicHead& head) {
    head.ball.validate();
    return BallPoint(to_hyperbolic(v.span(), head.log_scale, head.ball));
}

} // namespace hyperfscil
