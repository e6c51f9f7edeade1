#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hyperfscil/diff.hpp"
#include "hyperfscil/hyperbolic.hpp"
#include "hyperfscil/optim.hpp"

namespace hyperfscil {

enum class Activation { relu };

struct BackboneConfig {
    std::size_t input_dim = 8;
    std::vector<std::size_t> hidden_dims{32};
    std::size_t embed_dim = 16;
    Activation activation = Activation::relu;
    // When false the last layer is purely affine.
    bool activate_output = false;
    std::size_t frozen_prefix_layers = 1;

    std::size_t layer_count() const noexcept { return hidden_dims.size() + 1; }
    // (fan_in, fan_out) of layer i.
    std::pair<std::size_t, std::size_t> layer_shape(std::size_t i) const;
    void validate() const;

    bool operator==(const BackboneConfig&) const = default;
};

// Parameter names of layer i under a prefix: "<prefix>.<i>.weight" (out x in) and ".bias".
std::string layer_weight_name(const std::string& prefix, std::size_t layer);
std::string layer_bias_name(const std::string& prefix, std::size_t layer);

// Name of the unconstrained log-scale of the hyperbolic head stored alongside a backbone.
std::string head_log_scale_name(const std::string& prefix);

// Affine + activation stack f_theta. The last layer applies the activation only with activate_output.
class Backbone {
public:
    explicit Backbone(BackboneConfig cfg, std::string prefix = "backbone");

    const BackboneConfig& config() const noexcept { return cfg_; }
    const std::string& prefix() const noexcept { return prefix_; }

    // Weights ~ N(0, 2/fan_in), biases zero; deterministic per seed.
    void init_params(ParameterStore& store, std::uint64_t seed) const;
    // Marks the first frozen_prefix_layers layers frozen and the rest trainable.
    void apply_freeze(ParameterStore& store) const;

    EuclideanVector embed(std::span<const double> x, const ParameterStore& store) const;
    std::vector<diff::Var> embed(std::span<const double> x, const Binding& binding) const;

private:
    void check_input(std::span<const double> x) const;
    bool activates(std::size_t layer) const noexcept { return cfg_.activate_output || layer + 1 < cfg_.layer_count(); }

    BackboneConfig cfg_;
    std::string prefix_;
};

ParameterStore init_params(const BackboneConfig& cfg, std::uint64_t seed);

// h_phi: exponential map at the origin applied to exp(log_scale) * v.
struct HyperbolicHead {
    BallConfig ball;
    double log_scale = 0.0;

    double scale() const { return std::exp(log_scale); }
};

BallPoint to_hyperbolic(const EuclideanVector& v, const HyperbolicHead& head);

template <class S>
std::vector<S> to_hyperbolic(std::span<const S> v, const S& log_scale, const BallConfig& ball) {
    const S scale = diff::exp(log_scale);
    auto scaled = kernel::scaled(v, scale);
    return kernel::exp_map0(std::span<const S>(scaled), ball);
}

} // namespace hyperfscil
