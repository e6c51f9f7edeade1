#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "hyperfscil/hyper_rpl.hpp"
#include "hyperfscil/hyperbolic.hpp"

namespace testing_support {

// Uniform direction with radius uniform in [0, max_radius).
inline std::vector<double> random_point(std::mt19937_64& rng, std::size_t dim, double max_radius) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<double> v(dim);
    double sq = 0.0;
    for (auto& x : v) {
        x = normal(rng);
        sq += x * x;
    }
    const double r = max_radius * unit(rng) / std::sqrt(sq);
    for (auto& x : v) x *= r;
    return v;
}

// In-ball point under curvature c, at most 95% of the way to the boundary.
inline hyperfscil::BallPoint random_ball_point(std::mt19937_64& rng, std::size_t dim, double c) {
    return hyperfscil::BallPoint(random_point(rng, dim, 0.95 / std::sqrt(c)));
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline std::vector<double> negate(const std::vector<double>& v) {
    std::vector<double> out(v);
    for (auto& x : out) x = -x;
    return out;
}

// A 2-class branch whose backbone is the identity on R^2 and whose reciprocal points are (0,0)
// for class 0 and (4,0) for class 1, in Euclidean geometry. On the x axis p(class 0) is
// sigmoid(8x - 16), so x = 2 is maximally uncertain.
inline hyperfscil::BaseBranch identity_branch(double threshold) {
    using namespace hyperfscil;
    BackboneConfig net;
    net.input_dim = 2;
    net.hidden_dims = {};
    net.embed_dim = 2;
    net.frozen_prefix_layers = 0;
    auto branch = init_base_branch(net, {}, RplLossConfig{1.0, 0.1, 0.5}, BaseTrainConfig{}, {0, 1}, 0);
    branch.rpl.threshold = threshold;
    branch.params.at("backbone.0.weight").values = {1.0, 0.0, 0.0, 1.0};
    branch.params.at(BaseBranch::kPoints).values = {0.0, 0.0, 4.0, 0.0};
    return branch;
}

} // namespace testing_support
