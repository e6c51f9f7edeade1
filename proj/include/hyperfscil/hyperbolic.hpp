#pragma once

// Poincare-ball geometry with curvature c > 0:
//   ball  = { x : c |x|^2 < 1 }
//   x (+) y = ((1 + 2c<x,y> + c|y|^2) x + (1 - c|x|^2) y) / (1 + 2c<x,y> + c^2 |x|^2 |y|^2)
//   d(x,y)  = (2/sqrt c) artanh(sqrt c |(-x) (+) y|)
//
// The kernels in `kernel` are templates over the scalar type (double or diff::Var) so the
// same code serves evaluation and training. The free functions at namespace scope are the
// checked public surface on plain vectors.

#include <cmath>
#include <span>
#include <vector>

#include "hyperfscil/diff.hpp"

namespace hyperfscil {

struct BallConfig {
    double curvature = 0.1;
    double boundary_eps = 1e-5;

    void validate() const;
    // Largest admissible Euclidean norm, (1 - boundary_eps) / sqrt(c).
    double max_norm() const { return (1.0 - boundary_eps) / std::sqrt(curvature); }

    bool operator==(const BallConfig&) const = default;
};

// Finite vector in the ambient (tangent) space.
class EuclideanVector {
public:
    EuclideanVector() = default;
    explicit EuclideanVector(std::vector<double> components);

    std::size_t size() const noexcept { return components_.size(); }
    double operator[](std::size_t i) const { return components_[i]; }
    std::span<const double> span() const noexcept { return components_; }
    const std::vector<double>& components() const noexcept { return components_; }

    bool operator==(const EuclideanVector&) const = default;

private:
    std::vector<double> components_;
};

// Point of the ball. Membership is checked against a BallConfig by every operation.
class BallPoint {
public:
    BallPoint() = default;
    explicit BallPoint(std::vector<double> components);

    std::size_t size() const noexcept { return components_.size(); }
    double operator[](std::size_t i) const { return components_[i]; }
    std::span<const double> span() const noexcept { return components_; }
    const std::vector<double>& components() const noexcept { return components_; }

    bool operator==(const BallPoint&) const = default;

private:
    std::vector<double> components_;
};

bool in_ball(std::span<const double> x, const BallConfig& cfg);

BallPoint mobius_add(const BallPoint& x, const BallPoint& y, const BallConfig& cfg);
double conformal_factor(const BallPoint& x, const BallConfig& cfg);
double poincare_distance(const BallPoint& x, const BallPoint& y, const BallConfig& cfg);
BallPoint exp_map_origin(const EuclideanVector& v, const BallConfig& cfg);
EuclideanVector log_map_origin(const BallPoint& x, const BallConfig& cfg);
BallPoint project_to_ball(const EuclideanVector& x, const BallConfig& cfg);

namespace kernel {

template <class S>
std::vector<S> scaled(std::span<const S> v, const S& factor) {
    std::vector<S> out;
    out.reserve(v.size());
    for (const auto& x : v) out.push_back(x * factor);
    return out;
}

// Radial clip onto the ball of radius (1 - eps)/sqrt(c); identity inside it.
template <class S>
std::vector<S> project(std::span<const S> x, const BallConfig& cfg) {
    const double limit = 1.0 - cfg.boundary_eps;
    double sq = 0.0;
    for (const auto& xi : x) sq += diff::value_of(xi) * diff::value_of(xi);
    if (cfg.curvature * sq <= limit * limit) return {x.begin(), x.end()};
    const S n = diff::norm(x);
    const S factor = (cfg.max_norm()) / n;
    return scaled(x, factor);
}

template <class S>
std::vector<S> mobius_add_raw(std::span<const S> x, std::span<const S> y, double c) {
    const S xy = diff::dot(x, y);
    const S xx = diff::squared_norm(x);
    const S yy = diff::squared_norm(y);
    const S a = 1.0 + 2.0 * c * xy + c * yy;
    const S b = 1.0 - c * xx;
    const S denom = 1.0 + 2.0 * c * xy + (c * c) * xx * yy;
    std::vector<S> out;
    out.reserve(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out.push_back((a * x[i] + b * y[i]) / denom);
    return out;
}

template <class S>
std::vector<S> mobius_add(std::span<const S> x, std::span<const S> y, const BallConfig& cfg) {
    auto raw = mobius_add_raw(x, y, cfg.curvature);
    return project(std::span<const S>(raw), cfg);
}

// Uses arcosh(1 + t) with t = 2c|x - y|^2 / ((1 - c|x|^2)(1 - c|y|^2)), written as
// log(1 + t + |x - y| sqrt(2c (t + 2) / ab)). This equals the Mobius-addition form, is symmetric
// in x and y, and avoids the cancellation of artanh near 1 for far-apart points.
template <class S>
S distance(std::span<const S> x, std::span<const S> y, double c) {
    const S r = diff::distance(x, y);
    const S ab = (1.0 - c * diff::squared_norm(x)) * (1.0 - c * diff::squared_norm(y));
    const S t = (2.0 * c) * diff::squared_distance(x, y) / ab;
    const S root = r * diff::sqrt((2.0 * c) * (t + 2.0) / ab);
    return diff::log(1.0 + t + root) / std::sqrt(c);
}

template <class S>
std::vector<S> exp_map0(std::span<const S> v, const BallConfig& cfg) {
    const double sc = std::sqrt(cfg.curvature);
    const S n = diff::norm(v);
    if (diff::value_of(n) == 0.0) return {v.begin(), v.end()};
    const S factor = diff::tanh(sc * n) / (sc * n);
    auto mapped = scaled(v, factor);
    return project(std::span<const S>(mapped), cfg);
}

template <class S>
std::vector<S> log_map0(std::span<const S> x, double c) {
    const double sc = std::sqrt(c);
    const S n = diff::norm(x);
    if (diff::value_of(n) == 0.0) return {x.begin(), x.end()};
    const S factor = diff::artanh(sc * n) / (sc * n);
    return scaled(x, factor);
}

} // namespace kernel
} // namespace hyperfscil
