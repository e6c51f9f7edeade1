#include "hyperfscil/hyperbolic.hpp"

#include <string>

#include "hyperfscil/errors.hpp"

namespace hyperfscil {

namespace {

void require_finite(std::span<const double> v, const char* what) {
    for (double x : v)
        if (!std::isfinite(x)) throw InvalidInputError(std::string(what) + ": non-finite component");
}

void require_same_dim(std::span<const double> a, std::span<const double> b, const char* what) {
    if (a.size() != b.size())
        throw ShapeError(std::string(what) + ": dimension mismatch (" + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()) + ")");
}

void require_in_ball(std::span<const double> x, const BallConfig& cfg, const char* what) {
    if (!in_ball(x, cfg)) throw DomainError(std::string(what) + ": point lies outside the ball");
}

} // namespace

void BallConfig::validate() const {
    if (!(curvature > 0.0) || !std::isfinite(curvature)) throw ConfigError("curvature must be > 0");
    if (!(boundary_eps > 0.0 && boundary_eps < 1.0)) throw ConfigError("boundary_eps must lie in (0,1)");
}

EuclideanVector::EuclideanVector(std::vector<double> components) : components_(std::move(components)) {
    require_finite(components_, "EuclideanVector");
}

BallPoint::BallPoint(std::vector<double> components) : components_(std::move(components)) {
    require_finite(components_, "BallPoint");
}

bool in_ball(std::span<const double> x, const BallConfig& cfg) {
    const double limit = 1.0 - cfg.boundary_eps;
    // One part in 1e12 of slack absorbs the rounding of the projection itself.
    return cfg.curvature * diff::squared_norm(x) <= limit * limit * (1.0 + 1e-12);
}

BallPoint mobius_add(const BallPoint& x, const BallPoint& y, const BallConfig& cfg) {
    cfg.validate();
    require_same_dim(x.span(), y.span(), "mobius_add");
    require_in_ball(x.span(), cfg, "mobius_add");
    require_in_ball(y.span(), cfg, "mobius_add");
    return BallPoint(kernel::mobius_add(x.span(), y.span(), cfg));
}

double conformal_factor(const BallPoint& x, const BallConfig& cfg) {
    cfg.validate();
    require_in_ball(x.span(), cfg, "conformal_factor");
    return 2.0 / (1.0 - cfg.curvature * diff::squared_norm(x.span()));
}

double poincare_distance(const BallPoint& x, const BallPoint& y, const BallConfig& cfg) {
    cfg.validate();
    require_same_dim(x.span(), y.span(), "poincare_distance");
    require_in_ball(x.span(), cfg, "poincare_distance");
    require_in_ball(y.span(), cfg, "poincare_distance");
    return kernel::distance(x.span(), y.span(), cfg.curvature);
}

BallPoint exp_map_origin(const EuclideanVector& v, const BallConfig& cfg) {
    cfg.validate();
    return BallPoint(kernel::exp_map0(v.span(), cfg));
}

EuclideanVector log_map_origin(const BallPoint& x, const BallConfig& cfg) {
    cfg.validate();
    require_in_ball(x.span(), cfg, "log_map_origin");
    return EuclideanVector(kernel::log_map0(x.span(), cfg.curvature));
}

BallPoint project_to_ball(const EuclideanVector& x, const BallConfig& cfg) {
    cfg.validate();
    return BallPoint(kernel::project(x.span(), cfg));
}

} // namespace hyperfscil
