#pragma once

// Open-set base classifier built on reciprocal points.
//
// Each known class k owns M reciprocal points P_k (representatives of everything that is NOT
// class k) and a margin R_k. For an embedding f the integrated distance is
//   d(f, P_k) = beta * mean_i |f - p_ki|^2 + gamma * mean_i d_ball(h(f), h(p_ki)),  gamma = 1 - beta
// and the class posterior is softmax over d(f, P_.): far from a class's reciprocal points means
// likely that class. Training minimises -log p(y|x) + lambda * (d(f, P_y) - R_y)^2.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hyperfscil/backbone.hpp"
#include "hyperfscil/dataset.hpp"
#include "hyperfscil/diff.hpp"
#include "hyperfscil/errors.hpp"
#include "hyperfscil/hyperbolic.hpp"
#include "hyperfscil/optim.hpp"

namespace hyperfscil {

struct RplLossConfig {
    double beta = 0.7;
    double lambda_open = 0.1;
    double threshold = 0.75;

    double gamma() const noexcept { return 1.0 - beta; }
    void validate() const;

    bool operator==(const RplLossConfig&) const = default;
};

// How distances to reciprocal points are measured. `euclidean_only` never touches the ball and
// is the plain reciprocal-point baseline.
enum class RplGeometry { integrated, euclidean_only };

// Read-only view of reciprocal points: `classes * points_per_class` rows of `dim` values.
template <class S>
struct RpView {
    std::span<const S> points;
    std::span<const S> margins;
    std::size_t classes = 0;
    std::size_t points_per_class = 0;
    std::size_t dim = 0;

    std::span<const S> points_of(std::size_t k) const {
        return points.subspan(k * points_per_class * dim, points_per_class * dim);
    }
};

class ReciprocalPointSet {
public:
    ReciprocalPointSet(std::size_t classes, std::size_t points_per_class, std::size_t dim,
                       std::vector<double> points, std::vector<double> margins);

    RpView<double> view() const { return {points_, margins_, classes_, points_per_class_, dim_}; }
    std::size_t classes() const noexcept { return classes_; }
    std::size_t points_per_class() const noexcept { return points_per_class_; }
    std::size_t dim() const noexcept { return dim_; }
    std::span<const double> points_of(std::size_t k) const { return view().points_of(k); }
    double margin(std::size_t k) const { return margins_.at(k); }

private:
    std::size_t classes_;
    std::size_t points_per_class_;
    std::size_t dim_;
    std::vector<double> points_;
    std::vector<double> margins_;
};

namespace rpl_detail {

inline void require_points(std::size_t n_values, std::size_t dim) {
    if (n_values == 0 || dim == 0) throw ContractError("reciprocal point set is empty");
    if (n_values % dim != 0) throw ShapeError("reciprocal points do not match the feature dimension");
}

} // namespace rpl_detail

// (1/M) sum_i |f - p_i|^2 over the M points packed row-major in `points`.
template <class S>
S euclidean_rp_distance(std::span<const S> feature, std::span<const S> points) {
    const std::size_t dim = feature.size();
    rpl_detail::require_points(points.size(), dim);
    const std::size_t m = points.size() / dim;
    std::vector<S> terms;
    terms.reserve(m);
    for (std::size_t i = 0; i < m; ++i) terms.push_back(diff::squared_distance(feature, points.subspan(i * dim, dim)));
    return diff::mean_of(std::span<const S>(terms));
}

// Same average of ball distances, for an already mapped feature and mapped points.
template <class S>
S hyperbolic_rp_distance_mapped(std::span<const S> mapped_feature, const std::vector<std::vector<S>>& mapped_points,
                                double curvature) {
    if (mapped_points.empty()) throw ContractError("reciprocal point set is empty");
    std::vector<S> terms;
    terms.reserve(mapped_points.size());
    for (const auto& p : mapped_points)
        terms.push_back(kernel::distance(mapped_feature, std::span<const S>(p), curvature));
    return diff::mean_of(std::span<const S>(terms));
}

template <class S>
std::vector<std::vector<S>> map_points(std::span<const S> points, std::size_t dim, const S& log_scale,
                                       const BallConfig& ball) {
    rpl_detail::require_points(points.size(), dim);
    std::vector<std::vector<S>> out;
    for (std::size_t i = 0; i < points.size() / dim; ++i)
        out.push_back(to_hyperbolic(points.subspan(i * dim, dim), log_scale, ball));
    return out;
}

// (1/M) sum_i d_ball(h(f), h(p_i)).
template <class S>
S hyperbolic_rp_distance(std::span<const S> feature, std::span<const S> points, const S& log_scale,
                         const BallConfig& ball) {
    const auto mapped_points = map_points(points, feature.size(), log_scale, ball);
    const auto mapped = to_hyperbolic(feature, log_scale, ball);
    return hyperbolic_rp_distance_mapped(std::span<const S>(mapped), mapped_points, ball.curvature);
}

template <class S>
S integrated_rp_distance(std::span<const S> feature, std::span<const S> points, const S& log_scale,
                         const BallConfig& ball, const RplLossConfig& cfg) {
    return cfg.beta * euclidean_rp_distance(feature, points) +
           cfg.gamma() * hyperbolic_rp_distance(feature, points, log_scale, ball);
}

// Integrated distances from one embedding to every class, reusing pre-mapped points.
template <class S>
std::vector<S> class_distances(std::span<const S> feature, const RpView<S>& rp,
                               const std::vector<std::vector<std::vector<S>>>& mapped_points, const S& log_scale,
                               const BallConfig& ball, const RplLossConfig& cfg, RplGeometry geometry) {
    std::vector<S> out;
    out.reserve(rp.classes);
    if (geometry == RplGeometry::euclidean_only) {
        for (std::size_t k = 0; k < rp.classes; ++k) out.push_back(euclidean_rp_distance(feature, rp.points_of(k)));
        return out;
    }
    const auto mapped = to_hyperbolic(feature, log_scale, ball);
    for (std::size_t k = 0; k < rp.classes; ++k) {
        const S de = euclidean_rp_distance(feature, rp.points_of(k));
        const S dh = hyperbolic_rp_distance_mapped(std::span<const S>(mapped), mapped_points[k], ball.curvature);
        out.push_back(cfg.beta * de + cfg.gamma() * dh);
    }
    return out;
}

template <class S>
std::vector<std::vector<std::vector<S>>> map_all_points(const RpView<S>& rp, const S& log_scale, const BallConfig& ball,
                                                        RplGeometry geometry) {
    std::vector<std::vector<std::vector<S>>> out;
    if (geometry == RplGeometry::euclidean_only) return out;
    for (std::size_t k = 0; k < rp.classes; ++k) out.push_back(map_points(rp.points_of(k), rp.dim, log_scale, ball));
    return out;
}

// Softmax over integrated distances, with max subtraction.
std::vector<double> class_probabilities(std::span<const double> distances);

// -log p(y = k) = logsumexp(d) - d_k.
template <class S>
S classification_loss(std::span<const S> distances, std::size_t label) {
    if (label >= distances.size())
        throw LabelError("label " + std::to_string(label) + " is not among the " + std::to_string(distances.size()) +
                         " known classes");
    return diff::log_sum_exp(distances) - distances[label];
}

// (d - R)^2. Averaging over the M points has already happened inside d.
template <class S>
S open_space_risk(const S& distance, const S& margin) {
    return diff::square(distance - margin);
}

template <class S>
struct LabeledFeature {
    std::vector<S> feature;
    std::size_t label = 0;
};

// Batch mean of classification loss + lambda * open-space risk of the true class.
template <class S>
S base_loss(std::span<const LabeledFeature<S>> batch, const RpView<S>& rp, const S& log_scale, const BallConfig& ball,
            const RplLossConfig& cfg, RplGeometry geometry = RplGeometry::integrated) {
    if (batch.empty()) throw ContractError("base_loss: empty batch");
    const auto mapped_points = map_all_points(rp, log_scale, ball, geometry);
    std::vector<S> terms;
    terms.reserve(batch.size());
    for (const auto& item : batch) {
        if (item.label >= rp.classes) throw LabelError("label " + std::to_string(item.label) + " is not a base class");
        const auto d = class_distances(std::span<const S>(item.feature), rp, mapped_points, log_scale, ball, cfg, geometry);
        const S ce = classification_loss(std::span<const S>(d), item.label);
        if (cfg.lambda_open == 0.0) {
            terms.push_back(ce);
        } else {
            terms.push_back(ce + cfg.lambda_open * open_space_risk(d[item.label], rp.margins[item.label]));
        }
    }
    return diff::mean_of(std::span<const S>(terms));
}

// Known(argmax) when the top probability reaches the threshold, ties to the lowest index.
std::optional<std::size_t> open_set_decide(std::span<const double> probabilities, double threshold);

struct BaseTrainConfig {
    std::size_t epochs = 60;
    std::size_t batch_size = 32;
    std::size_t points_per_class = 1;
    SgdConfig sgd{0.05, 5e-4, 0.9, {}, 5.0};
    RplGeometry geometry = RplGeometry::integrated;

    bool operator==(const BaseTrainConfig&) const = default;
};

// The frozen base branch: backbone, hyperbolic head scale, reciprocal points and margins.
struct BaseBranch {
    BackboneConfig backbone;
    BallConfig ball;
    RplLossConfig rpl;
    RplGeometry geometry = RplGeometry::integrated;
    std::size_t points_per_class = 1;
    std::vector<ClassId> classes;  // local index -> dataset class id
    ParameterStore params;
    std::vector<double> loss_history;  // mean base loss per epoch

    static constexpr const char* kPrefix = "backbone";
    static constexpr const char* kPoints = "rpl.points";
    static constexpr const char* kMargins = "rpl.margins";

    HyperbolicHead head() const;
    ReciprocalPointSet reciprocal_points() const;
    EuclideanVector embed(std::span<const double> x) const;
    std::vector<double> distances(const EuclideanVector& feature) const;
    std::vector<double> probabilities(std::span<const double> x) const;
    // Local class index (see `classes`) when accepted, nullopt when rejected as unknown.
    std::optional<std::size_t> decide(std::span<const double> x) const;
    std::optional<std::size_t> decide(std::span<const double> x, double threshold) const;
    std::size_t local_index(ClassId id) const;
};

// Initialises the branch exactly as training would, without running any epoch.
BaseBranch init_base_branch(const BackboneConfig& backbone, const BallConfig& ball, const RplLossConfig& rpl,
                            const BaseTrainConfig& train, std::vector<ClassId> classes, std::uint64_t seed);

// Minibatch SGD on base_loss. `samples` must only carry labels from `classes`.
BaseBranch train_base_session(std::span<const Sample> samples, std::vector<ClassId> classes,
                              const BackboneConfig& backbone, const BallConfig& ball, const RplLossConfig& rpl,
                              const BaseTrainConfig& train, std::uint64_t seed);

struct KnownUnknownAccuracy {
    double known = 0.0;    // fraction of known samples decided Known(true class)
    double unknown = 0.0;  // fraction of unknown samples decided Unknown
};

KnownUnknownAccuracy evaluate_known_unknown(const BaseBranch& branch, std::span<const Sample> known,
                                            std::span<const Sample> unknown);
KnownUnknownAccuracy evaluate_known_unknown(const BaseBranch& branch, std::span<const Sample> known,
                                            std::span<const Sample> unknown, double threshold);

// Closed-set argmax accuracy on known samples.
double close_set_accuracy(const BaseBranch& branch, std::span<const Sample> known);

} // namespace hyperfscil
