#include "hyperfscil/hyper_rpl.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace hyperfscil {

void RplLossConfig::validate() const {
    if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("beta must lie in [0,1]");
    if (!(lambda_open >= 0.0) || !std::isfinite(lambda_open)) throw ConfigError("lambda_open must be >= 0");
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw ConfigError("threshold must lie in [0,1]");
}

ReciprocalPointSet::ReciprocalPointSet(std::size_t classes, std::size_t points_per_class, std::size_t dim,
                                       std::vector<double> points, std::vector<double> margins)
    : classes_(classes), points_per_class_(points_per_class), dim_(dim), points_(std::move(points)),
      margins_(std::move(margins)) {
    if (classes_ == 0 || points_per_class_ == 0 || dim_ == 0)
        throw ContractError("reciprocal point set needs >= 1 class, point and dimension");
    if (points_.size() != classes_ * points_per_class_ * dim_)
        throw ShapeError("reciprocal points: expected " + std::to_string(classes_ * points_per_class_ * dim_) +
                         " values, got " + std::to_string(points_.size()));
    if (margins_.size() != classes_) throw ShapeError("reciprocal points: one margin per class required");
}

std::vector<double> class_probabilities(std::span<const double> distances) {
    if (distances.empty()) throw ContractError("class_probabilities: no classes");
    const double m = *std::max_element(distances.begin(), distances.end());
    std::vector<double> p(distances.size());
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) total += (p[i] = std::exp(distances[i] - m));
    for (auto& x : p) x /= total;
    return p;
}

std::optional<std::size_t> open_set_decide(std::span<const double> probabilities, double threshold) {
    if (probabilities.empty()) throw ContractError("open_set_decide: no classes");
    std::size_t best = 0;
    for (std::size_t i = 1; i < probabilities.size(); ++i)
        if (probabilities[i] > probabilities[best]) best = i;
    if (probabilities[best] >= threshold) return best;
    return std::nullopt;
}

HyperbolicHead BaseBranch::head() const {
    return {ball, params.at(head_log_scale_name(kPrefix)).values.at(0)};
}

ReciprocalPointSet BaseBranch::reciprocal_points() const {
    return ReciprocalPointSet(classes.size(), points_per_class, backbone.embed_dim, params.at(kPoints).values,
                              params.at(kMargins).values);
}

EuclideanVector BaseBranch::embed(std::span<const double> x) const {
    return Backbone(backbone, kPrefix).embed(x, params);
}

std::vector<double> BaseBranch::distances(const EuclideanVector& feature) const {
    const RpView<double> rp{params.at(kPoints).values, params.at(kMargins).values, classes.size(), points_per_class,
                            backbone.embed_dim};
    const double log_scale = params.at(head_log_scale_name(kPrefix)).values.at(0);
    const auto mapped = map_all_points(rp, log_scale, ball, geometry);
    return class_distances(feature.span(), rp, mapped, log_scale, ball, rpl, geometry);
}

std::vector<double> BaseBranch::probabilities(std::span<const double> x) const {
    return class_probabilities(distances(embed(x)));
}

std::optional<std::size_t> BaseBranch::decide(std::span<const double> x) const { return decide(x, rpl.threshold); }

std::optional<std::size_t> BaseBranch::decide(std::span<const double> x, double threshold) const {
    return open_set_decide(probabilities(x), threshold);
}

std::size_t BaseBranch::local_index(ClassId id) const {
    auto it = std::find(classes.begin(), classes.end(), id);
    if (it == classes.end()) throw LabelError("class " + std::to_string(id) + " is not a base class");
    return static_cast<std::size_t>(it - classes.begin());
}

BaseBranch init_base_branch(const BackboneConfig& backbone, const BallConfig& ball, const RplLossConfig& rpl,
                            const BaseTrainConfig& train, std::vector<ClassId> classes, std::uint64_t seed) {
    backbone.validate();
    ball.validate();
    rpl.validate();
    train.sgd.validate();
    if (classes.empty()) throw DatasetError("base session has no classes");
    if (train.points_per_class == 0) throw ConfigError("points_per_class must be >= 1");

    BaseBranch branch;
    branch.backbone = backbone;
    branch.ball = ball;
    branch.rpl = rpl;
    branch.geometry = train.geometry;
    branch.points_per_class = train.points_per_class;
    branch.classes = std::move(classes);
    branch.params = ParameterStore(train.sgd);

    Backbone(backbone, BaseBranch::kPrefix).init_params(branch.params, seed);
    branch.params.add_zeros(head_log_scale_name(BaseBranch::kPrefix), 1, 1);

    const std::size_t k = branch.classes.size();
    const std::size_t d = backbone.embed_dim;
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(d)));
    std::vector<double> points(k * train.points_per_class * d);
    for (auto& p : points) p = dist(rng);
    branch.params.add(BaseBranch::kPoints, k * train.points_per_class, d, std::move(points));
    branch.params.add(BaseBranch::kMargins, k, 1, std::vector<double>(k, 1.0));
    return branch;
}

BaseBranch train_base_session(std::span<const Sample> samples, std::vector<ClassId> classes,
                              const BackboneConfig& backbone, const BallConfig& ball, const RplLossConfig& rpl,
                              const BaseTrainConfig& train, std::uint64_t seed) {
    BaseBranch branch = init_base_branch(backbone, ball, rpl, train, std::move(classes), seed);

    std::vector<std::size_t> labels(samples.size());
    std::vector<std::size_t> per_class(branch.classes.size(), 0);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        labels[i] = branch.local_index(samples[i].label);
        ++per_class[labels[i]];
    }
    for (std::size_t k = 0; k < per_class.size(); ++k)
        if (per_class[k] == 0)
            throw DatasetError("base class " + std::to_string(branch.classes[k]) + " has no training samples");

    const Backbone net(backbone, BaseBranch::kPrefix);
    const std::size_t batch_size = std::max<std::size_t>(1, train.batch_size);
    std::mt19937_64 rng(seed + 1);
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);

    diff::Tape tape;
    for (std::size_t epoch = 0; epoch < train.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double weighted = 0.0;
        for (std::size_t start = 0; start < order.size(); start += batch_size) {
            const std::size_t end = std::min(order.size(), start + batch_size);
            tape.clear();
            Binding bind(tape, branch.params);
            std::vector<LabeledFeature<diff::Var>> batch;
            batch.reserve(end - start);
            for (std::size_t i = start; i < end; ++i)
                batch.push_back({net.embed(samples[order[i]].features, bind), labels[order[i]]});
            const RpView<diff::Var> rp{bind[BaseBranch::kPoints], bind[BaseBranch::kMargins], branch.classes.size(),
                                       branch.points_per_class, backbone.embed_dim};
            const diff::Var log_scale = bind[head_log_scale_name(BaseBranch::kPrefix)][0];
            const diff::Var loss =
                base_loss(std::span<const LabeledFeature<diff::Var>>(batch), rp, log_scale, ball, rpl, train.geometry);
            weighted += diff::forward_eval(loss) * static_cast<double>(end - start);
            diff::backward_grad(loss);
            bind.accumulate_grads(branch.params);
            sgd_step(branch.params, static_cast<int>(epoch));
        }
        branch.loss_history.push_back(weighted / static_cast<double>(order.size()));
    }
    net.apply_freeze(branch.params);
    return branch;
}

KnownUnknownAccuracy evaluate_known_unknown(const BaseBranch& branch, std::span<const Sample> known,
                                            std::span<const Sample> unknown) {
    return evaluate_known_unknown(branch, known, unknown, branch.rpl.threshold);
}

KnownUnknownAccuracy evaluate_known_unknown(const BaseBranch& branch, std::span<const Sample> known,
                                            std::span<const Sample> unknown, double threshold) {
    if (known.empty() || unknown.empty()) throw ContractError("evaluate_known_unknown: empty test set");
    std::size_t known_ok = 0;
    for (const auto& s : known) {
        const auto d = branch.decide(s.features, threshold);
        if (d && branch.classes[*d] == s.label) ++known_ok;
    }
    std::size_t unknown_ok = 0;
    for (const auto& s : unknown) {
        if (std::find(branch.classes.begin(), branch.classes.end(), s.label) != branch.classes.end())
            throw ContractError("evaluate_known_unknown: unknown set contains a base class");
        if (!branch.decide(s.features, threshold)) ++unknown_ok;
    }
    return {static_cast<double>(known_ok) / static_cast<double>(known.size()),
            static_cast<double>(unknown_ok) / static_cast<double>(unknown.size())};
}

double close_set_accuracy(const BaseBranch& branch, std::span<const Sample> known) {
    if (known.empty()) throw ContractError("close_set_accuracy: empty test set");
    std::size_t ok = 0;
    for (const auto& s : known) {
        const auto d = branch.decide(s.features, 0.0);
        if (d && branch.classes[*d] == s.label) ++ok;
    }
    return static_cast<double>(ok) / static_cast<double>(known.size());
}

} // namespace hyperfscil
