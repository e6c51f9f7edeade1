#pragma once

// Novel-class branch: a copy of the base backbone with a growing linear head, trained per
// session on few-shot data plus replayed exemplars with
//   L = CE + zeta * distillation + eta * hyperbolic pairwise metric loss,
// and classified by nearest mean of exemplars.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "hyperfscil/backbone.hpp"
#include "hyperfscil/dataset.hpp"
#include "hyperfscil/diff.hpp"
#include "hyperfscil/errors.hpp"
#include "hyperfscil/hyperbolic.hpp"
#include "hyperfscil/optim.hpp"

namespace hyperfscil {

struct BaseBranch;

struct IncrementalLossConfig {
    double tau = 1.0;
    double eta = 1.0;
    double zeta_base = 1.0;
    // Positive pairs drawn per epoch; 0 means one pair per training sample.
    std::size_t pairs_per_epoch = 0;

    void validate() const;
    bool operator==(const IncrementalLossConfig&) const = default;
};

// One anchor's term: -log( exp(-d[positive]/tau) / sum_{t != anchor} exp(-d[t]/tau) ), where `row`
// holds the anchor's distances to every sample of the batch.
template <class S>
S metric_pair_term(std::span<const S> row, std::size_t anchor, std::size_t positive, double tau) {
    if (anchor >= row.size() || positive >= row.size() || anchor == positive)
        throw ContractError("metric_pair_term: bad anchor/positive indices");
    std::vector<S> logits;
    logits.reserve(row.size() - 1);
    for (std::size_t t = 0; t < row.size(); ++t)
        if (t != anchor) logits.push_back(-row[t] / tau);
    return row[positive] / tau + diff::log_sum_exp(std::span<const S>(logits));
}

// Mean over all 2M ordered positive pairs of a T x T distance matrix whose positives are the
// consecutive index pairs (0,1), (2,3), ...
template <class S>
S metric_loss_from_distances(const std::vector<std::vector<S>>& distances, double tau) {
    const std::size_t t = distances.size();
    if (t < 2 || t % 2 != 0) throw ContractError("metric loss needs an even number T >= 2 of samples");
    if (!(tau > 0.0)) throw ContractError("metric loss temperature must be > 0");
    std::vector<S> terms;
    terms.reserve(t);
    for (std::size_t i = 0; i < t; ++i) {
        if (distances[i].size() != t) throw ShapeError("metric loss distance matrix must be square");
        const std::size_t partner = i ^ 1U;
        terms.push_back(metric_pair_term(std::span<const S>(distances[i]), i, partner, tau));
    }
    return diff::mean_of(std::span<const S>(terms));
}

// Pairwise metric loss on Poincare distances between mapped embeddings laid out as
// [a0, b0, a1, b1, ...] where (a_m, b_m) share a class.
template <class S>
S hyper_metric_loss(const std::vector<std::vector<S>>& embeddings, const S& log_scale, const BallConfig& ball,
                    double tau) {
    const std::size_t t = embeddings.size();
    if (t < 2 || t % 2 != 0) throw ContractError("hyper_metric_loss needs an even number T >= 2 of samples");
    std::vector<std::vector<S>> mapped;
    mapped.reserve(t);
    for (const auto& e : embeddings) mapped.push_back(to_hyperbolic(std::span<const S>(e), log_scale, ball));
    std::vector<std::vector<S>> d(t);
    for (std::size_t i = 0; i < t; ++i) d[i].resize(t, diff::lift(log_scale, 0.0));
    for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = i + 1; j < t; ++j) {
            const S dij = kernel::distance(std::span<const S>(mapped[i]), std::span<const S>(mapped[j]), ball.curvature);
            d[i][j] = dij;
            d[j][i] = dij;
        }
    return metric_loss_from_distances(d, tau);
}

// Softmax cross-entropy of one sample.
template <class S>
S cross_entropy_loss(std::span<const S> logits, std::size_t label) {
    if (label >= logits.size())
        throw LabelError("label " + std::to_string(label) + " out of range for " + std::to_string(logits.size()) +
                         " novel classes");
    return diff::log_sum_exp(logits) - logits[label];
}

// Sum over the first old_count logits of BCE(sigmoid(old), sigmoid(new)), written in the stable
// form softplus(z) - sigmoid(old) * z. Zero old classes give a zero loss.
template <class S>
S distillation_loss(std::span<const S> new_logits, std::span<const double> old_logits, std::size_t old_count) {
    if (old_count > new_logits.size() || old_count > old_logits.size())
        throw ShapeError("distillation_loss: old class count exceeds the available logits");
    if (old_count == 0) return diff::lift(new_logits.empty() ? S{} : new_logits.front(), 0.0);
    std::vector<S> terms;
    terms.reserve(old_count);
    for (std::size_t j = 0; j < old_count; ++j) {
        const double target = diff::sigmoid(old_logits[j]);
        terms.push_back(diff::softplus(new_logits[j]) - target * new_logits[j]);
    }
    return diff::sum(std::span<const S>(terms));
}

// zeta_base * sqrt(old / new); 0 without old classes.
double adaptive_zeta(std::size_t old_count, std::size_t new_count, double zeta_base);

template <class S>
S combine_incremental_loss(const S& ce, const S& distill, const S& metric, double zeta, double eta) {
    return ce + zeta * distill + eta * metric;
}

struct Exemplar {
    std::vector<double> raw;
    std::vector<double> embedding;  // cached at selection time
};

class ExemplarMemory {
public:
    explicit ExemplarMemory(std::size_t budget_per_class = 5);

    std::size_t budget() const noexcept { return budget_; }
    // Replaces a class's exemplars; more than the budget is a contract error.
    void store(ClassId id, std::vector<Exemplar> exemplars);
    const std::map<ClassId, std::vector<Exemplar>>& classes() const noexcept { return classes_; }
    std::size_t size() const;

private:
    std::size_t budget_;
    std::map<ClassId, std::vector<Exemplar>> classes_;
};

// Greedy herding: step t picks the unselected sample minimising |mean - (sum selected + x) / t|,
// ties to the lowest index. Returns min(budget, n) indices in selection order.
std::vector<std::size_t> herding_select(std::span<const std::vector<double>> embeddings, std::span<const double> mean,
                                        std::size_t budget);

using ClassMeans = std::map<ClassId, EuclideanVector>;

ClassMeans class_means(const ExemplarMemory& memory, const Backbone& backbone, const ParameterStore& params);

// Nearest class mean by Euclidean distance; ties to the lowest class id.
ClassId nme_classify(const EuclideanVector& feature, const ClassMeans& means);
// Same rule measured between mapped points on the ball.
ClassId nme_classify_hyperbolic(const EuclideanVector& feature, const ClassMeans& means, const HyperbolicHead& head);

struct IncrementalTrainConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 0;  // 0 trains on the whole session pool per step
    SgdConfig sgd{0.01, 5e-4, 0.9, {}, 5.0};
    std::size_t exemplar_budget = 5;
    bool replay = true;
    std::size_t metric_start_session = 4;
    std::size_t metric_start_epoch = 20;
    bool hyperbolic_nme = false;

    bool operator==(const IncrementalTrainConfig&) const = default;
};

struct NovelBranch {
    BackboneConfig backbone;
    BallConfig ball;
    IncrementalLossConfig loss;
    bool hyperbolic_nme = false;
    ParameterStore params;
    std::vector<ClassId> classes;  // head row order
    ExemplarMemory memory;
    std::optional<ParameterStore> old_params;  // frozen snapshot of the previous session
    std::size_t old_class_count = 0;
    std::vector<double> loss_history;  // mean loss per epoch of the latest session

    static constexpr const char* kPrefix = "backbone";
    static constexpr const char* kHeadWeight = "novel.head.weight";
    static constexpr const char* kHeadBias = "novel.head.bias";

    Backbone net() const { return Backbone(backbone, kPrefix); }
    HyperbolicHead head() const;
    EuclideanVector embed(std::span<const double> x) const;
    std::vector<double> logits(std::span<const double> x) const;
    ClassMeans means() const;
    // NME prediction over the stored classes; requires at least one class.
    ClassId classify(std::span<const double> x) const;
    ClassId classify(std::span<const double> x, const ClassMeans& means) const;
};

// Starts the branch from the base backbone and scale, freezing the configured layer prefix.
NovelBranch init_novel_branch(const BaseBranch& base, const IncrementalLossConfig& loss,
                              const IncrementalTrainConfig& train);

// One N-way K-shot session. `session` is the 1-based session index (the base session is 1).
void train_incremental_session(NovelBranch& branch, std::span<const Sample> samples, std::size_t session,
                               const IncrementalTrainConfig& train, std::uint64_t seed);

} // namespace hyperfscil
