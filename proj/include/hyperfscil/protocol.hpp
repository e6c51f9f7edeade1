#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "hyperfscil/dataset.hpp"
#include "hyperfscil/hyper_rpl.hpp"
#include "hyperfscil/incremental.hpp"

namespace hyperfscil {

struct IncrementalSession {
    std::vector<ClassId> classes;
    std::vector<std::size_t> train_indices;  // K shots per class, into the dataset
};

// Base session plus N-way K-shot sessions with pairwise disjoint class sets.
struct SessionPlan {
    std::vector<ClassId> base_classes;
    std::vector<std::size_t> base_train_indices;
    std::vector<IncrementalSession> sessions;
    std::size_t ways = 0;
    std::size_t shots = 0;
    std::vector<std::size_t> test_counts;  // per dataset class id

    std::size_t session_count() const noexcept { return sessions.size() + 1; }
    // Classes introduced in 1-based session s.
    const std::vector<ClassId>& classes_of(std::size_t session) const;
    // Every class seen in sessions 1..s.
    std::vector<ClassId> seen_through(std::size_t session) const;
    // Classes introduced after the base session.
    std::vector<ClassId> incremental_classes() const;
    void validate() const;
};

// Base classes are ids [0, base); session s takes the next N ids. Shots are sampled per seed.
SessionPlan build_sessions(const FeatureDataset& data, std::size_t base_classes, std::size_t ways, std::size_t shots,
                           std::size_t sessions, std::uint64_t seed);

struct ModelState {
    BaseBranch base;
    std::optional<NovelBranch> novel;
    std::vector<std::vector<ClassId>> session_classes;  // learned so far, per session

    std::size_t sessions_trained() const noexcept { return session_classes.size(); }
};

enum class Branch { base, novel };

struct Prediction {
    std::optional<ClassId> label;  // nullopt = Unknown
    Branch branch = Branch::base;  // the single branch that produced the verdict
};

// Base branch first; a rejected sample goes to NME over the novel means when any exist.
Prediction route_predict(std::span<const double> x, const ModelState& state);
Prediction route_predict(std::span<const double> x, const ModelState& state, const ClassMeans& novel_means);

struct RoutingCounts {
    std::size_t base = 0;
    std::size_t novel = 0;
};

// Percent of correct routed predictions over test samples of every class seen through `session`.
double session_accuracy(const ModelState& state, const FeatureDataset& data, const SessionPlan& plan,
                        std::size_t session, RoutingCounts* counts = nullptr);
// Same restricted to incremental classes; session 1 is a contract error.
double novel_accuracy(const ModelState& state, const FeatureDataset& data, const SessionPlan& plan,
                      std::size_t session);

double performance_drop(std::span<const double> accuracies);
double average_accuracy(std::span<const double> accuracies);
double round2(double v);

struct SessionReport {
    std::vector<double> overall;                // percent, per session
    std::vector<std::optional<double>> novel;   // percent, empty for session 1
    double known_accuracy = 0.0;                // session 1, percent
    std::optional<double> unknown_accuracy;     // session 1 on future-session classes, percent
    double base_close_set_accuracy = 0.0;       // session 1 argmax accuracy, percent
    double pd = 0.0;
    double average = 0.0;
    RoutingCounts routing;                      // summed over every evaluation
};

struct ProtocolConfig {
    BackboneConfig backbone;
    BallConfig ball;
    RplLossConfig rpl;
    BaseTrainConfig base_train;
    IncrementalLossConfig incremental_loss;
    IncrementalTrainConfig incremental_train;

    bool operator==(const ProtocolConfig&) const = default;
};

struct ProtocolRun {
    SessionReport report;
    ModelState state;
};

// Trains the base branch, then every incremental session in order, evaluating after each.
// Freeze, routing and disjointness invariants are asserted throughout; a breach is a ProtocolError.
ProtocolRun run_protocol(const FeatureDataset& data, const SessionPlan& plan, const ProtocolConfig& cfg,
                         std::uint64_t seed);

} // namespace hyperfscil
