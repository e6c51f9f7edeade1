#include "hyperfscil/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

namespace hyperfscil {

const std::vector<ClassId>& SessionPlan::classes_of(std::size_t session) const {
    if (session == 0 || session > session_count())
        throw ContractError("session index " + std::to_string(session) + " out of range");
    return session == 1 ? base_classes : sessions[session - 2].classes;
}

std::vector<ClassId> SessionPlan::seen_through(std::size_t session) const {
    std::vector<ClassId> out;
    for (std::size_t s = 1; s <= session; ++s) {
        const auto& c = classes_of(s);
        out.insert(out.end(), c.begin(), c.end());
    }
    return out;
}

std::vector<ClassId> SessionPlan::incremental_classes() const {
    std::vector<ClassId> out;
    for (const auto& s : sessions) out.insert(out.end(), s.classes.begin(), s.classes.end());
    return out;
}

void SessionPlan::validate() const {
    std::set<ClassId> seen;
    for (std::size_t s = 1; s <= session_count(); ++s)
        for (ClassId c : classes_of(s))
            if (!seen.insert(c).second)
                throw ProtocolError("class " + std::to_string(c) + " appears in more than one session");
    for (const auto& s : sessions) {
        if (s.classes.size() != ways) throw ProtocolError("incremental session does not have exactly N classes");
        if (s.train_indices.size() != ways * shots)
            throw ProtocolError("incremental session does not have exactly K shots per class");
    }
}

SessionPlan build_sessions(const FeatureDataset& data, std::size_t base_classes, std::size_t ways, std::size_t shots,
                           std::size_t sessions, std::uint64_t seed) {
    if (base_classes == 0) throw ProtocolError("base session needs at least one class");
    if (sessions > 0 && (ways == 0 || shots == 0)) throw ProtocolError("incremental sessions need N >= 1 and K >= 1");
    const std::size_t needed = base_classes + ways * sessions;
    if (data.class_count() < needed)
        throw ProtocolError("dataset has " + std::to_string(data.class_count()) + " classes, plan needs " +
                            std::to_string(needed));

    SessionPlan plan;
    plan.ways = ways;
    plan.shots = shots;
    plan.test_counts.resize(data.class_count(), 0);
    for (ClassId c = 0; c < data.class_count(); ++c) plan.test_counts[c] = data.indices_of(c, Split::test).size();

    for (ClassId c = 0; c < base_classes; ++c) {
        plan.base_classes.push_back(c);
        auto idx = data.indices_of(c, Split::train);
        if (idx.empty()) throw ProtocolError("base class " + std::to_string(c) + " has 0 training samples");
        plan.base_train_indices.insert(plan.base_train_indices.end(), idx.begin(), idx.end());
    }

    std::mt19937_64 rng(seed);
    ClassId next = base_classes;
    for (std::size_t s = 0; s < sessions; ++s) {
        IncrementalSession session;
        for (std::size_t n = 0; n < ways; ++n, ++next) {
            auto idx = data.indices_of(next, Split::train);
            if (idx.size() < shots)
                throw ProtocolError("class " + std::to_string(next) + " has " + std::to_string(idx.size()) +
                                    " training samples, needs " + std::to_string(shots));
            std::shuffle(idx.begin(), idx.end(), rng);
            idx.resize(shots);
            std::sort(idx.begin(), idx.end());
            session.classes.push_back(next);
            session.train_indices.insert(session.train_indices.end(), idx.begin(), idx.end());
        }
        plan.sessions.push_back(std::move(session));
    }
    plan.validate();
    return plan;
}

Prediction route_predict(std::span<const double> x, const ModelState& state) {
    if (state.novel && !state.novel->classes.empty()) return route_predict(x, state, state.novel->means());
    return route_predict(x, state, ClassMeans{});
}

Prediction route_predict(std::span<const double> x, const ModelState& state, const ClassMeans& novel_means) {
    if (const auto k = state.base.decide(x)) return {state.base.classes[*k], Branch::base};
    if (!state.novel || novel_means.empty()) return {std::nullopt, Branch::base};
    return {state.novel->classify(x, novel_means), Branch::novel};
}

namespace {

std::vector<Sample> test_samples_of(const FeatureDataset& data, const std::vector<ClassId>& classes) {
    std::vector<Sample> out;
    for (const auto& s : data.samples())
        if (s.split == Split::test && std::find(classes.begin(), classes.end(), s.label) != classes.end())
            out.push_back(s);
    return out;
}

double routed_accuracy(const ModelState& state, const std::vector<Sample>& tests, RoutingCounts* counts) {
    if (tests.empty()) throw ContractError("no test samples to evaluate");
    ClassMeans means;
    if (state.novel && !state.novel->classes.empty()) means = state.novel->means();
    std::size_t ok = 0;
    for (const auto& s : tests) {
        const auto p = route_predict(s.features, state, means);
        if (counts) ++(p.branch == Branch::base ? counts->base : counts->novel);
        if (p.label && *p.label == s.label) ++ok;
    }
    return 100.0 * static_cast<double>(ok) / static_cast<double>(tests.size());
}

std::vector<Sample> gather(const FeatureDataset& data, std::span<const std::size_t> indices) {
    std::vector<Sample> out;
    out.reserve(indices.size());
    for (auto i : indices) out.push_back(data.samples().at(i));
    return out;
}

} // namespace

double session_accuracy(const ModelState& state, const FeatureDataset& data, const SessionPlan& plan,
                        std::size_t session, RoutingCounts* counts) {
    return routed_accuracy(state, test_samples_of(data, plan.seen_through(session)), counts);
}

double novel_accuracy(const ModelState& state, const FeatureDataset& data, const SessionPlan& plan,
                      std::size_t session) {
    if (session < 2) throw ContractError("novel accuracy is undefined for the base session");
    auto seen = plan.seen_through(session);
    std::vector<ClassId> novel;
    for (ClassId c : seen)
        if (std::find(plan.base_classes.begin(), plan.base_classes.end(), c) == plan.base_classes.end())
            novel.push_back(c);
    return routed_accuracy(state, test_samples_of(data, novel), nullptr);
}

double performance_drop(std::span<const double> accuracies) {
    if (accuracies.empty()) throw ContractError("performance_drop: no sessions");
    return accuracies.front() - accuracies.back();
}

double average_accuracy(std::span<const double> accuracies) {
    if (accuracies.empty()) throw ContractError("average_accuracy: no sessions");
    double s = 0.0;
    for (double a : accuracies) s += a;
    return s / static_cast<double>(accuracies.size());
}

double round2(double v) { return std::round(v * 100.0) / 100.0; }

ProtocolRun run_protocol(const FeatureDataset& data, const SessionPlan& plan, const ProtocolConfig& cfg,
                         std::uint64_t seed) {
    plan.validate();
    if (cfg.backbone.input_dim != data.dim())
        throw ConfigError("backbone input_dim " + std::to_string(cfg.backbone.input_dim) +
                          " does not match the dataset dimension " + std::to_string(data.dim()));

    const auto base_train = gather(data, plan.base_train_indices);
    ProtocolRun run{SessionReport{},
                    ModelState{train_base_session(base_train, plan.base_classes, cfg.backbone, cfg.ball, cfg.rpl,
                                                  cfg.base_train, seed),
                               std::nullopt, {plan.base_classes}}};
    ModelState& state = run.state;
    SessionReport& report = run.report;

    const auto base_tests = test_samples_of(data, plan.base_classes);
    report.overall.push_back(session_accuracy(state, data, plan, 1, &report.routing));
    report.novel.push_back(std::nullopt);
    report.base_close_set_accuracy = 100.0 * close_set_accuracy(state.base, base_tests);
    const auto future = plan.incremental_classes();
    if (!future.empty()) {
        const auto acc = evaluate_known_unknown(state.base, base_tests, test_samples_of(data, future));
        report.known_accuracy = 100.0 * acc.known;
        report.unknown_accuracy = 100.0 * acc.unknown;
    } else {
        std::size_t ok = 0;
        for (const auto& s : base_tests) {
            const auto d = state.base.decide(s.features);
            if (d && state.base.classes[*d] == s.label) ++ok;
        }
        report.known_accuracy = 100.0 * static_cast<double>(ok) / static_cast<double>(base_tests.size());
    }

    const ParameterStore frozen_base = state.base.params;
    std::set<ClassId> seen(plan.base_classes.begin(), plan.base_classes.end());
    for (std::size_t i = 0; i < plan.sessions.size(); ++i) {
        const std::size_t session = i + 2;
        const auto& inc = plan.sessions[i];
        for (ClassId c : inc.classes)
            if (!seen.insert(c).second)
                throw ProtocolError("session " + std::to_string(session) + " reuses class " + std::to_string(c));
        if (!state.novel) state.novel = init_novel_branch(state.base, cfg.incremental_loss, cfg.incremental_train);
        const auto shots = gather(data, inc.train_indices);
        train_incremental_session(*state.novel, shots, session, cfg.incremental_train, seed + 1000 * session);
        state.session_classes.push_back(inc.classes);

        if (!state.base.params.same_values(frozen_base))
            throw ProtocolError("base branch parameters changed during session " + std::to_string(session));

        RoutingCounts counts;
        report.overall.push_back(session_accuracy(state, data, plan, session, &counts));
        const std::size_t evaluated = test_samples_of(data, plan.seen_through(session)).size();
        if (counts.base + counts.novel != evaluated)
            throw ProtocolError("routing produced " + std::to_string(counts.base + counts.novel) + " verdicts for " +
                                std::to_string(evaluated) + " samples");
        report.routing.base += counts.base;
        report.routing.novel += counts.novel;
        report.novel.push_back(novel_accuracy(state, data, plan, session));
    }

    report.pd = performance_drop(report.overall);
    report.average = average_accuracy(report.overall);
    return run;
}

} // namespace hyperfscil
