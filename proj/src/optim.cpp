#include "hyperfscil/optim.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "hyperfscil/errors.hpp"

namespace hyperfscil {

double SgdConfig::learning_rate(int epoch) const {
    double lr = base_lr;
    for (const auto& m : milestones)
        if (epoch >= m.epoch) lr *= m.multiplier;
    return lr;
}

void SgdConfig::validate() const {
    if (!(base_lr >= 0.0) || !std::isfinite(base_lr)) throw ConfigError("learning rate must be finite and >= 0");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0,1)");
    if (!(clip_norm >= 0.0) || !std::isfinite(clip_norm)) throw ConfigError("clip_norm must be finite and >= 0");
    for (std::size_t i = 0; i < milestones.size(); ++i) {
        if (milestones[i].multiplier <= 0.0) throw ConfigError("milestone multipliers must be > 0");
        if (i > 0 && milestones[i].epoch <= milestones[i - 1].epoch)
            throw ConfigError("milestones must be strictly increasing");
    }
}

ParameterStore::ParameterStore(SgdConfig sgd) : sgd_(std::move(sgd)) { sgd_.validate(); }

ParamTensor& ParameterStore::add(std::string name, std::size_t rows, std::size_t cols,
                                 std::vector<double> values) {
    if (values.size() != rows * cols)
        throw ShapeError("parameter '" + name + "': expected " + std::to_string(rows * cols) + " values, got " +
                         std::to_string(values.size()));
    if (index_.contains(name)) throw ContractError("duplicate parameter '" + name + "'");
    index_[name] = tensors_.size();
    ParamTensor t;
    t.name = std::move(name);
    t.rows = rows;
    t.cols = cols;
    t.grads.assign(values.size(), 0.0);
    t.velocity.assign(values.size(), 0.0);
    t.values = std::move(values);
    tensors_.push_back(std::move(t));
    return tensors_.back();
}

ParamTensor& ParameterStore::add_zeros(std::string name, std::size_t rows, std::size_t cols) {
    return add(std::move(name), rows, cols, std::vector<double>(rows * cols, 0.0));
}

bool ParameterStore::contains(const std::string& name) const { return index_.contains(name); }

ParamTensor& ParameterStore::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
    return tensors_[it->second];
}

const ParamTensor& ParameterStore::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
    return tensors_[it->second];
}

void ParameterStore::reshape(const std::string& name, std::size_t rows, std::size_t cols,
                             std::vector<double> values) {
    if (values.size() != rows * cols) throw ShapeError("parameter '" + name + "': bad reshape");
    ParamTensor& t = at(name);
    t.rows = rows;
    t.cols = cols;
    t.grads.assign(values.size(), 0.0);
    t.velocity.assign(values.size(), 0.0);
    t.values = std::move(values);
}

void ParameterStore::zero_grad() {
    for (auto& t : tensors_) std::fill(t.grads.begin(), t.grads.end(), 0.0);
}

void ParameterStore::set_frozen(const std::string& name, bool frozen) { at(name).frozen = frozen; }

bool ParameterStore::same_values(const ParameterStore& other) const {
    if (tensors_.size() != other.tensors_.size()) return false;
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
        const auto& a = tensors_[i];
        const auto& b = other.tensors_[i];
        if (a.name != b.name || a.rows != b.rows || a.cols != b.cols) return false;
        if (a.values.size() != b.values.size()) return false;
        if (!a.values.empty() &&
            std::memcmp(a.values.data(), b.values.data(), a.values.size() * sizeof(double)) != 0)
            return false;
    }
    return true;
}

Binding::Binding(diff::Tape& tape, const ParameterStore& store) : tape_(&tape), store_(&store) {
    for (const auto& t : store.tensors()) {
        auto& leaves = leaves_[t.name];
        leaves.reserve(t.size());
        for (double v : t.values) leaves.push_back(tape.variable(v));
    }
}

std::span<const diff::Var> Binding::operator[](const std::string& name) const {
    auto it = leaves_.find(name);
    if (it == leaves_.end()) throw ContractError("binding has no parameter '" + name + "'");
    return it->second;
}

std::span<const diff::Var> Binding::row(const std::string& name, std::size_t r) const {
    const auto& t = store_->at(name);
    return (*this)[name].subspan(r * t.cols, t.cols);
}

void Binding::accumulate_grads(ParameterStore& store) const {
    for (auto& t : store.tensors()) {
        auto it = leaves_.find(t.name);
        if (it == leaves_.end()) continue;
        if (it->second.size() != t.size()) throw ShapeError("binding is stale for '" + t.name + "'");
        for (std::size_t i = 0; i < t.size(); ++i) t.grads[i] += it->second[i].grad();
    }
}

void sgd_step(ParameterStore& params, int epoch) {
    const SgdConfig& sgd = params.optimizer();
    const double lr = sgd.learning_rate(epoch);
    double sq = 0.0;
    for (auto& t : params.tensors()) {
        if (t.frozen) continue;
        for (double g : t.grads) {
            if (!std::isfinite(g)) throw NumericalError("non-finite gradient for parameter '" + t.name + "'");
            sq += g * g;
        }
    }
    const double norm = std::sqrt(sq);
    const double clip = sgd.clip_norm > 0.0 && norm > sgd.clip_norm ? sgd.clip_norm / norm : 1.0;
    for (auto& t : params.tensors()) {
        if (t.frozen) continue;
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double g = clip * t.grads[i] + sgd.weight_decay * t.values[i];
            t.velocity[i] = sgd.momentum * t.velocity[i] + g;
            t.values[i] -= lr * t.velocity[i];
        }
    }
    params.zero_grad();
}

double evaluate_loss(const LossBuilder& loss, const ParameterStore& params) {
    diff::Tape tape;
    Binding binding(tape, params);
    return diff::forward_eval(loss(tape, binding));
}

double GradCheckReport::max_relative_error() const {
    double m = 0.0;
    for (const auto& e : entries) m = std::max(m, e.max_relative_error);
    return m;
}

GradCheckReport finite_difference_check(const LossBuilder& loss, ParameterStore& params, double step,
                                        double tolerance) {
    if (!(step > 0.0)) throw ContractError("finite_difference_check: step must be > 0");

    const double first = evaluate_loss(loss, params);
    const double second = evaluate_loss(loss, params);
    if (first != second)
        throw DeterminismError("loss is not deterministic: repeated evaluations differ");

    params.zero_grad();
    {
        diff::Tape tape;
        Binding binding(tape, params);
        diff::Var root = loss(tape, binding);
        diff::forward_eval(root);
        diff::backward_grad(root);
        binding.accumulate_grads(params);
    }

    GradCheckReport report;
    report.tolerance = tolerance;
    for (auto& t : params.tensors()) {
        if (t.frozen) continue;
        GradCheckEntry entry{t.name, 0.0, 0};
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double analytic = t.grads[i];
            const double original = t.values[i];
            t.values[i] = original + step;
            const double plus = evaluate_loss(loss, params);
            t.values[i] = original - step;
            const double minus = evaluate_loss(loss, params);
            t.values[i] = original;
            const double numeric = (plus - minus) / (2.0 * step);
            const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
            entry.max_relative_error = std::max(entry.max_relative_error, std::abs(analytic - numeric) / denom);
            ++entry.checked;
        }
        report.entries.push_back(std::move(entry));
    }
    params.zero_grad();
    return report;
}

} // namespace hyperfscil
