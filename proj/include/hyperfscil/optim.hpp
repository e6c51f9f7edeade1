#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "hyperfscil/diff.hpp"

namespace hyperfscil {

struct LrMilestone {
    int epoch = 0;
    double multiplier = 1.0;

    bool operator==(const LrMilestone&) const = default;
};

struct SgdConfig {
    double base_lr = 0.1;
    double weight_decay = 5e-4;
    double momentum = 0.9;
    std::vector<LrMilestone> milestones;
    // Rescales the raw gradient of the trainable tensors to at most this global L2 norm; 0 disables.
    double clip_norm = 0.0;

    // base_lr times the multiplier of every milestone with epoch >= milestone.
    double learning_rate(int epoch) const;
    void validate() const;

    bool operator==(const SgdConfig&) const = default;
};

// A named, row-major block of trainable scalars plus its optimizer state.
struct ParamTensor {
    std::string name;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;
    std::vector<double> grads;
    std::vector<double> velocity;
    bool frozen = false;

    std::size_t size() const noexcept { return values.size(); }
    std::span<const double> row(std::size_t r) const { return {values.data() + r * cols, cols}; }
};

class ParameterStore {
public:
    ParameterStore() = default;
    explicit ParameterStore(SgdConfig sgd);

    ParamTensor& add(std::string name, std::size_t rows, std::size_t cols, std::vector<double> values);
    ParamTensor& add_zeros(std::string name, std::size_t rows, std::size_t cols);
    bool contains(const std::string& name) const;
    ParamTensor& at(const std::string& name);
    const ParamTensor& at(const std::string& name) const;
    // Replaces the values of an existing tensor (shape may change); resets grads and velocity.
    void reshape(const std::string& name, std::size_t rows, std::size_t cols, std::vector<double> values);

    std::vector<ParamTensor>& tensors() noexcept { return tensors_; }
    const std::vector<ParamTensor>& tensors() const noexcept { return tensors_; }

    SgdConfig& optimizer() noexcept { return sgd_; }
    const SgdConfig& optimizer() const noexcept { return sgd_; }

    void zero_grad();
    void set_frozen(const std::string& name, bool frozen);

    // Bitwise equality of names, shapes and values (optimizer state ignored).
    bool same_values(const ParameterStore& other) const;

private:
    std::vector<ParamTensor> tensors_;
    std::map<std::string, std::size_t> index_;
    SgdConfig sgd_;
};

// Leaves for every tensor of a store, recorded on one tape.
class Binding {
public:
    Binding(diff::Tape& tape, const ParameterStore& store);

    std::span<const diff::Var> operator[](const std::string& name) const;
    std::span<const diff::Var> row(const std::string& name, std::size_t r) const;
    const ParameterStore& store() const noexcept { return *store_; }
    diff::Tape& tape() const noexcept { return *tape_; }

    // Adds the tape gradients of every leaf into the store's grads.
    void accumulate_grads(ParameterStore& store) const;

private:
    diff::Tape* tape_;
    const ParameterStore* store_;
    std::map<std::string, std::vector<diff::Var>> leaves_;
};

// One SGD step with weight decay and momentum using lr(epoch). Frozen tensors are left
// untouched. All grads are reset to zero afterwards.
void sgd_step(ParameterStore& params, int epoch);

using LossBuilder = std::function<diff::Var(diff::Tape&, const Binding&)>;

struct GradCheckEntry {
    std::string tensor;
    double max_relative_error = 0.0;
    std::size_t checked = 0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double tolerance = 0.0;

    double max_relative_error() const;
    bool passed() const { return max_relative_error() <= tolerance; }
};

// Compares analytic gradients with central differences (L(p+h) - L(p-h)) / 2h for every
// scalar of every non-frozen tensor. Relative error uses max(|analytic|, |numeric|, 1e-8)
// as denominator. Leaves the store's values unchanged and its grads zeroed.
GradCheckReport finite_difference_check(const LossBuilder& loss, ParameterStore& params, double step,
                                        double tolerance);

// Scalar loss value of a builder at the store's current values.
double evaluate_loss(const LossBuilder& loss, const ParameterStore& params);

} // namespace hyperfscil
