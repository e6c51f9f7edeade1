#include "hyperfscil/diff.hpp"

#include <algorithm>
#include <cassert>
#include <limits>
#include <string>

#include "hyperfscil/errors.hpp"

namespace hyperfscil::diff {

const char* op_name(OpKind kind) noexcept {
    switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Constant: return "constant";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Div: return "div";
    case OpKind::Neg: return "neg";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::Sqrt: return "sqrt";
    case OpKind::Tanh: return "tanh";
    case OpKind::Artanh: return "artanh";
    case OpKind::Relu: return "relu";
    case OpKind::Softplus: return "softplus";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Square: return "square";
    case OpKind::Sum: return "sum";
    case OpKind::Dot: return "dot";
    case OpKind::Affine: return "affine";
    case OpKind::Norm: return "norm";
    case OpKind::SquaredDistance: return "squared_distance";
    case OpKind::Distance: return "distance";
    case OpKind::LogSumExp: return "log_sum_exp";
    }
    return "unknown";
}

double Var::value() const { return tape_->value(index_); }
double Var::grad() const { return tape_->grad(index_); }
OpKind Var::kind() const { return tape_->kind(index_); }

Var Tape::variable(double value) {
    pending_edge_begin_ = static_cast<std::uint32_t>(edges_.size());
    return close_node(OpKind::Leaf, value);
}

Var Tape::constant(double value) {
    pending_edge_begin_ = static_cast<std::uint32_t>(edges_.size());
    return close_node(OpKind::Constant, value);
}

Var Tape::emit(OpKind kind, double value, std::initializer_list<Edge> edges) {
    pending_edge_begin_ = static_cast<std::uint32_t>(edges_.size());
    edges_.insert(edges_.end(), edges.begin(), edges.end());
    return close_node(kind, value);
}

void Tape::push_edge(Var parent, double partial) {
    assert(parent.tape() == this);
    edges_.push_back({parent.index(), partial});
}

Var Tape::close_node(OpKind kind, double value) {
    const auto end = static_cast<std::uint32_t>(edges_.size());
    nodes_.push_back({value, 0.0, pending_edge_begin_, end, kind});
    pending_edge_begin_ = end;
    return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

void Tape::backward(Var root) {
    if (root.tape() != this) throw ContractError("backward: root does not belong to this tape");
    const std::uint32_t n = root.index() + 1;
    adjoint_.assign(n, 0.0);
    adjoint_[root.index()] = 1.0;
    for (std::uint32_t i = n; i-- > 0;) {
        const double a = adjoint_[i];
        if (a == 0.0) continue;
        const Node& node = nodes_[i];
        for (std::uint32_t e = node.edge_begin; e < node.edge_end; ++e)
            adjoint_[edges_[e].parent] += edges_[e].partial * a;
    }
    for (std::uint32_t i = 0; i < n; ++i) nodes_[i].grad += adjoint_[i];
}

void Tape::zero_grad() {
    for (auto& node : nodes_) node.grad = 0.0;
}

void Tape::clear() {
    nodes_.clear();
    edges_.clear();
    pending_edge_begin_ = 0;
}

double Tape::checked_value(Var root) const {
    if (root.tape() != this) throw ContractError("forward_eval: root does not belong to this tape");
    std::vector<char> reachable(root.index() + 1, 0);
    reachable[root.index()] = 1;
    for (std::uint32_t i = root.index() + 1; i-- > 0;) {
        if (!reachable[i]) continue;
        const Node& node = nodes_[i];
        for (std::uint32_t e = node.edge_begin; e < node.edge_end; ++e) reachable[edges_[e].parent] = 1;
    }
    // The earliest non-finite node is the one that produced the bad value.
    for (std::uint32_t i = 0; i <= root.index(); ++i)
        if (reachable[i] && !std::isfinite(nodes_[i].value))
            throw NumericalError(std::string("non-finite value produced by '") + op_name(nodes_[i].kind) +
                                 "' node");
    return nodes_[root.index()].value;
}

double forward_eval(Var root) {
    if (root.tape() == nullptr) throw ContractError("forward_eval: detached value");
    return root.tape()->checked_value(root);
}

void backward_grad(Var root) {
    if (root.tape() == nullptr) throw ContractError("backward_grad: detached value");
    root.tape()->backward(root);
}

void backward_grad(std::span<const Var> root) {
    if (root.size() != 1)
        throw ContractError("backward_grad: root must be a scalar, got " + std::to_string(root.size()) +
                            " components");
    backward_grad(root.front());
}

namespace {

Tape& tape_of(const Var& a) {
    if (a.tape() == nullptr) throw ContractError("operation on a detached value");
    return *a.tape();
}

Tape& tape_of(const Var& a, const Var& b) {
    if (a.tape() == nullptr || a.tape() != b.tape())
        throw ContractError("operands belong to different tapes");
    return *a.tape();
}

Var unary(OpKind kind, Var a, double value, double da) {
    return tape_of(a).emit(kind, value, {{a.index(), da}});
}

Var binary(OpKind kind, Var a, Var b, double value, double da, double db) {
    return tape_of(a, b).emit(kind, value, {{a.index(), da}, {b.index(), db}});
}

template <class F>
Var nary(OpKind kind, std::span<const Var> xs, double value, F&& partial) {
    if (xs.empty()) throw ContractError(std::string(op_name(kind)) + ": empty operand list");
    Tape& t = tape_of(xs.front());
    for (std::size_t i = 0; i < xs.size(); ++i) t.push_edge(xs[i], partial(i));
    return t.close_node(kind, value);
}

void require_same_size(std::size_t a, std::size_t b, const char* what) {
    if (a != b)
        throw ShapeError(std::string(what) + ": size mismatch (" + std::to_string(a) + " vs " +
                         std::to_string(b) + ")");
}

} // namespace

Var lift(const Var& like, double v) { return tape_of(like).constant(v); }

Var operator+(Var a, Var b) { return binary(OpKind::Add, a, b, a.value() + b.value(), 1.0, 1.0); }
Var operator+(Var a, double b) { return unary(OpKind::Add, a, a.value() + b, 1.0); }
Var operator+(double a, Var b) { return b + a; }
Var operator-(Var a, Var b) { return binary(OpKind::Sub, a, b, a.value() - b.value(), 1.0, -1.0); }
Var operator-(Var a, double b) { return unary(OpKind::Sub, a, a.value() - b, 1.0); }
Var operator-(double a, Var b) { return unary(OpKind::Sub, b, a - b.value(), -1.0); }
Var operator*(Var a, Var b) {
    return binary(OpKind::Mul, a, b, a.value() * b.value(), b.value(), a.value());
}
Var operator*(Var a, double b) { return unary(OpKind::Mul, a, a.value() * b, b); }
Var operator*(double a, Var b) { return b * a; }
Var operator/(Var a, Var b) {
    const double bv = b.value();
    const double q = a.value() / bv;
    return binary(OpKind::Div, a, b, q, 1.0 / bv, -q / bv);
}
Var operator/(Var a, double b) { return unary(OpKind::Div, a, a.value() / b, 1.0 / b); }
Var operator/(double a, Var b) {
    const double bv = b.value();
    const double q = a / bv;
    return unary(OpKind::Div, b, q, -q / bv);
}
Var operator-(Var a) { return unary(OpKind::Neg, a, -a.value(), -1.0); }

double exp(double x) { return std::exp(x); }
double log(double x) { return std::log(x); }
double sqrt(double x) { return std::sqrt(x); }
double tanh(double x) { return std::tanh(x); }

double artanh(double x) {
    const double z = std::clamp(x, -kArtanhClamp, kArtanhClamp);
    return 0.5 * std::log((1.0 + z) / (1.0 - z));
}

double relu(double x) { return x > 0.0 ? x : 0.0; }

double softplus(double x) {
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double square(double x) { return x * x; }

Var exp(Var x) {
    const double v = std::exp(x.value());
    return unary(OpKind::Exp, x, v, v);
}

Var log(Var x) { return unary(OpKind::Log, x, std::log(x.value()), 1.0 / x.value()); }

Var sqrt(Var x) {
    const double v = std::sqrt(x.value());
    return unary(OpKind::Sqrt, x, v, 0.5 / v);
}

Var tanh(Var x) {
    const double v = std::tanh(x.value());
    return unary(OpKind::Tanh, x, v, 1.0 - v * v);
}

Var artanh(Var x) {
    const double xv = x.value();
    const bool clamped = std::abs(xv) > kArtanhClamp;
    return unary(OpKind::Artanh, x, artanh(xv), clamped ? 0.0 : 1.0 / (1.0 - xv * xv));
}

Var relu(Var x) {
    const double xv = x.value();
    return unary(OpKind::Relu, x, relu(xv), xv > 0.0 ? 1.0 : 0.0);
}

Var softplus(Var x) {
    return unary(OpKind::Softplus, x, softplus(x.value()), sigmoid(x.value()));
}

Var sigmoid(Var x) {
    const double s = sigmoid(x.value());
    return unary(OpKind::Sigmoid, x, s, s * (1.0 - s));
}

Var square(Var x) { return unary(OpKind::Square, x, x.value() * x.value(), 2.0 * x.value()); }

double sum(std::span<const double> xs) {
    double s = 0.0;
    for (double x : xs) s += x;
    return s;
}

double dot(std::span<const double> a, std::span<const double> b) {
    require_same_size(a.size(), b.size(), "dot");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double squared_norm(std::span<const double> a) { return dot(a, a); }
double norm(std::span<const double> a) { return std::sqrt(squared_norm(a)); }

double squared_distance(std::span<const double> a, std::span<const double> b) {
    require_same_size(a.size(), b.size(), "squared_distance");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

double distance(std::span<const double> a, std::span<const double> b) {
    return std::sqrt(squared_distance(a, b));
}

double log_sum_exp(std::span<const double> xs) {
    if (xs.empty()) throw ContractError("log_sum_exp: empty operand list");
    const double m = *std::max_element(xs.begin(), xs.end());
    double s = 0.0;
    for (double x : xs) s += std::exp(x - m);
    return m + std::log(s);
}

double affine(std::span<const double> weights, std::span<const double> x, double bias) {
    return bias + dot(weights, x);
}

Var sum(std::span<const Var> xs) {
    double s = 0.0;
    for (const auto& x : xs) s += x.value();
    return nary(OpKind::Sum, xs, s, [](std::size_t) { return 1.0; });
}

Var dot(std::span<const Var> a, std::span<const Var> b) {
    require_same_size(a.size(), b.size(), "dot");
    if (a.empty()) throw ContractError("dot: empty operand list");
    Tape& t = tape_of(a.front());
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += a[i].value() * b[i].value();
        t.push_edge(a[i], b[i].value());
        t.push_edge(b[i], a[i].value());
    }
    return t.close_node(OpKind::Dot, s);
}

Var squared_norm(std::span<const Var> a) {
    double s = 0.0;
    for (const auto& x : a) s += x.value() * x.value();
    return nary(OpKind::Dot, a, s, [&](std::size_t i) { return 2.0 * a[i].value(); });
}

Var norm(std::span<const Var> a) {
    double s = 0.0;
    for (const auto& x : a) s += x.value() * x.value();
    const double n = std::sqrt(s);
    return nary(OpKind::Norm, a, n, [&](std::size_t i) { return n > 0.0 ? a[i].value() / n : 0.0; });
}

Var squared_distance(std::span<const Var> a, std::span<const Var> b) {
    require_same_size(a.size(), b.size(), "squared_distance");
    if (a.empty()) throw ContractError("squared_distance: empty operand list");
    Tape& t = tape_of(a.front());
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i].value() - b[i].value();
        s += d * d;
        t.push_edge(a[i], 2.0 * d);
        t.push_edge(b[i], -2.0 * d);
    }
    return t.close_node(OpKind::SquaredDistance, s);
}

Var distance(std::span<const Var> a, std::span<const Var> b) {
    require_same_size(a.size(), b.size(), "distance");
    if (a.empty()) throw ContractError("distance: empty operand list");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i].value() - b[i].value();
        s += d * d;
    }
    const double n = std::sqrt(s);
    Tape& t = tape_of(a.front());
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double g = n > 0.0 ? (a[i].value() - b[i].value()) / n : 0.0;
        t.push_edge(a[i], g);
        t.push_edge(b[i], -g);
    }
    return t.close_node(OpKind::Distance, n);
}

Var log_sum_exp(std::span<const Var> xs) {
    if (xs.empty()) throw ContractError("log_sum_exp: empty operand list");
    double m = -std::numeric_limits<double>::infinity();
    for (const auto& x : xs) m = std::max(m, x.value());
    double s = 0.0;
    for (const auto& x : xs) s += std::exp(x.value() - m);
    const double lse = m + std::log(s);
    return nary(OpKind::LogSumExp, xs, lse, [&](std::size_t i) { return std::exp(xs[i].value() - lse); });
}

Var affine(std::span<const Var> weights, std::span<const Var> x, Var bias) {
    require_same_size(weights.size(), x.size(), "affine");
    Tape& t = tape_of(bias);
    double s = bias.value();
    for (std::size_t i = 0; i < x.size(); ++i) {
        s += weights[i].value() * x[i].value();
        t.push_edge(weights[i], x[i].value());
        t.push_edge(x[i], weights[i].value());
    }
    t.push_edge(bias, 1.0);
    return t.close_node(OpKind::Affine, s);
}

Var affine(std::span<const Var> weights, std::span<const double> x, Var bias) {
    require_same_size(weights.size(), x.size(), "affine");
    Tape& t = tape_of(bias);
    double s = bias.value();
    for (std::size_t i = 0; i < x.size(); ++i) {
        s += weights[i].value() * x[i];
        t.push_edge(weights[i], x[i]);
    }
    t.push_edge(bias, 1.0);
    return t.close_node(OpKind::Affine, s);
}

} // namespace hyperfscil::diff
