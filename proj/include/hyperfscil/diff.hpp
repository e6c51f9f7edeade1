#pragma once

// Scalar reverse-mode differentiation on a Wengert tape.
//
// Every arithmetic result is evaluated eagerly and recorded as a node holding
// its value and the local partials towards its parents. backward() sweeps the
// tape once in reverse order. The same free functions are provided for plain
// doubles so that numeric kernels can be written once as templates over the
// scalar type and instantiated for evaluation (double) or training (Var).

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace hyperfscil::diff {

enum class OpKind : std::uint8_t {
    Leaf,
    Constant,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Log,
    Sqrt,
    Tanh,
    Artanh,
    Relu,
    Softplus,
    Sigmoid,
    Square,
    Sum,
    Dot,
    Affine,
    Norm,
    SquaredDistance,
    Distance,
    LogSumExp,
};

const char* op_name(OpKind kind) noexcept;

class Tape;

// Handle to one node of a Tape. Cheap to copy; the tape must outlive it.
class Var {
public:
    Var() = default;
    Var(Tape* tape, std::uint32_t index) : tape_(tape), index_(index) {}

    double value() const;
    double grad() const;
    OpKind kind() const;
    Tape* tape() const noexcept { return tape_; }
    std::uint32_t index() const noexcept { return index_; }

private:
    Tape* tape_ = nullptr;
    std::uint32_t index_ = 0;
};

struct Edge {
    std::uint32_t parent;
    double partial;
};

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Differentiable leaf.
    Var variable(double value);
    // Leaf that is not meant to receive gradients (still tracked for uniformity).
    Var constant(double value);

    Var emit(OpKind kind, double value, std::initializer_list<Edge> edges);

    // Incremental construction of an n-ary node: push edges, then close it.
    void push_edge(Var parent, double partial);
    Var close_node(OpKind kind, double value);

    // Adds d(root)/d(node) into every node's grad. Repeated calls accumulate.
    void backward(Var root);
    void zero_grad();
    void clear();

    std::size_t size() const noexcept { return nodes_.size(); }
    double value(std::uint32_t i) const { return nodes_[i].value; }
    double grad(std::uint32_t i) const { return nodes_[i].grad; }
    OpKind kind(std::uint32_t i) const { return nodes_[i].kind; }

    // Validates every ancestor of root is finite; throws NumericalError naming the node kind.
    double checked_value(Var root) const;

private:
    struct Node {
        double value;
        double grad;
        std::uint32_t edge_begin;
        std::uint32_t edge_end;
        OpKind kind;
    };

    std::vector<Node> nodes_;
    std::vector<Edge> edges_;
    std::uint32_t pending_edge_begin_ = 0;
    std::vector<double> adjoint_;
};

// Root value after verifying all of its ancestors are finite.
double forward_eval(Var root);
// Populates grads for a scalar root; a root made of more than one node is a contract error.
void backward_grad(Var root);
void backward_grad(std::span<const Var> root);

inline double value_of(double x) noexcept { return x; }
inline double value_of(const Var& x) { return x.value(); }

// Lifts a constant into the scalar domain of `like`.
inline double lift(double /*like*/, double v) noexcept { return v; }
Var lift(const Var& like, double v);

Var operator+(Var a, Var b);
Var operator+(Var a, double b);
Var operator+(double a, Var b);
Var operator-(Var a, Var b);
Var operator-(Var a, double b);
Var operator-(double a, Var b);
Var operator*(Var a, Var b);
Var operator*(Var a, double b);
Var operator*(double a, Var b);
Var operator/(Var a, Var b);
Var operator/(Var a, double b);
Var operator/(double a, Var b);
Var operator-(Var a);

// Clamp applied to the argument of artanh so the result stays finite.
inline constexpr double kArtanhClamp = 1.0 - 1e-15;

double exp(double x);
double log(double x);
double sqrt(double x);
double tanh(double x);
double artanh(double x);
double relu(double x);
double softplus(double x);
double sigmoid(double x);
double square(double x);

Var exp(Var x);
Var log(Var x);
Var sqrt(Var x);
Var tanh(Var x);
Var artanh(Var x);
Var relu(Var x);
Var softplus(Var x);
Var sigmoid(Var x);
Var square(Var x);

double sum(std::span<const double> xs);
double dot(std::span<const double> a, std::span<const double> b);
double squared_norm(std::span<const double> a);
double norm(std::span<const double> a);
double squared_distance(std::span<const double> a, std::span<const double> b);
double distance(std::span<const double> a, std::span<const double> b);
double log_sum_exp(std::span<const double> xs);
double affine(std::span<const double> weights, std::span<const double> x, double bias);

Var sum(std::span<const Var> xs);
Var dot(std::span<const Var> a, std::span<const Var> b);
Var squared_norm(std::span<const Var> a);
// Zero-safe: the subgradient at the origin is taken as 0.
Var norm(std::span<const Var> a);
Var squared_distance(std::span<const Var> a, std::span<const Var> b);
// Zero-safe like norm().
Var distance(std::span<const Var> a, std::span<const Var> b);
Var log_sum_exp(std::span<const Var> xs);
Var affine(std::span<const Var> weights, std::span<const Var> x, Var bias);
Var affine(std::span<const Var> weights, std::span<const double> x, Var bias);

inline double mean_of(std::span<const double> xs) { return sum(xs) / static_cast<double>(xs.size()); }
inline Var mean_of(std::span<const Var> xs) { return sum(xs) / static_cast<double>(xs.size()); }

} // namespace hyperfscil::diff
