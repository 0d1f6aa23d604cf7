#pragma once

// Define-by-run reverse-mode differentiation over dense double matrices.
//
// A Tape records every primitive evaluated through it. Trainable state lives
// in Tensor objects owned outside the tape; Tape::leaf() binds one into the
// graph and Tape::backward() accumulates dLoss/dTensor into Tensor::grad.
// Intermediate gradients are released as soon as backward finishes.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace flowfuse::ad {

using Matrix = Eigen::MatrixXd;

/// A dense matrix with an optional gradient slot.
struct Tensor {
    Matrix value;
    Matrix grad;  // empty until the first backward touches it
    bool requires_grad = false;

    Tensor() = default;
    explicit Tensor(Matrix v, bool trainable = false)
        : value(std::move(v)), requires_grad(trainable) {}

    Eigen::Index rows() const { return value.rows(); }
    Eigen::Index cols() const { return value.cols(); }
    bool has_grad() const { return grad.size() != 0; }
    void zero_grad() { grad.setZero(value.rows(), value.cols()); }
    void clear_grad() { grad.resize(0, 0); }
};

enum class Mode { Train, Eval };

class Tape;

/// Handle to a value recorded on a tape.
class Var {
public:
    Var() = default;

    const Matrix& value() const;
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
    Tape& tape() const { return *tape_; }
    std::size_t id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* t, std::size_t id) : tape_(t), id_(id) {}
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Gradients collected for leaf tensors when backward() is asked not to
/// write into Tensor::grad directly (used for parallel batch members).
using LeafGrads = std::unordered_map<const Tensor*, Matrix>;

class Tape {
public:
    using BackwardFn = std::function<void(Tape&, const Matrix& upstream)>;

    /// A tape built with record_gradients = false never marks leaves as
    /// trainable; use it for inference.
    explicit Tape(bool record_gradients = true) : record_gradients_(record_gradients) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Record a value that never receives gradient.
    Var constant(Matrix value);

    /// Bind an external tensor. Gradient flows into it iff requires_grad.
    /// Binding the same tensor twice returns the same node.
    Var leaf(Tensor& tensor);

    /// Used by primitives: record an op whose inputs are `inputs`.
    Var record(const char* op, Matrix value, std::initializer_list<Var> inputs,
               BackwardFn backward);

    /// Accumulate `g` into the gradient slot of node `v` (no-op for nodes
    /// that no parameter depends on).
    void accumulate(const Var& v, const Matrix& g);
    bool needs_grad(const Var& v) const { return nodes_[v.id()].needs_grad; }

    /// Reverse sweep from a 1x1 loss. Leaf gradients are added to the bound
    /// tensors, or to `sink` when given.
    void backward(const Var& loss, LeafGrads* sink = nullptr);

    const Matrix& value(const Var& v) const { return nodes_[v.id()].value; }
    std::size_t size() const { return nodes_.size(); }

    /// Human-readable op list, one line per node.
    void dump(std::ostream& os) const;

private:
    struct Node {
        const char* op = "";
        Matrix value;
        Matrix grad;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        Tensor* leaf = nullptr;
        bool needs_grad = false;
    };
    void check_owned(const Var& v, const char* op) const;
    std::vector<Node> nodes_;
    std::unordered_map<const Tensor*, std::size_t> leaves_;
    bool record_gradients_ = true;
};

// ---------------------------------------------------------------------------
// Primitives. Shape mismatches throw ShapeError naming both shapes.

Var matmul(const Var& a, const Var& b);
/// Elementwise sum; `b` may also be a 1 x cols row or rows x 1 column that is
/// broadcast across `a`.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var hadamard(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var transpose(const Var& a);
Var concat_rows(const Var& a, const Var& b);
Var concat_cols(const Var& a, const Var& b);
/// Rows [begin, end).
Var slice_rows(const Var& a, Eigen::Index begin, Eigen::Index end);
/// Row-major reinterpretation to rows x cols.
Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols);
Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var identity(const Var& a);
/// Inverted dropout: in Train mode each entry is zeroed with probability p
/// and survivors are scaled by 1/(1-p). Eval mode returns the input node.
Var dropout(const Var& a, double p, Mode mode, std::uint64_t seed);
/// Row-wise softmax restricted to entries where mask != 0. Masked entries
/// are exactly 0; a row with no allowed entries is all zeros.
Var masked_softmax_rows(const Var& a, const Matrix& mask);
/// 1x1 sum of all entries.
Var sum(const Var& a);
/// 1x1 mean of all entries.
Var mean(const Var& a);

// ---------------------------------------------------------------------------
// Finite-difference verification.

using InputFn = std::function<Var(Tape&, const Var&)>;
using ParamFn = std::function<Var(Tape&)>;

/// Central-difference gradient of a scalar function of one matrix input.
Matrix numeric_gradient(const InputFn& f, const Matrix& point, double step = 1e-5);

/// max_i |analytic_i - numeric_i| / max(1, |numeric_i|).
double relative_gradient_error(const Matrix& analytic, const Matrix& numeric);

/// Analytic (tape) gradient of f at `point` compared with central differences.
double grad_check(const InputFn& f, const Matrix& point, double step = 1e-5);

/// Same check, with respect to every entry of every tensor in `params`.
/// `f` must bind the tensors itself through Tape::leaf.
double grad_check(const ParamFn& f, std::span<Tensor* const> params, double step = 1e-5);

}  // namespace flowfuse::ad
