#include "flowfuse/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>

#include "flowfuse/errors.hpp"
#include "flowfuse/random.hpp"

namespace flowfuse::ad {

namespace {

std::string shape_str(const Matrix& m) {
    return "(" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ")";
}

[[noreturn]] void shape_fail(const char* op, const Matrix& a, const Matrix& b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

void same_tape(const Var& a, const Var& b, const char* op) {
    if (&a.tape() != &b.tape())
        throw std::logic_error(std::string(op) + ": operands live on different tapes");
}

}  // namespace

const Matrix& Var::value() const { return tape_->value(*this); }

// ---------------------------------------------------------------------------

void Tape::check_owned(const Var& v, const char* op) const {
    if (!v.valid() || &v.tape() != this || v.id() >= nodes_.size())
        throw std::logic_error(std::string(op) + ": variable does not belong to this tape");
}

Var Tape::constant(Matrix value) {
    Node n;
    n.op = "constant";
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Tensor& tensor) {
    if (auto it = leaves_.find(&tensor); it != leaves_.end()) return Var(this, it->second);
    Node n;
    n.needs_grad = record_gradients_ && tensor.requires_grad;
    n.op = n.needs_grad ? "param" : "input";
    n.value = tensor.value;
    n.leaf = &tensor;
    nodes_.push_back(std::move(n));
    leaves_.emplace(&tensor, nodes_.size() - 1);
    return Var(this, nodes_.size() - 1);
}

Var Tape::record(const char* op, Matrix value, std::initializer_list<Var> inputs,
                 BackwardFn backward) {
    Node n;
    n.op = op;
    n.value = std::move(value);
    n.inputs.reserve(inputs.size());
    for (const auto& in : inputs) {
        check_owned(in, op);
        n.inputs.push_back(in.id());
        n.needs_grad = n.needs_grad || nodes_[in.id()].needs_grad;
    }
    if (n.needs_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(const Var& v, const Matrix& g) {
    Node& n = nodes_[v.id()];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0)
        n.grad = g;
    else
        n.grad += g;
}

void Tape::backward(const Var& loss, LeafGrads* sink) {
    if (nodes_.empty()) throw std::logic_error("backward: tape is empty (no forward pass recorded)");
    check_owned(loss, "backward");
    const Matrix& lv = nodes_[loss.id()].value;
    if (lv.rows() != 1 || lv.cols() != 1)
        throw ShapeError("backward: loss must be 1x1, got " + shape_str(lv));

    for (auto& n : nodes_) n.grad.resize(0, 0);
    if (nodes_[loss.id()].needs_grad) nodes_[loss.id()].grad = Matrix::Ones(1, 1);

    for (std::size_t i = loss.id() + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.grad.size() == 0) continue;
        if (n.leaf != nullptr) {
            if (sink != nullptr) {
                auto [it, inserted] = sink->try_emplace(n.leaf, n.grad);
                if (!inserted) it->second += n.grad;
            } else if (n.leaf->has_grad()) {
                n.leaf->grad += n.grad;
            } else {
                n.leaf->grad = n.grad;
            }
        } else if (n.backward) {
            Matrix upstream = std::move(n.grad);
            n.backward(*this, upstream);
        }
        nodes_[i].grad.resize(0, 0);
    }
}

void Tape::dump(std::ostream& os) const {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        const Node& n = nodes_[i];
        os << '%' << i << " = " << n.op << shape_str(n.value);
        if (!n.inputs.empty()) {
            os << " <-";
            for (auto in : n.inputs) os << " %" << in;
        }
        if (n.needs_grad) os << " [grad]";
        os << '\n';
    }
}

// ---------------------------------------------------------------------------
// Primitives

Var matmul(const Var& a, const Var& b) {
    same_tape(a, b, "matmul");
    if (a.cols() != b.rows()) shape_fail("matmul", a.value(), b.value());
    Tape& t = a.tape();
    return t.record("matmul", a.value() * b.value(), {a, b},
                    [a, b](Tape& tp, const Matrix& g) {
                        if (tp.needs_grad(a)) tp.accumulate(a, g * b.value().transpose());
                        if (tp.needs_grad(b)) tp.accumulate(b, a.value().transpose() * g);
                    });
}

Var add(const Var& a, const Var& b) {
    same_tape(a, b, "add");
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    Tape& t = a.tape();
    if (av.rows() == bv.rows() && av.cols() == bv.cols()) {
        return t.record("add", av + bv, {a, b}, [a, b](Tape& tp, const Matrix& g) {
            tp.accumulate(a, g);
            tp.accumulate(b, g);
        });
    }
    if (bv.rows() == 1 && bv.cols() == av.cols()) {
        Matrix out = av.rowwise() + bv.row(0);
        return t.record("add_row", std::move(out), {a, b}, [a, b](Tape& tp, const Matrix& g) {
            tp.accumulate(a, g);
            if (tp.needs_grad(b)) tp.accumulate(b, g.colwise().sum());
        });
    }
    if (bv.cols() == 1 && bv.rows() == av.rows()) {
        Matrix out = av.colwise() + bv.col(0);
        return t.record("add_col", std::move(out), {a, b}, [a, b](Tape& tp, const Matrix& g) {
            tp.accumulate(a, g);
            if (tp.needs_grad(b)) tp.accumulate(b, g.rowwise().sum());
        });
    }
    shape_fail("add", av, bv);
}

Var sub(const Var& a, const Var& b) {
    same_tape(a, b, "sub");
    if (a.rows() != b.rows() || a.cols() != b.cols()) shape_fail("sub", a.value(), b.value());
    return a.tape().record("sub", a.value() - b.value(), {a, b},
                           [a, b](Tape& tp, const Matrix& g) {
                               tp.accumulate(a, g);
                               if (tp.needs_grad(b)) tp.accumulate(b, -g);
                           });
}

Var hadamard(const Var& a, const Var& b) {
    same_tape(a, b, "hadamard");
    if (a.rows() != b.rows() || a.cols() != b.cols())
        shape_fail("hadamard", a.value(), b.value());
    return a.tape().record("hadamard", a.value().cwiseProduct(b.value()), {a, b},
                           [a, b](Tape& tp, const Matrix& g) {
                               if (tp.needs_grad(a)) tp.accumulate(a, g.cwiseProduct(b.value()));
                               if (tp.needs_grad(b)) tp.accumulate(b, g.cwiseProduct(a.value()));
                           });
}

Var scale(const Var& a, double c) {
    return a.tape().record("scale", a.value() * c, {a},
                           [a, c](Tape& tp, const Matrix& g) { tp.accumulate(a, g * c); });
}

Var transpose(const Var& a) {
    return a.tape().record("transpose", a.value().transpose(), {a},
                           [a](Tape& tp, const Matrix& g) { tp.accumulate(a, g.transpose()); });
}

Var concat_rows(const Var& a, const Var& b) {
    same_tape(a, b, "concat_rows");
    if (a.cols() != b.cols()) shape_fail("concat_rows", a.value(), b.value());
    Matrix out(a.rows() + b.rows(), a.cols());
    out << a.value(), b.value();
    const Eigen::Index ra = a.rows();
    return a.tape().record("concat_rows", std::move(out), {a, b},
                           [a, b, ra](Tape& tp, const Matrix& g) {
                               tp.accumulate(a, g.topRows(ra));
                               tp.accumulate(b, g.bottomRows(g.rows() - ra));
                           });
}

Var concat_cols(const Var& a, const Var& b) {
    same_tape(a, b, "concat_cols");
    if (a.rows() != b.rows()) shape_fail("concat_cols", a.value(), b.value());
    Matrix out(a.rows(), a.cols() + b.cols());
    out << a.value(), b.value();
    const Eigen::Index ca = a.cols();
    return a.tape().record("concat_cols", std::move(out), {a, b},
                           [a, b, ca](Tape& tp, const Matrix& g) {
                               tp.accumulate(a, g.leftCols(ca));
                               tp.accumulate(b, g.rightCols(g.cols() - ca));
                           });
}

Var slice_rows(const Var& a, Eigen::Index begin, Eigen::Index end) {
    if (begin < 0 || end > a.rows() || begin >= end)
        throw ShapeError("slice_rows: range [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") invalid for " + shape_str(a.value()));
    const Eigen::Index rows = a.rows();
    const Eigen::Index cols = a.cols();
    return a.tape().record("slice_rows", a.value().middleRows(begin, end - begin), {a},
                           [a, begin, rows, cols](Tape& tp, const Matrix& g) {
                               Matrix full = Matrix::Zero(rows, cols);
                               full.middleRows(begin, g.rows()) = g;
                               tp.accumulate(a, full);
                           });
}

namespace {

Matrix reshape_row_major(const Matrix& m, Eigen::Index rows, Eigen::Index cols) {
    using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    RowMajor rm = m;
    return Eigen::Map<const RowMajor>(rm.data(), rows, cols);
}

}  // namespace

Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols) {
    if (rows * cols != a.value().size())
        throw ShapeError("reshape: cannot view " + shape_str(a.value()) + " as (" +
                         std::to_string(rows) + "x" + std::to_string(cols) + ")");
    const Eigen::Index r0 = a.rows();
    const Eigen::Index c0 = a.cols();
    return a.tape().record("reshape", reshape_row_major(a.value(), rows, cols), {a},
                           [a, r0, c0](Tape& tp, const Matrix& g) {
                               tp.accumulate(a, reshape_row_major(g, r0, c0));
                           });
}

Var relu(const Var& a) {
    Matrix out = a.value().cwiseMax(0.0);
    return a.tape().record("relu", std::move(out), {a}, [a](Tape& tp, const Matrix& g) {
        tp.accumulate(a, (a.value().array() > 0.0).select(g, 0.0));
    });
}

Var leaky_relu(const Var& a, double slope) {
    Matrix out = (a.value().array() > 0.0).select(a.value(), slope * a.value());
    return a.tape().record("leaky_relu", std::move(out), {a},
                           [a, slope](Tape& tp, const Matrix& g) {
                               tp.accumulate(a, (a.value().array() > 0.0).select(g, slope * g));
                           });
}

Var sigmoid(const Var& a) {
    Matrix out = a.value().unaryExpr([](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
    });
    return a.tape().record("sigmoid", out, {a}, [a, out](Tape& tp, const Matrix& g) {
        tp.accumulate(a, g.cwiseProduct((out.array() * (1.0 - out.array())).matrix()));
    });
}

Var tanh(const Var& a) {
    Matrix out = a.value().array().tanh().matrix();
    return a.tape().record("tanh", out, {a}, [a, out](Tape& tp, const Matrix& g) {
        tp.accumulate(a, g.cwiseProduct((1.0 - out.array().square()).matrix()));
    });
}

Var identity(const Var& a) {
    return a.tape().record("identity", a.value(), {a},
                           [a](Tape& tp, const Matrix& g) { tp.accumulate(a, g); });
}

Var dropout(const Var& a, double p, Mode mode, std::uint64_t seed) {
    if (!(p >= 0.0 && p < 1.0))
        throw std::invalid_argument("dropout: p must lie in [0, 1), got " + std::to_string(p));
    if (mode == Mode::Eval || p == 0.0) return a;
    Rng rng(seed);
    const double keep_scale = 1.0 / (1.0 - p);
    Matrix mask(a.rows(), a.cols());
    for (Eigen::Index j = 0; j < mask.cols(); ++j)
        for (Eigen::Index i = 0; i < mask.rows(); ++i)
            mask(i, j) = rng.uniform() < p ? 0.0 : keep_scale;
    Matrix out = a.value().cwiseProduct(mask);
    return a.tape().record("dropout", std::move(out), {a},
                           [a, mask = std::move(mask)](Tape& tp, const Matrix& g) {
                               tp.accumulate(a, g.cwiseProduct(mask));
                           });
}

Var masked_softmax_rows(const Var& a, const Matrix& mask) {
    const Matrix& x = a.value();
    if (mask.rows() != x.rows() || mask.cols() != x.cols())
        shape_fail("masked_softmax_rows", x, mask);
    Matrix out = Matrix::Zero(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < x.cols(); ++j)
            if (mask(i, j) != 0.0) mx = std::max(mx, x(i, j));
        if (!std::isfinite(mx)) continue;
        double z = 0.0;
        for (Eigen::Index j = 0; j < x.cols(); ++j)
            if (mask(i, j) != 0.0) z += (out(i, j) = std::exp(x(i, j) - mx));
        out.row(i) /= z;
    }
    Matrix y = out;
    return a.tape().record("masked_softmax_rows", std::move(out), {a},
                           [a, y = std::move(y)](Tape& tp, const Matrix& g) {
                               // dx = y * (g - <g, y>) row by row; masked y are 0.
                               Eigen::VectorXd dots = g.cwiseProduct(y).rowwise().sum();
                               Matrix dx = y.cwiseProduct(g.colwise() - dots);
                               tp.accumulate(a, dx);
                           });
}

Var sum(const Var& a) {
    Matrix out(1, 1);
    out(0, 0) = a.value().sum();
    const Eigen::Index r = a.rows();
    const Eigen::Index c = a.cols();
    return a.tape().record("sum", std::move(out), {a}, [a, r, c](Tape& tp, const Matrix& g) {
        tp.accumulate(a, Matrix::Constant(r, c, g(0, 0)));
    });
}

Var mean(const Var& a) {
    const double n = static_cast<double>(a.value().size());
    Matrix out(1, 1);
    out(0, 0) = a.value().sum() / n;
    const Eigen::Index r = a.rows();
    const Eigen::Index c = a.cols();
    return a.tape().record("mean", std::move(out), {a}, [a, r, c, n](Tape& tp, const Matrix& g) {
        tp.accumulate(a, Matrix::Constant(r, c, g(0, 0) / n));
    });
}

// ---------------------------------------------------------------------------
// Gradient checking

Matrix numeric_gradient(const InputFn& f, const Matrix& point, double step) {
    Matrix grad(point.rows(), point.cols());
    Matrix x = point;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double orig = x(i);
        x(i) = orig + step;
        double fp;
        {
            Tape t;
            fp = f(t, t.constant(x)).value()(0, 0);
        }
        x(i) = orig - step;
        double fm;
        {
            Tape t;
            fm = f(t, t.constant(x)).value()(0, 0);
        }
        x(i) = orig;
        grad(i) = (fp - fm) / (2.0 * step);
    }
    return grad;
}

double relative_gradient_error(const Matrix& analytic, const Matrix& numeric) {
    if (analytic.rows() != numeric.rows() || analytic.cols() != numeric.cols())
        shape_fail("relative_gradient_error", analytic, numeric);
    double worst = 0.0;
    for (Eigen::Index i = 0; i < analytic.size(); ++i) {
        const double err = std::abs(analytic(i) - numeric(i)) / std::max(1.0, std::abs(numeric(i)));
        worst = std::max(worst, err);
    }
    return worst;
}

double grad_check(const InputFn& f, const Matrix& point, double step) {
    Tensor x(point, true);
    {
        Tape t;
        Var loss = f(t, t.leaf(x));
        t.backward(loss);
    }
    Matrix analytic = x.has_grad() ? x.grad : Matrix::Zero(point.rows(), point.cols());
    return relative_gradient_error(analytic, numeric_gradient(f, point, step));
}

double grad_check(const ParamFn& f, std::span<Tensor* const> params, double step) {
    for (Tensor* p : params) p->clear_grad();
    {
        Tape t;
        Var loss = f(t);
        t.backward(loss);
    }
    double worst = 0.0;
    for (Tensor* p : params) {
        Matrix analytic = p->has_grad() ? p->grad : Matrix::Zero(p->rows(), p->cols());
        Matrix numeric(p->rows(), p->cols());
        for (Eigen::Index i = 0; i < p->value.size(); ++i) {
            const double orig = p->value(i);
            p->value(i) = orig + step;
            double fp;
            {
                Tape t;
                fp = f(t).value()(0, 0);
            }
            p->value(i) = orig - step;
            double fm;
            {
                Tape t;
                fm = f(t).value()(0, 0);
            }
            p->value(i) = orig;
            numeric(i) = (fp - fm) / (2.0 * step);
        }
        worst = std::max(worst, relative_gradient_error(analytic, numeric));
        p->clear_grad();
    }
    return worst;
}

}  // namespace flowfuse::ad
