#include "flowfuse/layers.hpp"

#include "flowfuse/errors.hpp"

namespace flowfuse::layers {

DenseParams DenseParams::create(ParamStore& store, const std::string& prefix, Eigen::Index in,
                                Eigen::Index out, Rng& rng) {
    DenseParams p;
    p.weight = &store.add(prefix + ".weight", glorot_uniform(rng, in, out));
    p.bias = &store.add(prefix + ".bias", Matrix::Zero(1, out));
    return p;
}

Var fc_forward(const Var& x, const DenseParams& p, Activation act) {
    Tape& t = x.tape();
    Var y = add(matmul(x, t.leaf(*p.weight)), t.leaf(*p.bias));
    return act == Activation::Relu ? relu(y) : y;
}

Var gcn_forward(const Var& norm_adj, const Var& h, const GcnParams& p) {
    Tape& t = h.tape();
    Var hw = matmul(h, t.leaf(*p.weight));
    return relu(add(matmul(norm_adj, hw), t.leaf(*p.bias)));
}

// ---------------------------------------------------------------------------

ChebParams ChebParams::create(ParamStore& store, const std::string& prefix, Eigen::Index in,
                              Eigen::Index out, int order, Rng& rng) {
    if (order < 1) throw ConfigError("Chebyshev order must be >= 1");
    ChebParams p;
    for (int k = 0; k < order; ++k)
        p.weights.push_back(&store.add(prefix + ".weight" + std::to_string(k), glorot_uniform(rng, in, out)));
    p.bias = &store.add(prefix + ".bias", Matrix::Zero(1, out));
    return p;
}

Matrix scaled_laplacian(const Matrix& norm_adj) {
    const Matrix identity = Matrix::Identity(norm_adj.rows(), norm_adj.cols());
    const Matrix laplacian = identity - norm_adj;
    return laplacian - identity;
}

Var cheb_forward(const Var& laplacian, const Var& h, const ChebParams& p) {
    Tape& t = h.tape();
    Var prev = h;  // T_0 H
    Var acc = matmul(prev, t.leaf(*p.weights[0]));
    if (p.order() > 1) {
        Var cur = matmul(laplacian, h);  // T_1 H
        acc = add(acc, matmul(cur, t.leaf(*p.weights[1])));
        for (int k = 2; k < p.order(); ++k) {
            Var next = sub(scale(matmul(laplacian, cur), 2.0), prev);
            acc = add(acc, matmul(next, t.leaf(*p.weights[static_cast<std::size_t>(k)])));
            prev = cur;
            cur = next;
        }
    }
    return relu(add(acc, t.leaf(*p.bias)));
}

// ---------------------------------------------------------------------------

GatParams GatParams::create(ParamStore& store, const std::string& prefix, Eigen::Index in,
                            Eigen::Index out, Rng& rng) {
    GatParams p;
    p.weight = &store.add(prefix + ".weight", glorot_uniform(rng, in, out));
    p.attn_src = &store.add(prefix + ".attn_src", glorot_uniform(rng, out, 1));
    p.attn_dst = &store.add(prefix + ".attn_dst", glorot_uniform(rng, out, 1));
    return p;
}

Matrix attention_mask(const Matrix& adjacency) {
    Matrix sym = adjacency + adjacency.transpose();
    Matrix mask = (sym.array() > 0.0).cast<double>().matrix();
    mask.diagonal().setOnes();
    return mask;
}

Var gat_forward(const Matrix& mask, const Var& h, const GatParams& p) {
    Tape& t = h.tape();
    const Eigen::Index m = h.rows();
    if (mask.rows() != m || mask.cols() != m)
        throw ShapeError("gat_forward: mask (" + std::to_string(mask.rows()) + "x" +
                         std::to_string(mask.cols()) + ") does not match " + std::to_string(m) +
                         " nodes");
    Var z = matmul(h, t.leaf(*p.weight));          // M x f'
    Var src = matmul(z, t.leaf(*p.attn_src));      // M x 1, varies by row i
    Var dst = matmul(z, t.leaf(*p.attn_dst));      // M x 1, varies by column j
    Var scores = add(add(t.constant(Matrix::Zero(m, m)), src), transpose(dst));
    Var alpha = masked_softmax_rows(leaky_relu(scores, kGatSlope), mask);
    return relu(matmul(alpha, z));
}

// ---------------------------------------------------------------------------

std::string_view to_string(CellKind k) {
    switch (k) {
        case CellKind::Rnn: return "rnn";
        case CellKind::Gru: return "gru";
        case CellKind::Lstm: return "lstm";
    }
    return "?";
}

RecurrentCell RecurrentCell::create(ParamStore& store, const std::string& prefix, CellKind kind,
                                    Eigen::Index input_width, Eigen::Index hidden_width, Rng& rng) {
    RecurrentCell cell;
    cell.kind_ = kind;
    cell.input_width_ = input_width;
    cell.hidden_width_ = hidden_width;
    std::vector<std::string> names;
    switch (kind) {
        case CellKind::Rnn: names = {"h"}; break;
        case CellKind::Gru: names = {"z", "r", "n"}; break;
        case CellKind::Lstm: names = {"i", "f", "o", "c"}; break;
    }
    for (const auto& g : names) {
        Gate gate;
        gate.input_weight = &store.add(prefix + ".W_" + g, glorot_uniform(rng, input_width, hidden_width));
        gate.state_weight = &store.add(prefix + ".U_" + g, glorot_uniform(rng, hidden_width, hidden_width));
        gate.bias = &store.add(prefix + ".b_" + g, Matrix::Zero(1, hidden_width));
        cell.gates_.push_back(gate);
    }
    return cell;
}

RecurrentState RecurrentCell::initial_state(Tape& tape) const {
    RecurrentState s;
    s.h = tape.constant(Matrix::Zero(1, hidden_width_));
    if (kind_ == CellKind::Lstm) s.c = tape.constant(Matrix::Zero(1, hidden_width_));
    return s;
}

Var RecurrentCell::pre_activation(const Gate& g, const Var& x, const Var& h) const {
    Tape& t = x.tape();
    return add(add(matmul(x, t.leaf(*g.input_weight)), matmul(h, t.leaf(*g.state_weight))),
               t.leaf(*g.bias));
}

RecurrentState RecurrentCell::step(const Var& x, const RecurrentState& state) const {
    if (x.rows() != 1 || x.cols() != input_width_)
        throw ShapeError(std::string(to_string(kind_)) + " cell: input (" + std::to_string(x.rows()) +
                         "x" + std::to_string(x.cols()) + ") expected (1x" +
                         std::to_string(input_width_) + ")");
    if (state.h.rows() != 1 || state.h.cols() != hidden_width_ ||
        (kind_ == CellKind::Lstm && (state.c.rows() != 1 || state.c.cols() != hidden_width_)))
        throw ShapeError(std::string(to_string(kind_)) + " cell: state width (" +
                         std::to_string(state.h.cols()) + ") expected " + std::to_string(hidden_width_));
    Tape& t = x.tape();
    const Var& h = state.h;
    switch (kind_) {
        case CellKind::Rnn:
            return {tanh(pre_activation(gates_[0], x, h)), {}};
        case CellKind::Gru: {
            Var z = sigmoid(pre_activation(gates_[0], x, h));
            Var r = sigmoid(pre_activation(gates_[1], x, h));
            const Gate& n = gates_[2];
            Var cand = tanh(add(add(matmul(x, t.leaf(*n.input_weight)),
                                    matmul(hadamard(r, h), t.leaf(*n.state_weight))),
                                t.leaf(*n.bias)));
            Var one_minus_z = sub(t.constant(Matrix::Ones(1, hidden_width_)), z);
            return {add(hadamard(one_minus_z, cand), hadamard(z, h)), {}};
        }
        case CellKind::Lstm: {
            Var i = sigmoid(pre_activation(gates_[0], x, h));
            Var f = sigmoid(pre_activation(gates_[1], x, h));
            Var o = sigmoid(pre_activation(gates_[2], x, h));
            Var g = tanh(pre_activation(gates_[3], x, h));
            Var c = add(hadamard(f, state.c), hadamard(i, g));
            return {hadamard(o, tanh(c)), c};
        }
    }
    throw std::logic_error("unreachable");
}

Var RecurrentCell::run(std::span<const Var> sequence) const {
    if (sequence.empty()) throw ShapeError("recurrent cell: empty input sequence");
    RecurrentState s = initial_state(sequence.front().tape());
    for (const auto& x : sequence) s = step(x, s);
    return s.h;
}

}  // namespace flowfuse::layers
