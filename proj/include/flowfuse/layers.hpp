#pragma once

// Neural building blocks over the autodiff engine. Parameter handles point
// into a ParamStore; forward functions bind them into the caller's tape.
//
// Conventions: node-feature matrices are M x f (one row per zone), and
// recurrent inputs/states are 1 x width row vectors.

#include <span>
#include <string>
#include <vector>

#include "flowfuse/autodiff.hpp"
#include "flowfuse/params.hpp"

namespace flowfuse::layers {

using ad::Tape;
using ad::Tensor;
using ad::Var;

enum class Activation { Relu, Linear };

/// Fully connected: weight in x out, bias 1 x out.
struct DenseParams {
    Tensor* weight = nullptr;
    Tensor* bias = nullptr;

    static DenseParams create(ParamStore& store, const std::string& prefix, Eigen::Index in,
                              Eigen::Index out, Rng& rng);
    Eigen::Index in() const { return weight->rows(); }
    Eigen::Index out() const { return weight->cols(); }
};

/// activation(x W + b), bias broadcast over rows.
Var fc_forward(const Var& x, const DenseParams& p, Activation act);

/// Graph convolution: weight f x f', bias 1 x f'.
using GcnParams = DenseParams;

/// relu(A_hat H W + b) with A_hat from normalize_adjacency.
Var gcn_forward(const Var& norm_adj, const Var& h, const GcnParams& p);

/// Chebyshev filter of order K: one f x f' weight per polynomial term.
struct ChebParams {
    std::vector<Tensor*> weights;
    Tensor* bias = nullptr;

    static ChebParams create(ParamStore& store, const std::string& prefix, Eigen::Index in,
                             Eigen::Index out, int order, Rng& rng);
    int order() const { return static_cast<int>(weights.size()); }
};

/// L_tilde = L - I with L = I - A_hat (largest eigenvalue taken as 2).
Matrix scaled_laplacian(const Matrix& norm_adj);

/// relu(sum_k T_k(L_tilde) H W_k + b) with the Chebyshev recurrence
/// T_0 = I, T_1 = L_tilde, T_k = 2 L_tilde T_{k-1} - T_{k-2}, applied to H.
Var cheb_forward(const Var& laplacian, const Var& h, const ChebParams& p);

/// Single-head graph attention: weight f x f', attention halves f' x 1.
struct GatParams {
    Tensor* weight = nullptr;
    Tensor* attn_src = nullptr;
    Tensor* attn_dst = nullptr;

    static GatParams create(ParamStore& store, const std::string& prefix, Eigen::Index in,
                            Eigen::Index out, Rng& rng);
};

inline constexpr double kGatSlope = 0.2;

/// 1 where A(i,j) + A(j,i) > 0 or i == j, else 0.
Matrix attention_mask(const Matrix& adjacency);

/// e_ij = leaky_relu(a_src . Wh_i + a_dst . Wh_j), softmax over the mask
/// row, output relu(sum_j alpha_ij W h_j).
Var gat_forward(const Matrix& mask, const Var& h, const GatParams& p);

enum class CellKind { Rnn, Gru, Lstm };

std::string_view to_string(CellKind k);

struct RecurrentState {
    Var h;
    Var c;  // LSTM only
};

/// One recurrent layer. Gate g uses input weight W_g (in x hidden), state
/// weight U_g (hidden x hidden) and bias b_g (1 x hidden).
class RecurrentCell {
public:
    static RecurrentCell create(ParamStore& store, const std::string& prefix, CellKind kind,
                                Eigen::Index input_width, Eigen::Index hidden_width, Rng& rng);

    CellKind kind() const { return kind_; }
    Eigen::Index input_width() const { return input_width_; }
    Eigen::Index hidden_width() const { return hidden_width_; }

    RecurrentState initial_state(Tape& tape) const;
    /// Throws ShapeError when x or the state has the wrong width.
    RecurrentState step(const Var& x, const RecurrentState& state) const;
    /// Final hidden state after consuming `sequence` from a zero state.
    Var run(std::span<const Var> sequence) const;

    /// Gate order: RNN {h}; GRU {z, r, n}; LSTM {i, f, o, c}.
    struct Gate {
        Tensor* input_weight = nullptr;
        Tensor* state_weight = nullptr;
        Tensor* bias = nullptr;
    };
    const std::vector<Gate>& gates() const { return gates_; }

private:
    Var pre_activation(const Gate& g, const Var& x, const Var& h) const;

    CellKind kind_ = CellKind::Lstm;
    Eigen::Index input_width_ = 0;
    Eigen::Index hidden_width_ = 0;
    std::vector<Gate> gates_;
};

}  // namespace flowfuse::layers
