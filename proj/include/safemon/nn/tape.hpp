#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "safemon/core.hpp"

namespace safemon::nn {

struct Param {
    std::string name;
    Matrix value;
};

/// Named trainable tensors. Order is stable and defines the checkpoint layout.
class ParamSet {
public:
    std::size_t add(std::string name, Matrix init);

    std::size_t size() const { return params_.size(); }
    const Param& operator[](std::size_t i) const { return params_[i]; }
    Param& operator[](std::size_t i) { return params_[i]; }
    std::vector<Param>& all() { return params_; }
    const std::vector<Param>& all() const { return params_; }

    /// Total number of scalars.
    std::size_t scalar_count() const;
    std::vector<Matrix> zeros_like() const;

    friend bool operator==(const ParamSet&, const ParamSet&);

private:
    std::vector<Param> params_;
};

using Grads = std::vector<Matrix>;

struct Var {
    int id = -1;
};

/// Reverse-mode tape. Nodes are values produced by the ops below; backward()
/// walks them in reverse creation order. With recording off the tape only
/// evaluates (no closures, no gradient buffers).
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, int self)>;

    explicit Tape(bool record = true) : record_(record) {}

    bool recording() const { return record_; }

    Var constant(Matrix m);
    Var param(const ParamSet& params, std::size_t index);

    const Matrix& value(Var v) const;
    /// Gradient buffer of a node, allocated as zeros on first use.
    Matrix& grad(int id);
    const Matrix& grad_or_empty(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }

    Var push(Matrix value, BackwardFn fn);

    std::size_t size() const { return nodes_.size(); }
    /// Bytes held by node values (parameter leaves excluded).
    std::size_t value_bytes() const;

    /// Seeds d(loss)/d(loss) = 1 for a 1x1 node and accumulates parameter
    /// gradients into `grads` (one entry per ParamSet slot, resized as needed).
    /// Throws if any parameter gradient is non-finite.
    void backward(Var loss, Grads& grads);

private:
    struct Node {
        Matrix value;
        const Matrix* ref = nullptr; // parameter leaves reference the ParamSet
        int param_index = -1;
        Matrix grad;
        BackwardFn fn;
    };
    bool record_;
    std::vector<Node> nodes_;
};

/// Training/evaluation switch plus the RNG that draws dropout masks.
struct ForwardMode {
    bool training = false;
    std::mt19937_64* rng = nullptr;
};

// Elementwise and linear ops. Shapes follow Eigen semantics; `add_row`
// broadcasts a 1 x n row over every row of its first argument.
Var matmul(Tape& t, Var a, Var b);
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var add_row(Tape& t, Var a, Var row);
Var scale(Tape& t, Var a, double s);
Var tanh(Tape& t, Var a);
Var sigmoid(Tape& t, Var a);
Var softplus(Tape& t, Var a);
Var concat_cols(Tape& t, std::span<const Var> parts);
Var slice_cols(Tape& t, Var a, Eigen::Index start, Eigen::Index n);
/// Stacks `times` copies of a 1 x n row.
Var repeat_rows(Tape& t, Var row, Eigen::Index times);
Var mean_all(Tape& t, Var a);

/// Inverted dropout; identity when not training or rate == 0.
Var dropout(Tape& t, Var a, double rate, const ForwardMode& mode);

/// Causal dilated 1-D convolution over a time-major sequence.
///   x: B x (steps_in * c_in), w: (kernel * c_in) x c_out with tap j in rows
///   [j*c_in, (j+1)*c_in), bias: 1 x c_out.
/// Output position p (0..steps_out-1) is aligned with input step
/// p + steps_in - steps_out and reads taps at step - j*dilation; taps before
/// the first input step are zero.
Var conv1d(Tape& t, Var x, Var w, Var bias, Eigen::Index c_in, Eigen::Index steps_in,
           Eigen::Index steps_out, int kernel, int dilation);

/// Elementwise gated recurrence over pre-activations x: B x (steps * 2S):
///   z = sigmoid(x[:, :S]), c = tanh(x[:, S:]), h_t = h_{t-1} + z * (c - h_{t-1}), h_{-1} = 0.
/// Returns B x (steps * S).
Var gated_scan(Tape& t, Var x, Eigen::Index state);

/// Scaled dot-product attention of q (B x S) over states (B x (steps * S)),
/// split into `heads` equal heads. States serve as both keys and values.
Var attention(Tape& t, Var q, Var states, int heads);

/// Mean pinball loss of predictions (B x (h*|Q|), quantile index fastest)
/// against targets (B x h). Ties take the midpoint subgradient.
Var pinball_mean(Tape& t, Var pred, const Matrix& target, std::span<const double> qs);

/// Mean Gaussian negative log-likelihood; sigma is floored at 1e-6.
Var gaussian_nll_mean(Tape& t, Var mu, Var sigma, const Matrix& target);

} // namespace safemon::nn
