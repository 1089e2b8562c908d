#include "safemon/nn/layers.hpp"

#include <cmath>

namespace safemon::nn {

Matrix glorot(Eigen::Index fan_in, Eigen::Index fan_out, std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-limit, limit);
    Matrix m(fan_in, fan_out);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    return m;
}

Dense Dense::create(ParamSet& ps, const std::string& name, Eigen::Index in, Eigen::Index out,
                    std::mt19937_64& rng) {
    Dense d;
    d.w = ps.add(name + ".w", glorot(in, out, rng));
    d.b = ps.add(name + ".b", Matrix::Zero(1, out));
    return d;
}

Var Dense::operator()(Tape& t, const ParamSet& ps, Var x) const {
    return add_row(t, matmul(t, x, t.param(ps, w)), t.param(ps, b));
}

CausalConv CausalConv::create(ParamSet& ps, const std::string& name, Eigen::Index c_in,
                              Eigen::Index c_out, int kernel, int dilation, std::mt19937_64& rng) {
    CausalConv c;
    c.c_in = c_in;
    c.kernel = kernel;
    c.dilation = dilation;
    c.w = ps.add(name + ".w", glorot(c_in * kernel, c_out, rng));
    c.b = ps.add(name + ".b", Matrix::Zero(1, c_out));
    return c;
}

Var CausalConv::operator()(Tape& t, const ParamSet& ps, Var x, Eigen::Index steps_in,
                           Eigen::Index steps_out) const {
    return conv1d(t, x, t.param(ps, w), t.param(ps, b), c_in, steps_in, steps_out, kernel, dilation);
}

RecurrentCell RecurrentCell::create(ParamSet& ps, const std::string& name, CellKind kind,
                                    Eigen::Index in, Eigen::Index hidden, std::mt19937_64& rng) {
    RecurrentCell c;
    c.kind = kind;
    c.hidden = hidden;
    const Eigen::Index gates = kind == CellKind::Gru ? 3 : 4;
    c.wx = ps.add(name + ".wx", glorot(in, gates * hidden, rng));
    c.wh = ps.add(name + ".wh", glorot(hidden, gates * hidden, rng));
    Matrix bx = Matrix::Zero(1, gates * hidden);
    if (kind == CellKind::Lstm) bx.middleCols(hidden, hidden).setOnes(); // forget-gate bias
    c.bx = ps.add(name + ".bx", std::move(bx));
    c.bh = ps.add(name + ".bh", Matrix::Zero(1, gates * hidden));
    return c;
}

RecurrentState RecurrentCell::zero_state(Tape& t, Eigen::Index batch) const {
    RecurrentState s;
    s.h = t.constant(Matrix::Zero(batch, hidden));
    if (kind == CellKind::Lstm) s.c = t.constant(Matrix::Zero(batch, hidden));
    return s;
}

RecurrentState RecurrentCell::step(Tape& t, const ParamSet& ps, Var x,
                                   const RecurrentState& s) const {
    const Var gx = add_row(t, matmul(t, x, t.param(ps, wx)), t.param(ps, bx));
    const Var gh = add_row(t, matmul(t, s.h, t.param(ps, wh)), t.param(ps, bh));
    const Eigen::Index H = hidden;
    if (kind == CellKind::Gru) {
        const Var r = sigmoid(t, add(t, slice_cols(t, gx, 0, H), slice_cols(t, gh, 0, H)));
        const Var z = sigmoid(t, add(t, slice_cols(t, gx, H, H), slice_cols(t, gh, H, H)));
        const Var n = tanh(t, add(t, slice_cols(t, gx, 2 * H, H),
                                  mul(t, r, slice_cols(t, gh, 2 * H, H))));
        // h' = (1 - z) * n + z * h = n + z * (h - n)
        return {add(t, n, mul(t, z, sub(t, s.h, n))), {}};
    }
    const Var pre = add(t, gx, gh);
    const Var i = sigmoid(t, slice_cols(t, pre, 0, H));
    const Var f = sigmoid(t, slice_cols(t, pre, H, H));
    const Var g = tanh(t, slice_cols(t, pre, 2 * H, H));
    const Var o = sigmoid(t, slice_cols(t, pre, 3 * H, H));
    const Var c = add(t, mul(t, f, s.c), mul(t, i, g));
    return {mul(t, o, tanh(t, c)), c};
}

} // namespace safemon::nn
