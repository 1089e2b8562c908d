#include "safemon/nn/tape.hpp"

#include <cmath>

#include <fmt/format.h>

namespace safemon::nn {

std::size_t ParamSet::add(std::string name, Matrix init) {
    params_.push_back({std::move(name), std::move(init)});
    return params_.size() - 1;
}

std::size_t ParamSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
}

std::vector<Matrix> ParamSet::zeros_like() const {
    std::vector<Matrix> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
    return out;
}

bool operator==(const ParamSet& a, const ParamSet& b) {
    if (a.params_.size() != b.params_.size()) return false;
    for (std::size_t i = 0; i < a.params_.size(); ++i) {
        const auto& x = a.params_[i];
        const auto& y = b.params_[i];
        if (x.name != y.name || x.value.rows() != y.value.rows() ||
            x.value.cols() != y.value.cols())
            return false;
        for (Eigen::Index j = 0; j < x.value.size(); ++j)
            if (x.value.data()[j] != y.value.data()[j]) return false;
    }
    return true;
}

Var Tape::constant(Matrix m) {
    Node n;
    n.value = std::move(m);
    nodes_.push_back(std::move(n));
    return {static_cast<int>(nodes_.size()) - 1};
}

Var Tape::param(const ParamSet& params, std::size_t index) {
    Node n;
    n.ref = &params[index].value;
    n.param_index = static_cast<int>(index);
    nodes_.push_back(std::move(n));
    return {static_cast<int>(nodes_.size()) - 1};
}

const Matrix& Tape::value(Var v) const {
    const auto& n = nodes_[static_cast<std::size_t>(v.id)];
    return n.ref ? *n.ref : n.value;
}

Matrix& Tape::grad(int id) {
    auto& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() == 0) {
        const Matrix& v = n.ref ? *n.ref : n.value;
        n.grad = Matrix::Zero(v.rows(), v.cols());
    }
    return n.grad;
}

Var Tape::push(Matrix value, BackwardFn fn) {
    Node n;
    n.value = std::move(value);
    if (record_) n.fn = std::move(fn);
    nodes_.push_back(std::move(n));
    return {static_cast<int>(nodes_.size()) - 1};
}

std::size_t Tape::value_bytes() const {
    std::size_t n = 0;
    for (const auto& node : nodes_) n += static_cast<std::size_t>(node.value.size()) * sizeof(double);
    return n;
}

void Tape::backward(Var loss, Grads& grads) {
    require(record_, "backward on a non-recording tape");
    const Matrix& lv = value(loss);
    require(lv.rows() == 1 && lv.cols() == 1, "backward needs a scalar loss");
    grad(loss.id)(0, 0) += 1.0;
    for (int i = loss.id; i >= 0; --i) {
        auto& n = nodes_[static_cast<std::size_t>(i)];
        if (n.grad.size() == 0) continue;
        if (n.fn) n.fn(*this, i);
        if (n.param_index >= 0) {
            const auto pi = static_cast<std::size_t>(n.param_index);
            if (grads.size() <= pi) grads.resize(pi + 1);
            if (grads[pi].size() == 0)
                grads[pi] = n.grad;
            else
                grads[pi] += n.grad;
        }
    }
    for (std::size_t i = 0; i < grads.size(); ++i)
        if (grads[i].size() && !grads[i].allFinite())
            throw Error(fmt::format("non-finite gradient for parameter #{}", i));
}

namespace {
const Matrix& G(Tape& t, int self) { return t.grad_or_empty(self); }
} // namespace

Var matmul(Tape& t, Var a, Var b) {
    Matrix out = t.value(a) * t.value(b);
    return t.push(std::move(out), [a, b](Tape& t, int self) {
        const Matrix& g = G(t, self);
        t.grad(a.id).noalias() += g * t.value(b).transpose();
        t.grad(b.id).noalias() += t.value(a).transpose() * g;
    });
}

Var add(Tape& t, Var a, Var b) {
    Matrix out = t.value(a) + t.value(b);
    return t.push(std::move(out), [a, b](Tape& t, int self) {
        t.grad(a.id) += G(t, self);
        t.grad(b.id) += G(t, self);
    });
}

Var sub(Tape& t, Var a, Var b) {
    Matrix out = t.value(a) - t.value(b);
    return t.push(std::move(out), [a, b](Tape& t, int self) {
        t.grad(a.id) += G(t, self);
        t.grad(b.id) -= G(t, self);
    });
}

Var mul(Tape& t, Var a, Var b) {
    Matrix out = t.value(a).cwiseProduct(t.value(b));
    return t.push(std::move(out), [a, b](Tape& t, int self) {
        const Matrix& g = G(t, self);
        t.grad(a.id) += g.cwiseProduct(t.value(b));
        t.grad(b.id) += g.cwiseProduct(t.value(a));
    });
}

Var add_row(Tape& t, Var a, Var row) {
    const Matrix& r = t.value(row);
    require(r.rows() == 1 && r.cols() == t.value(a).cols(), "add_row shape mismatch");
    Matrix out = t.value(a).rowwise() + r.row(0);
    return t.push(std::move(out), [a, row](Tape& t, int self) {
        const Matrix& g = G(t, self);
        t.grad(a.id) += g;
        t.grad(row.id) += g.colwise().sum();
    });
}

Var scale(Tape& t, Var a, double s) {
    Matrix out = t.value(a) * s;
    return t.push(std::move(out), [a, s](Tape& t, int self) { t.grad(a.id) += G(t, self) * s; });
}

Var tanh(Tape& t, Var a) {
    Matrix out = t.value(a).array().tanh().matrix();
    return t.push(std::move(out), [a](Tape& t, int self) {
        const Matrix& y = t.value({self});
        t.grad(a.id).array() += G(t, self).array() * (1.0 - y.array().square());
    });
}

Var sigmoid(Tape& t, Var a) {
    Matrix out = (1.0 / (1.0 + (-t.value(a).array()).exp())).matrix();
    return t.push(std::move(out), [a](Tape& t, int self) {
        const Matrix& y = t.value({self});
        t.grad(a.id).array() += G(t, self).array() * y.array() * (1.0 - y.array());
    });
}

Var softplus(Tape& t, Var a) {
    const Matrix& x = t.value(a);
    // log(1 + e^x) = max(x, 0) + log1p(e^-|x|)
    Matrix out = x.unaryExpr([](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); });
    return t.push(std::move(out), [a](Tape& t, int self) {
        const Matrix& x = t.value(a);
        t.grad(a.id).array() += G(t, self).array() / (1.0 + (-x.array()).exp());
    });
}

Var concat_cols(Tape& t, std::span<const Var> parts) {
    require(!parts.empty(), "concat_cols needs at least one input");
    const Eigen::Index rows = t.value(parts[0]).rows();
    Eigen::Index cols = 0;
    for (Var p : parts) {
        require(t.value(p).rows() == rows, "concat_cols row mismatch");
        cols += t.value(p).cols();
    }
    Matrix out(rows, cols);
    Eigen::Index at = 0;
    for (Var p : parts) {
        const Matrix& v = t.value(p);
        out.middleCols(at, v.cols()) = v;
        at += v.cols();
    }
    std::vector<Var> ids(parts.begin(), parts.end());
    return t.push(std::move(out), [ids = std::move(ids)](Tape& t, int self) {
        Eigen::Index at = 0;
        for (Var p : ids) {
            const Eigen::Index c = t.value(p).cols();
            t.grad(p.id) += G(t, self).middleCols(at, c);
            at += c;
        }
    });
}

Var slice_cols(Tape& t, Var a, Eigen::Index start, Eigen::Index n) {
    require(start >= 0 && start + n <= t.value(a).cols(), "slice_cols out of range");
    Matrix out = t.value(a).middleCols(start, n);
    return t.push(std::move(out), [a, start, n](Tape& t, int self) {
        t.grad(a.id).middleCols(start, n) += G(t, self);
    });
}

Var repeat_rows(Tape& t, Var row, Eigen::Index times) {
    const Matrix& r = t.value(row);
    require(r.rows() == 1, "repeat_rows needs a single row");
    Matrix out = r.replicate(times, 1);
    return t.push(std::move(out), [row](Tape& t, int self) {
        t.grad(row.id) += G(t, self).colwise().sum();
    });
}

Var mean_all(Tape& t, Var a) {
    const Matrix& v = t.value(a);
    const double n = static_cast<double>(v.size());
    Matrix out(1, 1);
    out(0, 0) = v.sum() / n;
    return t.push(std::move(out), [a, n](Tape& t, int self) {
        t.grad(a.id).array() += G(t, self)(0, 0) / n;
    });
}

Var dropout(Tape& t, Var a, double rate, const ForwardMode& mode) {
    if (!mode.training || rate <= 0.0) return a;
    require(rate < 1.0, "dropout rate must be < 1");
    require(mode.rng != nullptr, "training-mode dropout needs an RNG");
    const Matrix& x = t.value(a);
    std::bernoulli_distribution keep(1.0 - rate);
    Matrix mask(x.rows(), x.cols());
    const double inv = 1.0 / (1.0 - rate);
    for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(*mode.rng) ? inv : 0.0;
    Matrix out = x.cwiseProduct(mask);
    return t.push(std::move(out), [a, mask = std::move(mask)](Tape& t, int self) {
        t.grad(a.id) += G(t, self).cwiseProduct(mask);
    });
}

Var conv1d(Tape& t, Var x, Var w, Var bias, Eigen::Index c_in, Eigen::Index steps_in,
           Eigen::Index steps_out, int kernel, int dilation) {
    const Matrix& X = t.value(x);
    const Matrix& W = t.value(w);
    const Matrix& b = t.value(bias);
    require(X.cols() == steps_in * c_in, "conv1d input width mismatch");
    require(W.rows() == kernel * c_in, "conv1d weight rows mismatch");
    require(b.rows() == 1 && b.cols() == W.cols(), "conv1d bias shape mismatch");
    require(steps_out >= 1, "conv1d needs at least one output step");
    const Eigen::Index c_out = W.cols();
    const Eigen::Index offset = steps_in - steps_out;
    Matrix out(X.rows(), steps_out * c_out);
    for (Eigen::Index p = 0; p < steps_out; ++p) {
        auto block = out.middleCols(p * c_out, c_out);
        block.rowwise() = b.row(0);
        for (int j = 0; j < kernel; ++j) {
            const Eigen::Index src = p + offset - static_cast<Eigen::Index>(j) * dilation;
            if (src < 0 || src >= steps_in) continue;
            block.noalias() += X.middleCols(src * c_in, c_in) * W.middleRows(j * c_in, c_in);
        }
    }
    return t.push(std::move(out), [=](Tape& t, int self) {
        const Matrix& g = G(t, self);
        const Matrix& X = t.value(x);
        const Matrix& W = t.value(w);
        Matrix& gx = t.grad(x.id);
        Matrix& gw = t.grad(w.id);
        Matrix& gb = t.grad(bias.id);
        for (Eigen::Index p = 0; p < steps_out; ++p) {
            const auto gp = g.middleCols(p * c_out, c_out);
            gb += gp.colwise().sum();
            for (int j = 0; j < kernel; ++j) {
                const Eigen::Index src = p + offset - static_cast<Eigen::Index>(j) * dilation;
                if (src < 0 || src >= steps_in) continue;
                gx.middleCols(src * c_in, c_in).noalias() +=
                    gp * W.middleRows(j * c_in, c_in).transpose();
                gw.middleRows(j * c_in, c_in).noalias() +=
                    X.middleCols(src * c_in, c_in).transpose() * gp;
            }
        }
    });
}

Var gated_scan(Tape& t, Var x, Eigen::Index state) {
    const Matrix& X = t.value(x);
    require(state >= 1 && X.cols() % (2 * state) == 0, "gated_scan width mismatch");
    const Eigen::Index steps = X.cols() / (2 * state);
    const Eigen::Index B = X.rows();
    Matrix z(B, steps * state);
    Matrix c(B, steps * state);
    Matrix h(B, steps * state);
    for (Eigen::Index s = 0; s < steps; ++s) {
        z.middleCols(s * state, state) =
            (1.0 / (1.0 + (-X.middleCols(2 * s * state, state).array()).exp())).matrix();
        // tanh(x) = 2 sigmoid(2x) - 1 keeps this on the vectorized exp path.
        c.middleCols(s * state, state) =
            (2.0 / (1.0 + (-2.0 * X.middleCols(2 * s * state + state, state).array()).exp()) - 1.0).matrix();
        if (s == 0)
            h.middleCols(0, state) =
                z.middleCols(0, state).cwiseProduct(c.middleCols(0, state));
        else
            h.middleCols(s * state, state) =
                (h.middleCols((s - 1) * state, state).array() +
                 z.middleCols(s * state, state).array() *
                     (c.middleCols(s * state, state).array() -
                      h.middleCols((s - 1) * state, state).array()))
                    .matrix();
    }
    Matrix out = h;
    if (!t.recording()) return t.push(std::move(out), {});
    return t.push(std::move(out), [x, state, steps, B, z = std::move(z), c = std::move(c),
                                   h = std::move(h)](Tape& t, int self) {
        const Matrix& g = G(t, self);
        Matrix& gx = t.grad(x.id);
        Eigen::ArrayXXd carry = Eigen::ArrayXXd::Zero(B, state);
        for (Eigen::Index s = steps - 1; s >= 0; --s) {
            const Eigen::ArrayXXd dh = g.middleCols(s * state, state).array() + carry;
            const auto zs = z.middleCols(s * state, state).array();
            const auto cs = c.middleCols(s * state, state).array();
            Eigen::ArrayXXd prev = s > 0 ? Eigen::ArrayXXd(h.middleCols((s - 1) * state, state).array())
                                         : Eigen::ArrayXXd::Zero(B, state);
            const Eigen::ArrayXXd dz = dh * (cs - prev);
            const Eigen::ArrayXXd dc = dh * zs;
            carry = dh * (1.0 - zs);
            gx.middleCols(2 * s * state, state).array() += dz * zs * (1.0 - zs);
            gx.middleCols(2 * s * state + state, state).array() += dc * (1.0 - cs.square());
        }
    });
}

Var attention(Tape& t, Var q, Var states, int heads) {
    const Matrix& Q = t.value(q);
    const Matrix& H = t.value(states);
    const Eigen::Index S = Q.cols();
    const Eigen::Index B = Q.rows();
    require(heads >= 1 && S % heads == 0, "attention heads must divide the state size");
    require(H.rows() == B && H.cols() % S == 0 && H.cols() >= S, "attention states shape mismatch");
    const Eigen::Index steps = H.cols() / S;
    const Eigen::Index d = S / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d));

    Matrix out = Matrix::Zero(B, S);
    // weights: per head a B x steps block
    Matrix weights(B, steps * heads);
    for (int j = 0; j < heads; ++j) {
        const auto qj = Q.middleCols(j * d, d).array();
        Eigen::ArrayXXd scores(B, steps);
        for (Eigen::Index s = 0; s < steps; ++s)
            scores.col(s) = (qj * H.middleCols(s * S + j * d, d).array()).rowwise().sum() * inv_sqrt;
        const Eigen::ArrayXd mx = scores.rowwise().maxCoeff();
        scores.colwise() -= mx;
        scores = scores.exp();
        const Eigen::ArrayXd norm = scores.rowwise().sum();
        scores.colwise() /= norm;
        weights.middleCols(j * steps, steps) = scores.matrix();
        for (Eigen::Index s = 0; s < steps; ++s)
            out.middleCols(j * d, d).array() +=
                H.middleCols(s * S + j * d, d).array().colwise() * scores.col(s);
    }
    if (!t.recording()) return t.push(std::move(out), {});
    return t.push(std::move(out), [q, states, heads, S, B, steps, d, inv_sqrt,
                                   weights = std::move(weights)](Tape& t, int self) {
        const Matrix& g = G(t, self);
        const Matrix& Q = t.value(q);
        const Matrix& H = t.value(states);
        Matrix& gq = t.grad(q.id);
        Matrix& gh = t.grad(states.id);
        for (int j = 0; j < heads; ++j) {
            const auto gj = g.middleCols(j * d, d).array();
            const auto a = weights.middleCols(j * steps, steps).array();
            Eigen::ArrayXXd da(B, steps);
            for (Eigen::Index s = 0; s < steps; ++s)
                da.col(s) = (gj * H.middleCols(s * S + j * d, d).array()).rowwise().sum();
            const Eigen::ArrayXd weighted = (a * da).rowwise().sum();
            Eigen::ArrayXXd ds = a * (da.colwise() - weighted);
            ds *= inv_sqrt;
            for (Eigen::Index s = 0; s < steps; ++s) {
                gh.middleCols(s * S + j * d, d).array() += gj.colwise() * a.col(s);
                gh.middleCols(s * S + j * d, d).array() +=
                    Q.middleCols(j * d, d).array().colwise() * ds.col(s);
                gq.middleCols(j * d, d).array() +=
                    H.middleCols(s * S + j * d, d).array().colwise() * ds.col(s);
            }
        }
    });
}

Var pinball_mean(Tape& t, Var pred, const Matrix& target, std::span<const double> qs) {
    const Matrix& P = t.value(pred);
    const auto nq = static_cast<Eigen::Index>(qs.size());
    require(P.rows() == target.rows() && P.cols() == target.cols() * nq,
            "pinball_mean shape mismatch");
    const double n = static_cast<double>(P.size());
    double total = 0.0;
    for (Eigen::Index b = 0; b < P.rows(); ++b)
        for (Eigen::Index s = 0; s < target.cols(); ++s)
            for (Eigen::Index j = 0; j < nq; ++j) {
                const double diff = target(b, s) - P(b, s * nq + j);
                const double q = qs[static_cast<std::size_t>(j)];
                total += diff > 0.0 ? q * diff : (q - 1.0) * diff;
            }
    Matrix out(1, 1);
    out(0, 0) = total / n;
    std::vector<double> qv(qs.begin(), qs.end());
    return t.push(std::move(out), [pred, target, qv = std::move(qv), n](Tape& t, int self) {
        const double g = G(t, self)(0, 0) / n;
        const Matrix& P = t.value(pred);
        Matrix& gp = t.grad(pred.id);
        const auto nq = static_cast<Eigen::Index>(qv.size());
        for (Eigen::Index b = 0; b < P.rows(); ++b)
            for (Eigen::Index s = 0; s < target.cols(); ++s)
                for (Eigen::Index j = 0; j < nq; ++j) {
                    const double diff = target(b, s) - P(b, s * nq + j);
                    const double q = qv[static_cast<std::size_t>(j)];
                    const double d = diff > 0.0 ? -q : diff < 0.0 ? 1.0 - q : 0.5 - q;
                    gp(b, s * nq + j) += g * d;
                }
    });
}

Var gaussian_nll_mean(Tape& t, Var mu, Var sigma, const Matrix& target) {
    const Matrix& M = t.value(mu);
    const Matrix& Sg = t.value(sigma);
    require(M.rows() == target.rows() && M.cols() == target.cols() && Sg.rows() == M.rows() &&
                Sg.cols() == M.cols(),
            "gaussian_nll_mean shape mismatch");
    static constexpr double kFloor = 1e-6;
    const double half_log_2pi = 0.5 * std::log(2.0 * 3.14159265358979323846);
    const double n = static_cast<double>(M.size());
    double total = 0.0;
    for (Eigen::Index i = 0; i < M.size(); ++i) {
        const double s = std::max(Sg.data()[i], kFloor);
        const double r = target.data()[i] - M.data()[i];
        total += half_log_2pi + std::log(s) + r * r / (2.0 * s * s);
    }
    Matrix out(1, 1);
    out(0, 0) = total / n;
    return t.push(std::move(out), [mu, sigma, target, n](Tape& t, int self) {
        const double g = G(t, self)(0, 0) / n;
        const Matrix& M = t.value(mu);
        const Matrix& Sg = t.value(sigma);
        Matrix& gm = t.grad(mu.id);
        Matrix& gs = t.grad(sigma.id);
        for (Eigen::Index i = 0; i < M.size(); ++i) {
            const double raw = Sg.data()[i];
            const double s = std::max(raw, kFloor);
            const double r = target.data()[i] - M.data()[i];
            gm.data()[i] += g * (-r / (s * s));
            if (raw > kFloor) gs.data()[i] += g * (1.0 / s - r * r / (s * s * s));
        }
    });
}

} // namespace safemon::nn
