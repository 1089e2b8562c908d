#pragma once

#include <random>
#include <string>

#include "safemon/nn/tape.hpp"

namespace safemon::nn {

/// Glorot-uniform weights, zero bias.
Matrix glorot(Eigen::Index fan_in, Eigen::Index fan_out, std::mt19937_64& rng);

struct Dense {
    std::size_t w = 0;
    std::size_t b = 0;

    static Dense create(ParamSet& ps, const std::string& name, Eigen::Index in, Eigen::Index out,
                        std::mt19937_64& rng);
    Var operator()(Tape& t, const ParamSet& ps, Var x) const;
};

/// x: B x (steps_in * c_in) -> B x (steps_out * c_out).
struct CausalConv {
    std::size_t w = 0;
    std::size_t b = 0;
    Eigen::Index c_in = 0;
    int kernel = 2;
    int dilation = 1;

    static CausalConv create(ParamSet& ps, const std::string& name, Eigen::Index c_in,
                             Eigen::Index c_out, int kernel, int dilation, std::mt19937_64& rng);
    Var operator()(Tape& t, const ParamSet& ps, Var x, Eigen::Index steps_in,
                   Eigen::Index steps_out) const;
};

enum class CellKind { Gru, Lstm };

struct RecurrentState {
    Var h;
    Var c; // LSTM only
};

/// GRU (reset gate applied to the projected hidden state) or LSTM cell.
struct RecurrentCell {
    CellKind kind = CellKind::Gru;
    Eigen::Index hidden = 0;
    std::size_t wx = 0;
    std::size_t wh = 0;
    std::size_t bx = 0;
    std::size_t bh = 0;

    static RecurrentCell create(ParamSet& ps, const std::string& name, CellKind kind,
                                Eigen::Index in, Eigen::Index hidden, std::mt19937_64& rng);
    RecurrentState zero_state(Tape& t, Eigen::Index batch) const;
    RecurrentState step(Tape& t, const ParamSet& ps, Var x, const RecurrentState& s) const;
};

} // namespace safemon::nn
