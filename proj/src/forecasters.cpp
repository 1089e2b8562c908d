#include "safemon/forecasters.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include <fmt/format.h>

#include "safemon/nn/layers.hpp"

namespace safemon::fc {

using nn::ForwardMode;
using nn::ParamSet;
using nn::Tape;
using nn::Var;

std::string to_string(Family f) {
    switch (f) {
    case Family::Persistence: return "persistence";
    case Family::Seq2Seq: return "seq2seq";
    case Family::ConvSeq2Seq: return "convseq2seq";
    case Family::ArRnn: return "ar_rnn";
    case Family::AttnSeq2Seq: return "attn_seq2seq";
    }
    return "?";
}

Family parse_family(const std::string& name) {
    for (Family f : {Family::Persistence, Family::Seq2Seq, Family::ConvSeq2Seq, Family::ArRnn,
                     Family::AttnSeq2Seq})
        if (to_string(f) == name) return f;
    throw Error(fmt::format("unknown forecaster family '{}'", name));
}

bool is_neural(Family f) { return f != Family::Persistence; }

std::vector<Family> neural_families() {
    return {Family::Seq2Seq, Family::ConvSeq2Seq, Family::ArRnn, Family::AttnSeq2Seq};
}

std::string to_string(const HyperValue& v) {
    if (const auto* d = std::get_if<double>(&v)) return fmt::format("{}", *d);
    return std::get<std::string>(v);
}

HyperValue parse_hyper_value(const std::string& text) {
    try {
        std::size_t used = 0;
        const double d = std::stod(text, &used);
        if (used == text.size()) return d;
    } catch (const std::exception&) {
    }
    return text;
}

HyperGrid hyper_grid(Family f) {
    HyperGrid g;
    if (f == Family::Persistence) return g;
    g["batch_size"] = {64.0, 128.0, 256.0};
    g["learning_rate"] = {1e-4, 1e-3, 1e-2};
    g["grad_clip"] = {1e-2, 1.0, 1e2};
    switch (f) {
    case Family::Seq2Seq:
        g["decoder_layers"] = {1.0, 2.0, 4.0};
        g["neurons"] = {20.0, 80.0};
        break;
    case Family::ConvSeq2Seq:
        g["decoder_layers"] = {1.0, 2.0, 4.0};
        g["neurons"] = {20.0, 80.0};
        g["channels"] = {20.0, 40.0};
        break;
    case Family::ArRnn:
        g["rnn_cell"] = {std::string("gru"), std::string("lstm")};
        g["rnn_nodes"] = {40.0, 100.0};
        g["dropout"] = {0.1, 0.2, 0.3};
        break;
    case Family::AttnSeq2Seq:
        g["state_size"] = {40.0, 80.0, 160.0};
        g["attention_heads"] = {1.0, 4.0};
        g["dropout"] = {0.1, 0.2, 0.3};
        break;
    case Family::Persistence: break;
    }
    return g;
}

ForecasterSpec ForecasterSpec::defaults(Family f) {
    ForecasterSpec s;
    s.family = f;
    auto& h = s.hyperparams;
    switch (f) {
    case Family::Persistence: break;
    case Family::Seq2Seq:
        h = {{"batch_size", 128.0}, {"learning_rate", 1e-3}, {"grad_clip", 1.0},
             {"decoder_layers", 2.0}, {"neurons", 80.0}};
        break;
    case Family::ConvSeq2Seq:
        h = {{"batch_size", 128.0}, {"learning_rate", 1e-3}, {"grad_clip", 1.0},
             {"decoder_layers", 2.0}, {"neurons", 80.0}, {"channels", 20.0}};
        break;
    case Family::ArRnn:
        h = {{"batch_size", 64.0}, {"learning_rate", 1e-3}, {"grad_clip", 1.0},
             {"rnn_cell", std::string("gru")}, {"rnn_nodes", 40.0}, {"dropout", 0.1}};
        break;
    case Family::AttnSeq2Seq:
        h = {{"batch_size", 256.0}, {"learning_rate", 1e-3}, {"grad_clip", 1.0},
             {"state_size", 160.0}, {"attention_heads", 4.0}, {"dropout", 0.1}};
        break;
    }
    return s;
}

void ForecasterSpec::validate() const {
    const auto grid = hyper_grid(family);
    for (const auto& [key, allowed] : grid)
        require(hyperparams.count(key) == 1,
                fmt::format("{} is missing hyperparameter '{}'", to_string(family), key));
    for (const auto& [key, value] : hyperparams) {
        auto it = grid.find(key);
        require(it != grid.end(),
                fmt::format("{} does not take hyperparameter '{}'", to_string(family), key));
        if (allow_off_grid) {
            require(it->second.front().index() == value.index(),
                    fmt::format("hyperparameter '{}' has the wrong type", key));
            continue;
        }
        const bool ok = std::any_of(it->second.begin(), it->second.end(), [&](const HyperValue& a) {
            if (a.index() != value.index()) return false;
            if (const auto* d = std::get_if<double>(&a))
                return std::abs(*d - std::get<double>(value)) <= 1e-12 * std::max(1.0, std::abs(*d));
            return a == value;
        });
        require(ok, fmt::format("hyperparameter {}={} is outside the {} grid", key,
                                to_string(value), to_string(family)));
    }
}

double ForecasterSpec::number(const std::string& key) const {
    auto it = hyperparams.find(key);
    require(it != hyperparams.end(), fmt::format("missing hyperparameter '{}'", key));
    const auto* d = std::get_if<double>(&it->second);
    require(d != nullptr, fmt::format("hyperparameter '{}' is not numeric", key));
    return *d;
}

int ForecasterSpec::integer(const std::string& key) const {
    const double d = number(key);
    require(d >= 1.0 && std::floor(d) == d, fmt::format("hyperparameter '{}' must be a positive integer", key));
    return static_cast<int>(d);
}

std::string ForecasterSpec::text(const std::string& key) const {
    auto it = hyperparams.find(key);
    require(it != hyperparams.end(), fmt::format("missing hyperparameter '{}'", key));
    const auto* s = std::get_if<std::string>(&it->second);
    require(s != nullptr, fmt::format("hyperparameter '{}' is not text", key));
    return *s;
}

namespace {

template <typename Get>
Batch make_batch_impl(std::size_t n, Get&& get) {
    require(n > 0, "empty batch");
    const WindowSample& first = get(0);
    const auto k = static_cast<Eigen::Index>(first.past_target.size());
    const auto h = static_cast<Eigen::Index>(first.future_target.size());
    const auto n_cov = first.past_covariates.cols();
    const auto n_x = static_cast<Eigen::Index>(first.scenario.size());
    const Eigen::Index c = 1 + n_cov;
    const auto B = static_cast<Eigen::Index>(n);
    Batch b;
    b.statics.resize(B, n_x);
    b.lookback.resize(B, k * c);
    b.past_target.resize(B, k);
    b.future.resize(B, h);
    for (Eigen::Index i = 0; i < B; ++i) {
        const WindowSample& w = get(static_cast<std::size_t>(i));
        require(static_cast<Eigen::Index>(w.past_target.size()) == k &&
                    static_cast<Eigen::Index>(w.future_target.size()) == h &&
                    w.past_covariates.cols() == n_cov && w.past_covariates.rows() == k &&
                    static_cast<Eigen::Index>(w.scenario.size()) == n_x,
                "batch windows have inconsistent shapes");
        const auto scaled = w.scenario.scaled();
        for (Eigen::Index j = 0; j < n_x; ++j) b.statics(i, j) = scaled[static_cast<std::size_t>(j)];
        for (Eigen::Index s = 0; s < k; ++s) {
            const double y = w.past_target[static_cast<std::size_t>(s)];
            b.past_target(i, s) = y;
            b.lookback(i, s * c) = y;
            for (Eigen::Index j = 0; j < n_cov; ++j) b.lookback(i, s * c + 1 + j) = w.past_covariates(s, j);
        }
        for (Eigen::Index s = 0; s < h; ++s) b.future(i, s) = w.future_target[static_cast<std::size_t>(s)];
    }
    return b;
}

void check_finite(const Matrix& m) {
    if (!m.allFinite()) throw Error("numerical overflow");
}

/// Columns for `grid` in the model's quantile heads.
std::vector<Eigen::Index> grid_columns(const QuantileGrid& model, const QuantileGrid& wanted) {
    std::vector<Eigen::Index> cols;
    for (double q : wanted.values()) {
        auto j = model.find(q);
        require(j.has_value(), fmt::format("quantile {} is not among the model's quantile heads", q));
        cols.push_back(static_cast<Eigen::Index>(*j));
    }
    return cols;
}

Matrix select_quantiles(const Matrix& heads, Eigen::Index h, const QuantileGrid& model,
                        const QuantileGrid& wanted) {
    if (model == wanted) return heads;
    const auto cols = grid_columns(model, wanted);
    const auto nq = static_cast<Eigen::Index>(model.size());
    const auto nw = static_cast<Eigen::Index>(cols.size());
    Matrix out(heads.rows(), h * nw);
    for (Eigen::Index s = 0; s < h; ++s)
        for (Eigen::Index j = 0; j < nw; ++j) out.col(s * nw + j) = heads.col(s * nq + cols[static_cast<std::size_t>(j)]);
    return out;
}

/// Shared evaluation path for families with direct quantile heads.
class QuantileNetwork : public Network {
public:
    QuantileNetwork(const ModelSchema& schema) : schema_(schema) {}

    Var loss(Tape& t, const ParamSet& ps, const Batch& b, const ForwardMode& mode) const override {
        const Var out = forward(t, ps, b, mode);
        return nn::pinball_mean(t, out, b.future, schema_.grid.values());
    }

    Matrix predict(const ParamSet& ps, const Batch& b, const QuantileGrid& grid,
                   std::span<const std::uint64_t>) const override {
        Tape t(false);
        const Var out = forward(t, ps, b, ForwardMode{});
        check_finite(t.value(out));
        return select_quantiles(t.value(out), schema_.wc.horizon(), schema_.grid, grid);
    }

protected:
    Eigen::Index heads_width() const {
        return schema_.wc.horizon() * static_cast<Eigen::Index>(schema_.grid.size());
    }
    ModelSchema schema_;
};

class PersistenceNet final : public QuantileNetwork {
public:
    using QuantileNetwork::QuantileNetwork;
    Family family() const override { return Family::Persistence; }

    Var forward(Tape& t, const ParamSet&, const Batch& b, const ForwardMode&) const override {
        const Eigen::Index k = b.past_target.cols();
        Matrix out = b.past_target.col(k - 1).replicate(1, heads_width());
        return t.constant(std::move(out));
    }
};

class Seq2SeqNet final : public QuantileNetwork {
public:
    Seq2SeqNet(const ForecasterSpec& spec, const ModelSchema& schema, ParamSet& ps,
               std::mt19937_64& rng)
        : QuantileNetwork(schema) {
        const Eigen::Index n = spec.integer("neurons");
        const Eigen::Index in = schema.wc.lookback() * static_cast<Eigen::Index>(schema.channels()) +
                                static_cast<Eigen::Index>(schema.scenario_dims.size());
        enc_in_ = nn::Dense::create(ps, "enc0", in, n, rng);
        enc_hidden_ = nn::Dense::create(ps, "enc1", n, n, rng);
        for (int l = 0; l < spec.integer("decoder_layers"); ++l)
            decoder_.push_back(nn::Dense::create(ps, fmt::format("dec{}", l), n, n, rng));
        head_ = nn::Dense::create(ps, "head", n, heads_width(), rng);
    }

    Family family() const override { return Family::Seq2Seq; }

    Var forward(Tape& t, const ParamSet& ps, const Batch& b, const ForwardMode&) const override {
        const std::array<Var, 2> parts{t.constant(b.lookback), t.constant(b.statics)};
        Var x = nn::concat_cols(t, parts);
        x = nn::tanh(t, enc_in_(t, ps, x));
        x = nn::tanh(t, enc_hidden_(t, ps, x));
        for (const auto& layer : decoder_) x = nn::tanh(t, layer(t, ps, x));
        return head_(t, ps, x);
    }

private:
    nn::Dense enc_in_, enc_hidden_, head_;
    std::vector<nn::Dense> decoder_;
};

/// Dilated causal convolutions (kernel 2, dilations 1, 2, 4, 8; receptive
/// field 16 steps). Only the cone feeding the final step is evaluated, so
/// the encoder cost does not grow with the lookback length.
class ConvSeq2SeqNet final : public QuantileNetwork {
public:
    static constexpr std::array<int, 4> kDilations{1, 2, 4, 8};
    static constexpr int kKernel = 2;

    ConvSeq2SeqNet(const ForecasterSpec& spec, const ModelSchema& schema, ParamSet& ps,
                   std::mt19937_64& rng)
        : QuantileNetwork(schema) {
        const Eigen::Index ch = spec.integer("channels");
        const Eigen::Index n = spec.integer("neurons");
        Eigen::Index c_in = static_cast<Eigen::Index>(schema.channels());
        for (std::size_t l = 0; l < kDilations.size(); ++l) {
            convs_.push_back(nn::CausalConv::create(ps, fmt::format("conv{}", l), c_in, ch, kKernel,
                                                    kDilations[l], rng));
            c_in = ch;
        }
        // Output steps per layer, top-down: the last layer emits one step.
        steps_.assign(kDilations.size(), 1);
        for (std::size_t l = kDilations.size() - 1; l > 0; --l)
            steps_[l - 1] = steps_[l] + (kKernel - 1) * kDilations[l];
        context_ = nn::Dense::create(ps, "context", ch + static_cast<Eigen::Index>(schema.scenario_dims.size()), n, rng);
        for (int l = 0; l < spec.integer("decoder_layers"); ++l)
            decoder_.push_back(nn::Dense::create(ps, fmt::format("dec{}", l), n, n, rng));
        head_ = nn::Dense::create(ps, "head", n, heads_width(), rng);
    }

    Family family() const override { return Family::ConvSeq2Seq; }

    Var forward(Tape& t, const ParamSet& ps, const Batch& b, const ForwardMode&) const override {
        Var x = t.constant(b.lookback);
        Eigen::Index steps_in = schema_.wc.lookback();
        for (std::size_t l = 0; l < convs_.size(); ++l) {
            x = nn::tanh(t, convs_[l](t, ps, x, steps_in, steps_[l]));
            steps_in = steps_[l];
        }
        const std::array<Var, 2> parts{x, t.constant(b.statics)};
        Var d = nn::tanh(t, context_(t, ps, nn::concat_cols(t, parts)));
        for (const auto& layer : decoder_) d = nn::tanh(t, layer(t, ps, d));
        return head_(t, ps, d);
    }

private:
    std::vector<nn::CausalConv> convs_;
    std::vector<Eigen::Index> steps_;
    nn::Dense context_, head_;
    std::vector<nn::Dense> decoder_;
};

/// Gated-recurrence encoder over the most recent lookback steps, attention
/// from a query conditioned on the static embedding and the pooled lookback,
/// and a shared decoder state feeding per-step quantile heads.
class AttnSeq2SeqNet final : public QuantileNetwork {
public:
    static constexpr Eigen::Index kEncoderSteps = 16;

    AttnSeq2SeqNet(const ForecasterSpec& spec, const ModelSchema& schema, ParamSet& ps,
                   std::mt19937_64& rng)
        : QuantileNetwork(schema) {
        state_ = spec.integer("state_size");
        heads_ = spec.integer("attention_heads");
        dropout_ = spec.number("dropout");
        require(state_ % heads_ == 0, "attention heads must divide state_size");
        const auto n_x = static_cast<Eigen::Index>(schema.scenario_dims.size());
        static_ = nn::Dense::create(ps, "static", n_x, state_, rng);
        in_proj_ = nn::CausalConv::create(ps, "in_proj", static_cast<Eigen::Index>(schema.channels()),
                                          2 * state_, 1, 1, rng);
        query_ = nn::Dense::create(ps, "query", 2 * state_ + static_cast<Eigen::Index>(schema.channels()),
                                   state_, rng);
        out_proj_ = nn::Dense::create(ps, "attn_out", state_, state_, rng);
        mix_ = nn::Dense::create(ps, "mix", 3 * state_, state_, rng);
        dec_ = nn::Dense::create(ps, "dec", state_, state_, rng);
        head_ = nn::Dense::create(ps, "head", state_, heads_width(), rng);
    }

    Family family() const override { return Family::AttnSeq2Seq; }

    Var forward(Tape& t, const ParamSet& ps, const Batch& b, const ForwardMode& mode) const override {
        const Eigen::Index k = schema_.wc.lookback();
        const Eigen::Index c = static_cast<Eigen::Index>(schema_.channels());
        const Eigen::Index steps = std::min(k, kEncoderSteps);
        Matrix pooled = Matrix::Zero(b.size(), c);
        for (Eigen::Index i = 0; i < k; ++i) pooled += b.lookback.middleCols(i * c, c);
        pooled /= static_cast<double>(k);
        const Var s = nn::tanh(t, static_(t, ps, t.constant(b.statics)));
        const Var pre = in_proj_(t, ps, t.constant(b.lookback.rightCols(steps * c)), steps, steps);
        const Var enc = nn::gated_scan(t, pre, state_);
        const Var last = nn::slice_cols(t, enc, (steps - 1) * state_, state_);
        const std::array<Var, 3> qin{last, s, t.constant(std::move(pooled))};
        const Var q = nn::tanh(t, query_(t, ps, nn::concat_cols(t, qin)));
        const Var ctx = out_proj_(t, ps, nn::attention(t, q, enc, heads_));
        const std::array<Var, 3> min{ctx, last, s};
        Var z = nn::tanh(t, mix_(t, ps, nn::concat_cols(t, min)));
        z = nn::dropout(t, z, dropout_, mode);
        Var d = nn::tanh(t, dec_(t, ps, z));
        d = nn::dropout(t, d, dropout_, mode);
        return head_(t, ps, d);
    }

private:
    Eigen::Index state_ = 0;
    int heads_ = 1;
    double dropout_ = 0.0;
    nn::Dense static_, query_, out_proj_, mix_, dec_, head_;
    nn::CausalConv in_proj_;
};

/// Autoregressive recurrent network with a Gaussian head. Consumes the
/// previous target and the static scenario each step; forecasts by sampling
/// paths and taking empirical quantiles.
class ArRnnNet final : public Network {
public:
    ArRnnNet(const ForecasterSpec& spec, const ModelSchema& schema, ParamSet& ps,
             std::mt19937_64& rng)
        : schema_(schema) {
        const auto kind = spec.text("rnn_cell") == "lstm" ? nn::CellKind::Lstm : nn::CellKind::Gru;
        require(spec.text("rnn_cell") == "lstm" || spec.text("rnn_cell") == "gru",
                "rnn_cell must be gru or lstm");
        const Eigen::Index hidden = spec.integer("rnn_nodes");
        dropout_ = spec.number("dropout");
        const Eigen::Index in = 1 + static_cast<Eigen::Index>(schema.scenario_dims.size());
        cell_ = nn::RecurrentCell::create(ps, "cell", kind, in, hidden, rng);
        mu_ = nn::Dense::create(ps, "mu", hidden, 1, rng);
        sigma_ = nn::Dense::create(ps, "sigma", hidden, 1, rng);
        // softplus(0.5413) = 1: start near unit scale in normalized space.
        ps[sigma_.b].value.setConstant(0.5413248546129181);
    }

    Family family() const override { return Family::ArRnn; }
    bool stochastic() const override { return true; }

    Var forward(Tape& t, const ParamSet& ps, const Batch& b, const ForwardMode& mode) const override {
        Matrix seq(b.size(), b.past_target.cols() + b.future.cols());
        seq << b.past_target, b.future;
        const Eigen::Index steps = seq.cols() - 1;
        require(steps >= 1, "ar_rnn needs at least two target steps");
        const Var statics = t.constant(b.statics);
        auto state = cell_.zero_state(t, b.size());
        std::vector<Var> mus, sigmas;
        for (Eigen::Index s = 0; s < steps; ++s) {
            const std::array<Var, 2> parts{t.constant(seq.col(s)), statics};
            state = cell_.step(t, ps, nn::concat_cols(t, parts), state);
            const Var h = nn::dropout(t, state.h, dropout_, mode);
            mus.push_back(mu_(t, ps, h));
            sigmas.push_back(nn::softplus(t, sigma_(t, ps, h)));
        }
        const std::array<Var, 2> out{nn::concat_cols(t, mus), nn::concat_cols(t, sigmas)};
        return nn::concat_cols(t, out);
    }

    Var loss(Tape& t, const ParamSet& ps, const Batch& b, const ForwardMode& mode) const override {
        const Var out = forward(t, ps, b, mode);
        const Eigen::Index steps = b.past_target.cols() + b.future.cols() - 1;
        Matrix target(b.size(), steps);
        target << b.past_target.rightCols(b.past_target.cols() - 1), b.future;
        return nn::gaussian_nll_mean(t, nn::slice_cols(t, out, 0, steps),
                                     nn::slice_cols(t, out, steps, steps), target);
    }

    Matrix predict(const ParamSet& ps, const Batch& b, const QuantileGrid& grid,
                   std::span<const std::uint64_t> mc_seeds) const override {
        require(mc_seeds.size() == static_cast<std::size_t>(b.size()),
                "ar_rnn predict needs one Monte-Carlo seed per window");
        const Eigen::Index h = schema_.wc.horizon();
        const auto nq = static_cast<Eigen::Index>(grid.size());
        Matrix out(b.size(), h * nq);
        for (Eigen::Index i = 0; i < b.size(); ++i)
            out.row(i) = sample_row(ps, b.statics.row(i), b.past_target.row(i), grid,
                                    mc_seeds[static_cast<std::size_t>(i)]);
        return out;
    }

    /// Sample paths for one window: P x h in normalized units.
    Matrix sample_paths(const ParamSet& ps, const Eigen::RowVectorXd& statics,
                        const Eigen::RowVectorXd& past, std::uint64_t seed) const {
        const Eigen::Index k = past.size();
        const Eigen::Index h = schema_.wc.horizon();
        const Eigen::Index P = schema_.mc_paths;
        Tape t(false);
        const Var st1 = t.constant(statics);
        auto state = cell_.zero_state(t, 1);
        for (Eigen::Index s = 0; s + 1 < k; ++s) {
            Matrix y(1, 1);
            y(0, 0) = past(s);
            const std::array<Var, 2> parts{t.constant(std::move(y)), st1};
            state = cell_.step(t, ps, nn::concat_cols(t, parts), state);
        }
        state.h = nn::repeat_rows(t, state.h, P);
        if (cell_.kind == nn::CellKind::Lstm) state.c = nn::repeat_rows(t, state.c, P);
        const Var stP = t.constant(statics.replicate(P, 1));
        Matrix prev = Matrix::Constant(P, 1, past(k - 1));
        Matrix paths(P, h);
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> normal(0.0, 1.0);
        for (Eigen::Index tau = 0; tau < h; ++tau) {
            const std::array<Var, 2> parts{t.constant(prev), stP};
            state = cell_.step(t, ps, nn::concat_cols(t, parts), state);
            const Matrix& mu = t.value(mu_(t, ps, state.h));
            const Matrix& sg = t.value(nn::softplus(t, sigma_(t, ps, state.h)));
            check_finite(mu);
            check_finite(sg);
            for (Eigen::Index p = 0; p < P; ++p) {
                const double z = mu(p, 0) + std::max(sg(p, 0), 1e-6) * normal(rng);
                paths(p, tau) = z;
                prev(p, 0) = z;
            }
        }
        return paths;
    }

private:
    Eigen::RowVectorXd sample_row(const ParamSet& ps, const Eigen::RowVectorXd& statics,
                                  const Eigen::RowVectorXd& past, const QuantileGrid& grid,
                                  std::uint64_t seed) const {
        const Matrix paths = sample_paths(ps, statics, past, seed);
        const Eigen::Index h = paths.cols();
        const auto nq = static_cast<Eigen::Index>(grid.size());
        Eigen::RowVectorXd row(h * nq);
        std::vector<double> col(static_cast<std::size_t>(paths.rows()));
        for (Eigen::Index tau = 0; tau < h; ++tau) {
            for (Eigen::Index p = 0; p < paths.rows(); ++p) col[static_cast<std::size_t>(p)] = paths(p, tau);
            std::sort(col.begin(), col.end());
            for (Eigen::Index j = 0; j < nq; ++j)
                row(tau * nq + j) = empirical_quantile(col, grid[static_cast<std::size_t>(j)]);
        }
        return row;
    }

    ModelSchema schema_;
    nn::RecurrentCell cell_;
    nn::Dense mu_, sigma_;
    double dropout_ = 0.0;
};

} // namespace

Batch make_batch(std::span<const WindowSample* const> samples) {
    return make_batch_impl(samples.size(), [&](std::size_t i) -> const WindowSample& { return *samples[i]; });
}

Batch make_batch(std::span<const WindowSample> samples) {
    return make_batch_impl(samples.size(), [&](std::size_t i) -> const WindowSample& { return samples[i]; });
}

std::unique_ptr<Network> build_network(const ForecasterSpec& spec, const ModelSchema& schema,
                                       ParamSet& params, std::uint64_t init_seed) {
    spec.validate();
    require(!schema.scenario_dims.empty(), "model schema needs scenario dimensions");
    require(schema.mc_paths >= 1, "mc_paths must be >= 1");
    std::mt19937_64 rng(init_seed);
    switch (spec.family) {
    case Family::Persistence: return std::make_unique<PersistenceNet>(schema);
    case Family::Seq2Seq: return std::make_unique<Seq2SeqNet>(spec, schema, params, rng);
    case Family::ConvSeq2Seq: return std::make_unique<ConvSeq2SeqNet>(spec, schema, params, rng);
    case Family::ArRnn: return std::make_unique<ArRnnNet>(spec, schema, params, rng);
    case Family::AttnSeq2Seq: return std::make_unique<AttnSeq2SeqNet>(spec, schema, params, rng);
    }
    throw Error("unknown family");
}

double empirical_quantile(std::span<double> sorted_values, double q) {
    require(!sorted_values.empty(), "empirical_quantile of an empty sample");
    const double n = static_cast<double>(sorted_values.size());
    // 1e-9 keeps products such as 0.05 * 100 from rounding up a rank.
    auto rank = static_cast<long>(std::ceil(q * n - 1e-9));
    rank = std::clamp(rank, 1L, static_cast<long>(sorted_values.size()));
    return sorted_values[static_cast<std::size_t>(rank - 1)];
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
    std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::vector<QuantileForecast> Forecaster::predict_many(std::span<const WindowSample> samples,
                                                       const QuantileGrid& grid,
                                                       std::optional<std::uint64_t> base_seed) const {
    std::vector<QuantileForecast> out;
    out.reserve(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        std::optional<std::uint64_t> seed;
        if (base_seed) seed = derive_seed(*base_seed, i);
        out.push_back(predict(samples[i], grid, seed));
    }
    return out;
}

TrainedForecaster::TrainedForecaster(ForecasterSpec spec, ModelSchema schema, ParamSet params,
                                     TrainingRecord record)
    : spec_(std::move(spec)), schema_(std::move(schema)), record_(std::move(record)) {
    ParamSet fresh;
    net_ = build_network(spec_, schema_, fresh, 0);
    require(fresh.size() == params.size(),
            fmt::format("{} expects {} parameter tensors, got {}", to_string(spec_.family),
                        fresh.size(), params.size()));
    for (std::size_t i = 0; i < fresh.size(); ++i)
        require(fresh[i].name == params[i].name && fresh[i].value.rows() == params[i].value.rows() &&
                    fresh[i].value.cols() == params[i].value.cols(),
                fmt::format("parameter #{} ('{}') does not match the architecture", i, params[i].name));
    params_ = std::move(params);
}

std::vector<QuantileForecast> TrainedForecaster::finish(const Matrix& normalized,
                                                        std::span<const WindowSample> samples,
                                                        const QuantileGrid& grid) const {
    check_finite(normalized);
    const Eigen::Index h = schema_.wc.horizon();
    const auto nq = static_cast<Eigen::Index>(grid.size());
    std::vector<QuantileForecast> out(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        auto& f = out[i];
        f.quantiles = grid.values();
        f.origin_t = samples[i].origin_t;
        f.values.resize(h, nq);
        const auto& dn = samples[i].denorm;
        for (Eigen::Index s = 0; s < h; ++s) {
            for (Eigen::Index j = 0; j < nq; ++j)
                f.values(s, j) = dn.apply(normalized(static_cast<Eigen::Index>(i), s * nq + j));
            auto row = f.values.row(s);
            std::sort(row.begin(), row.end());
        }
    }
    return out;
}

QuantileForecast TrainedForecaster::predict(const WindowSample& sample, const QuantileGrid& grid,
                                            std::optional<std::uint64_t> mc_seed) const {
    sample.check(schema_.wc, schema_.covariates.size());
    require(sample.scenario.size() == schema_.scenario_dims.size(),
            "window scenario does not match the model schema");
    if (net_->stochastic()) require(mc_seed.has_value(), "ar_rnn predictions need an mc_seed");
    WindowSample copy;
    const WindowSample* src = &sample;
    if (sample.future_target.empty()) {
        // Inference windows carry no targets; pad so the batch shape is fixed.
        copy = sample;
        copy.future_target.assign(static_cast<std::size_t>(schema_.wc.horizon()), 0.0);
        src = &copy;
    }
    const WindowSample* ptrs[1] = {src};
    const Batch b = make_batch(std::span<const WindowSample* const>(ptrs, 1));
    const std::uint64_t seeds[1] = {mc_seed.value_or(0)};
    const Matrix z = net_->predict(params_, b, grid, seeds);
    return std::move(finish(z, std::span<const WindowSample>(src, 1), grid).front());
}

std::vector<QuantileForecast> TrainedForecaster::predict_many(std::span<const WindowSample> samples,
                                                              const QuantileGrid& grid,
                                                              std::optional<std::uint64_t> base_seed) const {
    if (net_->stochastic()) {
        require(base_seed.has_value(), "ar_rnn predictions need an mc_seed");
        return Forecaster::predict_many(samples, grid, base_seed);
    }
    std::vector<QuantileForecast> out;
    out.reserve(samples.size());
    constexpr std::size_t kChunk = 512;
    for (std::size_t at = 0; at < samples.size(); at += kChunk) {
        const auto chunk = samples.subspan(at, std::min(kChunk, samples.size() - at));
        for (const auto& s : chunk) {
            s.check(schema_.wc, schema_.covariates.size());
            require(!s.future_target.empty(), "predict_many needs windows with targets");
        }
        const Batch b = make_batch(chunk);
        const Matrix z = net_->predict(params_, b, grid, {});
        auto part = finish(z, chunk, grid);
        std::move(part.begin(), part.end(), std::back_inserter(out));
    }
    return out;
}

TrainedForecaster make_persistence(const ModelSchema& schema) {
    return TrainedForecaster(ForecasterSpec::defaults(Family::Persistence), schema, ParamSet{},
                             TrainingRecord{});
}

} // namespace safemon::fc
