#pragma once

#include <random>

#include "safemon/forecasters.hpp"
#include "safemon/sim.hpp"

namespace testing {

using namespace safemon;

inline data::NormStats unit_norm() {
    return data::NormStats({"cte_est", "he_est", "cte", "he"}, std::vector<data::ChannelStats>(4));
}

inline fc::ModelSchema schema(int h, int cm, int mc_paths = 100) {
    fc::ModelSchema s;
    s.wc = WindowConfig(h, cm);
    s.covariates = {"cte_est", "he_est"};
    s.scenario_dims = default_scenario_dims();
    s.norm = unit_norm();
    s.mc_paths = mc_paths;
    return s;
}

inline std::vector<WindowSample> random_windows(const fc::ModelSchema& s, std::size_t n,
                                                std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const auto k = static_cast<std::size_t>(s.wc.lookback());
    const auto h = static_cast<std::size_t>(s.wc.horizon());
    std::vector<WindowSample> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto& w = out[i];
        std::vector<double> v;
        for (const auto& d : s.scenario_dims) v.push_back(d.lo + u(rng) * (d.hi - d.lo));
        w.scenario = Scenario(v, s.scenario_dims);
        w.past_target.resize(k);
        for (auto& x : w.past_target) x = nd(rng);
        w.past_covariates = Matrix(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(s.covariates.size()));
        for (Eigen::Index r = 0; r < w.past_covariates.rows(); ++r)
            for (Eigen::Index c = 0; c < w.past_covariates.cols(); ++c) w.past_covariates(r, c) = nd(rng);
        w.future_target.resize(h);
        w.future_original.resize(h);
        for (std::size_t j = 0; j < h; ++j) {
            w.future_target[j] = nd(rng);
            w.future_original[j] = w.future_target[j];
        }
        w.episode_id = "ep-" + std::to_string(i % 5);
        w.origin_t = static_cast<long>(k - 1 + i);
    }
    return out;
}

/// Small off-grid network sizes so finite-difference checks stay cheap.
inline fc::ForecasterSpec small_spec(fc::Family f, const std::string& cell = "gru", double dropout = 0.0) {
    auto s = fc::ForecasterSpec::defaults(f);
    s.allow_off_grid = true;
    auto& h = s.hyperparams;
    switch (f) {
    case fc::Family::Seq2Seq:
        h["neurons"] = 6.0;
        h["decoder_layers"] = 2.0;
        break;
    case fc::Family::ConvSeq2Seq:
        h["neurons"] = 6.0;
        h["channels"] = 3.0;
        h["decoder_layers"] = 1.0;
        break;
    case fc::Family::ArRnn:
        h["rnn_cell"] = cell;
        h["rnn_nodes"] = 4.0;
        h["dropout"] = dropout;
        break;
    case fc::Family::AttnSeq2Seq:
        h["state_size"] = 6.0;
        h["attention_heads"] = 2.0;
        h["dropout"] = dropout;
        break;
    case fc::Family::Persistence: break;
    }
    return s;
}

/// Forecasts a fixed h x |Q| matrix (original units) for every window.
class FixedForecaster final : public fc::Forecaster {
public:
    FixedForecaster(WindowConfig wc, QuantileGrid grid, Matrix values, std::size_t n_cov = 2)
        : wc_(wc), grid_(std::move(grid)), values_(std::move(values)), n_cov_(n_cov) {}

    QuantileForecast predict(const WindowSample& s, const QuantileGrid& grid,
                             std::optional<std::uint64_t>) const override {
        require(grid == grid_, "grid mismatch");
        ++calls;
        return {values_, grid.values(), s.origin_t};
    }
    const WindowConfig& window() const override { return wc_; }
    const QuantileGrid& grid() const override { return grid_; }
    std::size_t covariate_count() const override { return n_cov_; }

    mutable long calls = 0;

private:
    WindowConfig wc_;
    QuantileGrid grid_;
    Matrix values_;
    std::size_t n_cov_;
};

/// Emits the true future (or a constant) in every quantile column.
class OracleForecaster final : public fc::Forecaster {
public:
    OracleForecaster(WindowConfig wc, QuantileGrid grid, std::optional<double> constant = std::nullopt)
        : wc_(wc), grid_(std::move(grid)), constant_(constant) {}

    QuantileForecast predict(const WindowSample& s, const QuantileGrid& grid,
                             std::optional<std::uint64_t>) const override {
        QuantileForecast f;
        f.quantiles = grid.values();
        f.origin_t = s.origin_t;
        f.values.resize(wc_.horizon(), static_cast<Eigen::Index>(grid.size()));
        for (Eigen::Index r = 0; r < f.values.rows(); ++r)
            f.values.row(r).setConstant(constant_ ? *constant_ : s.future_original[static_cast<std::size_t>(r)]);
        return f;
    }
    const WindowConfig& window() const override { return wc_; }
    const QuantileGrid& grid() const override { return grid_; }
    std::size_t covariate_count() const override { return 2; }

private:
    WindowConfig wc_;
    QuantileGrid grid_;
    std::optional<double> constant_;
};

} // namespace testing
