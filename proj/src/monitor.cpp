#include "safemon/monitor.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include <fmt/format.h>

namespace safemon::mon {

Monitor::Monitor(MonitorConfig cfg, Scenario scenario)
    : cfg_(std::move(cfg)), scenario_(std::move(scenario)), grid_(QuantileGrid::standard()) {
    require(cfg_.model != nullptr, "monitor needs a model");
    require(cfg_.decision_quantile > 0.0 && cfg_.decision_quantile < 1.0,
            "decision quantile must lie in (0, 1)");
    require(cfg_.hysteresis >= 0, "hysteresis must be >= 0");
    require(cfg_.covariates.size() == cfg_.model->covariate_count(),
            "monitor covariates do not match the model");
    grid_ = cfg_.model->grid();
    const auto col = grid_.find(cfg_.decision_quantile);
    require(col.has_value(),
            fmt::format("decision quantile {} is not in the model's grid", cfg_.decision_quantile));
    column_ = *col;
    (void)cfg_.norm.at(cfg_.target);
    for (const auto& c : cfg_.covariates) (void)cfg_.norm.at(c);
    k_ = cfg_.model->window().lookback();
    ring_.resize(k_, static_cast<Eigen::Index>(1 + cfg_.covariates.size()));
    const auto& ts = cfg_.norm.at(cfg_.target);
    sample_.scenario = scenario_;
    sample_.denorm = {ts.mean, ts.std};
    sample_.past_target.assign(static_cast<std::size_t>(k_), 0.0);
    sample_.past_covariates.resize(k_, static_cast<Eigen::Index>(cfg_.covariates.size()));
    sample_.future_target.assign(static_cast<std::size_t>(cfg_.model->window().horizon()), 0.0);
}

void Monitor::reset() {
    pushed_ = 0;
    streak_ = 0;
    last_.reset();
}

std::optional<Alarm> Monitor::push(const Observation& obs) {
    require(obs.lc_outputs.size() == cfg_.covariates.size(),
            fmt::format("observation has {} learned-component outputs, the model expects {}",
                        obs.lc_outputs.size(), cfg_.covariates.size()));
    const auto slot = static_cast<Eigen::Index>(pushed_ % k_);
    ring_(slot, 0) = cfg_.norm.apply(cfg_.target, obs.safety_metric);
    for (std::size_t c = 0; c < obs.lc_outputs.size(); ++c)
        ring_(slot, static_cast<Eigen::Index>(c + 1)) = cfg_.norm.apply(cfg_.covariates[c], obs.lc_outputs[c]);
    ++pushed_;
    last_.reset();
    if (pushed_ < k_) return std::nullopt;

    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < k_; ++i) {
        const auto src = static_cast<Eigen::Index>((pushed_ - k_ + i) % k_);
        sample_.past_target[static_cast<std::size_t>(i)] = ring_(src, 0);
        for (Eigen::Index c = 0; c < sample_.past_covariates.cols(); ++c)
            sample_.past_covariates(i, c) = ring_(src, c + 1);
    }
    sample_.origin_t = pushed_ - 1;
    auto f = cfg_.model->predict(sample_, grid_,
                                 fc::derive_seed(cfg_.mc_seed, static_cast<std::uint64_t>(pushed_)));
    f.origin_t = sample_.origin_t;
    const Vector col = f.values.col(static_cast<Eigen::Index>(column_));
    const std::span<const double> seq(col.data(), static_cast<std::size_t>(col.size()));
    Decision d;
    d.origin_t = sample_.origin_t;
    d.q = cfg_.decision_quantile;
    d.max_forecast = col.maxCoeff();
    d.decision = violation_sign(seq);
    d.ttv = first_violation_index(seq);
    streak_ = d.decision > 0 ? streak_ + 1 : 0;
    d.alarm = d.decision > 0 && streak_ >= std::max(1, cfg_.hysteresis);
    d.latency_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    last_ = d;
    if (!d.alarm) return std::nullopt;
    return Alarm{d.origin_t, *d.ttv, std::move(f)};
}

std::vector<ReplayStep> replay(const Episode& ep, Monitor& monitor) {
    const auto& cfg = monitor.config();
    require(ep.lc_names == cfg.covariates,
            fmt::format("episode {} learned-component channels do not match the monitor", ep.id));
    const std::size_t r = ep.requirement_index(cfg.target);
    monitor.reset();
    std::vector<ReplayStep> out;
    const std::size_t T = ep.length();
    Observation obs;
    obs.lc_outputs.resize(ep.lc_names.size());
    for (std::size_t t = 0; t + 1 < T; ++t) {
        for (std::size_t c = 0; c < obs.lc_outputs.size(); ++c)
            obs.lc_outputs[c] = ep.lc_outputs(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(c));
        obs.safety_metric = ep.safety_metric(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(r));
        auto alarm = monitor.push(obs);
        if (monitor.last_decision()) out.push_back({*monitor.last_decision(), std::move(alarm)});
    }
    return out;
}

MonitorConfig monitor_config(std::shared_ptr<const fc::TrainedForecaster> model, double decision_quantile,
                             int hysteresis, std::uint64_t mc_seed) {
    MonitorConfig c;
    c.target = model->schema().target;
    c.covariates = model->schema().covariates;
    c.norm = model->schema().norm;
    c.decision_quantile = decision_quantile;
    c.hysteresis = hysteresis;
    c.mc_seed = mc_seed;
    c.model = std::move(model);
    return c;
}

} // namespace safemon::mon
