#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "safemon/forecasters.hpp"

namespace safemon::mon {

struct MonitorConfig {
    std::shared_ptr<const fc::Forecaster> model;
    std::string target = "cte";
    std::vector<std::string> covariates;
    data::NormStats norm;
    double decision_quantile = 0.995;
    /// Consecutive positive decisions needed to raise an alarm; 0 acts as 1.
    int hysteresis = 1;
    std::uint64_t mc_seed = 1;
};

/// One timestep of streamed data in original units.
struct Observation {
    std::vector<double> lc_outputs;
    double safety_metric = 0.0;
};

struct Alarm {
    long origin_t = 0;
    int time_to_violation = 0;
    QuantileForecast forecast;
};

struct Decision {
    long origin_t = 0; // last observed step
    double q = 0.0;
    double max_forecast = 0.0;
    int decision = -1;
    std::optional<int> ttv;
    bool alarm = false;
    double latency_ms = 0.0;
};

class Monitor {
public:
    Monitor(MonitorConfig cfg, Scenario scenario);

    /// Appends one observation. Once k steps are buffered, forecasts and
    /// decides; returns an alarm when the hysteresis count is reached.
    std::optional<Alarm> push(const Observation& obs);

    /// Decision made by the latest push, if any.
    const std::optional<Decision>& last_decision() const { return last_; }

    long observed() const { return pushed_; }
    const MonitorConfig& config() const { return cfg_; }
    void reset();

private:
    MonitorConfig cfg_;
    Scenario scenario_;
    int k_ = 0;
    std::size_t column_ = 0;
    QuantileGrid grid_;
    // Ring buffer of normalized [target, covariates...] rows.
    Matrix ring_;
    long pushed_ = 0;
    int streak_ = 0;
    WindowSample sample_;
    std::optional<Decision> last_;
};

struct ReplayStep {
    Decision decision;
    std::optional<Alarm> alarm;
};

/// Feeds an episode through the monitor. Decisions are kept for origins
/// whose next step exists in the episode: exactly T - k of them, the first
/// forecasting step k.
std::vector<ReplayStep> replay(const Episode& ep, Monitor& monitor);

/// Monitor for a trained model, taking target/covariates/norm from its schema.
MonitorConfig monitor_config(std::shared_ptr<const fc::TrainedForecaster> model, double decision_quantile,
                             int hysteresis, std::uint64_t mc_seed);

} // namespace safemon::mon
