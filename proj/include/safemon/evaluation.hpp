#pragma once

#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "safemon/forecasters.hpp"
#include "safemon/training.hpp"

namespace safemon::eval {

/// Pooled over every window: 2 * sum QL / sum |y| in original units.
/// `column` selects the forecast column holding quantile q.
double q_risk(std::span<const WindowSample> windows, std::span<const QuantileForecast> forecasts,
              std::size_t column, double q);
/// Looks up q among the forecast quantiles.
double q_risk(std::span<const WindowSample> windows, std::span<const QuantileForecast> forecasts,
              double q);

struct Confusion {
    long tp = 0;
    long fp = 0;
    long fn = 0;
    long tn = 0;

    long total() const { return tp + fp + fn + tn; }
    /// TP / (TP + FP); with no predicted positives, 1 if FN = 0 else 0.
    double precision() const;
    /// TP / (TP + FN); 1 when there are no actual positives.
    double recall() const;
    bool precision_defaulted() const { return tp + fp == 0; }
    bool recall_defaulted() const { return tp + fn == 0; }

    Confusion& operator+=(const Confusion& o);
    friend bool operator==(const Confusion&, const Confusion&) = default;
};

Confusion confusion(std::span<const int> decisions, std::span<const int> truths);

/// (1 + b^2) P R / (b^2 P + R); 0 when P = R = 0.
double f_beta(double precision, double recall, double beta = 3.0);

/// U for sample a: #(a > b) + 0.5 #(a = b).
double mann_whitney_u(std::span<const double> a, std::span<const double> b);
/// Two-sided p-value, normal approximation with tie and continuity correction.
double mann_whitney_p(std::span<const double> a, std::span<const double> b);
double vargha_delaney(std::span<const double> a, std::span<const double> b);

struct StatTestResult {
    double u = 0.0;
    double p_value = 1.0;
    double a_hat = 0.5;
    std::size_t n_a = 0;
    std::size_t n_b = 0;
};

StatTestResult compare(std::span<const double> a, std::span<const double> b);

struct QuantileMetrics {
    double q = 0.0;
    double q_risk = 0.0;
    Confusion counts;
    double precision = 0.0;
    double recall = 0.0;
    double f_beta = 0.0;
    bool precision_defaulted = false;
    bool recall_defaulted = false;
};

struct Interval {
    double mean = 0.0;
    double half_width = 0.0;
};

/// Mean and 1.96 s / sqrt(n) (sample std); zero width for n = 1.
Interval mean_ci(std::span<const double> xs);

struct QuantileSummary {
    double q = 0.0;
    Interval q_risk, tp, fp, fn, tn, precision, recall, f_beta;
};

struct EvalReport {
    std::vector<std::vector<QuantileMetrics>> runs; // [repetition][quantile]
    std::vector<QuantileSummary> summary;
    std::size_t windows = 0;

    int repetitions() const { return static_cast<int>(runs.size()); }
};

/// Decision per window: violation_sign of forecast column `column`.
std::vector<int> decisions(std::span<const QuantileForecast> forecasts, std::size_t column);
/// Truth per window: violation_sign of the true future (original units).
std::vector<int> truths(std::span<const WindowSample> windows);

std::vector<QuantileMetrics> evaluate_forecasts(std::span<const WindowSample> windows,
                                                std::span<const QuantileForecast> forecasts,
                                                const QuantileGrid& grid);

EvalReport summarize(std::vector<std::vector<QuantileMetrics>> runs, std::size_t windows);

/// Single model, single run. Stochastic models need a seed.
EvalReport evaluate(const fc::Forecaster& model, std::span<const WindowSample> windows,
                    const QuantileGrid& grid, std::optional<std::uint64_t> mc_seed = std::nullopt);

/// Retrains via `make_model(repetition)` for each repetition and pools the
/// per-run metrics into mean +- half-width.
EvalReport evaluate_repeated(const std::function<fc::TrainedForecaster(int)>& make_model,
                             int repetitions, std::span<const WindowSample> windows,
                             const QuantileGrid& grid, std::uint64_t mc_seed,
                             std::size_t workers = 1);

/// Per-episode confusion at one forecast column, keyed by episode id.
std::map<std::string, Confusion> per_episode(std::span<const WindowSample> windows,
                                             std::span<const QuantileForecast> forecasts,
                                             std::size_t column);

void write_report(const EvalReport& r, std::ostream& out);

struct BenchReport {
    std::string family;
    int horizon = 0;
    int context_multiplier = 0;
    int iterations = 0;
    double mean_ms = 0.0;
    double median_ms = 0.0;
    double p99_ms = 0.0;
    std::size_t parameter_bytes = 0;
    std::size_t peak_alloc_bytes = 0;
    bool peak_measured = false; // false: analytic bound
};

BenchReport bench(const fc::TrainedForecaster& model, const WindowSample& sample,
                  const QuantileGrid& grid, int warmup = 50, int iters = 500,
                  std::uint64_t mc_seed = 1);

struct SweepRow {
    fc::Family family = fc::Family::Persistence;
    int horizon = 0;
    int context_multiplier = 0;
    int total_window = 0;
    EvalReport report;
    BenchReport bench;
};

struct SweepOptions {
    std::vector<fc::Family> families{fc::Family::Seq2Seq};
    std::vector<int> horizons{3, 12};
    std::vector<int> multipliers{1, 3, 9};
    std::string target = "cte";
    QuantileGrid grid = QuantileGrid::standard();
    int epochs = 100;
    int patience = 10;
    int train_stride = 1;
    int eval_stride = 1;
    std::uint64_t seed = 1;
    int bench_warmup = 50;
    int bench_iters = 500;
    std::size_t workers = 1;
};

struct SweepResult {
    std::vector<SweepRow> rows;
    std::vector<std::string> warnings;
};

SweepResult sweep(const std::vector<Episode>& episodes, const SweepOptions& opts);

void write_sweep(const SweepResult& r, std::ostream& out);

} // namespace safemon::eval
