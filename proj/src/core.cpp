#include "safemon/core.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <fmt/format.h>

namespace safemon {

bool operator==(const ScenarioDim& a, const ScenarioDim& b) {
    return a.name == b.name && a.lo == b.lo && a.hi == b.hi && a.kind == b.kind;
}

Scenario::Scenario(std::vector<double> values, std::vector<ScenarioDim> dims)
    : values_(std::move(values)), dims_(std::move(dims)) {
    require(values_.size() == dims_.size(),
            fmt::format("scenario has {} values for {} dims", values_.size(), dims_.size()));
    for (std::size_t i = 0; i < dims_.size(); ++i) {
        const auto& d = dims_[i];
        require(d.lo <= d.hi, fmt::format("scenario dim '{}' has lo > hi", d.name));
        require(values_[i] >= d.lo && values_[i] <= d.hi,
                fmt::format("scenario value {} for '{}' outside [{}, {}]", values_[i], d.name,
                            d.lo, d.hi));
    }
}

std::size_t Scenario::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < dims_.size(); ++i)
        if (dims_[i].name == name) return i;
    throw Error(fmt::format("scenario has no dimension '{}'", name));
}

std::vector<double> Scenario::scaled() const {
    std::vector<double> out(values_.size());
    for (std::size_t i = 0; i < values_.size(); ++i) {
        const double span = dims_[i].hi - dims_[i].lo;
        out[i] = span > 0.0 ? 2.0 * (values_[i] - dims_[i].lo) / span - 1.0 : 0.0;
    }
    return out;
}

bool operator==(const Scenario& a, const Scenario& b) {
    return a.values_ == b.values_ && a.dims_ == b.dims_;
}

std::vector<ScenarioDim> default_scenario_dims() {
    return {
        {"time_of_day", 0.0, 1.0, DimKind::CategoricalAsReal},
        {"cloud_cover", 0.0, 1.0, DimKind::CategoricalAsReal},
        {"cte_start", -8.0, 8.0, DimKind::Continuous},
        {"he_start", -10.0, 10.0, DimKind::Continuous},
    };
}

void SafetyRequirement::validate() const {
    require(threshold > 0.0, fmt::format("requirement '{}' threshold must be > 0", name));
}

std::vector<SafetyRequirement> default_requirements() {
    return {{"cte", 0, 5.0}, {"he", 1, 5.0}};
}

std::size_t Episode::requirement_index(const std::string& name) const {
    for (std::size_t i = 0; i < requirements.size(); ++i)
        if (requirements[i].name == name) return i;
    throw Error(fmt::format("episode '{}' has no requirement '{}'", id, name));
}

void Episode::validate() const {
    const auto t = raw_state.rows();
    require(t >= 1, fmt::format("episode '{}' is empty", id));
    require(dt_seconds > 0.0, fmt::format("episode '{}' dt must be > 0", id));
    require(lc_outputs.rows() == t && safety_metric.rows() == t,
            fmt::format("episode '{}' series lengths differ", id));
    require(static_cast<std::size_t>(lc_outputs.cols()) == lc_names.size() &&
                static_cast<std::size_t>(raw_state.cols()) == state_names.size() &&
                static_cast<std::size_t>(safety_metric.cols()) == requirements.size(),
            fmt::format("episode '{}' column names do not match data", id));
    for (std::size_t r = 0; r < requirements.size(); ++r) {
        const auto& req = requirements[r];
        req.validate();
        require(req.channel < state_names.size(),
                fmt::format("requirement '{}' channel out of range", req.name));
        for (Eigen::Index i = 0; i < t; ++i) {
            const double expect = safety_metric_fn(raw_state(i, static_cast<Eigen::Index>(req.channel)),
                                                   req.threshold);
            require(safety_metric(i, static_cast<Eigen::Index>(r)) == expect,
                    fmt::format("episode '{}' metric '{}' inconsistent with raw state at t={}", id,
                                req.name, i));
        }
    }
}

namespace {
bool same(const Matrix& a, const Matrix& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() && (a.size() == 0 || a == b);
}
} // namespace

bool operator==(const Episode& a, const Episode& b) {
    return a.id == b.id && a.scenario == b.scenario && a.dt_seconds == b.dt_seconds &&
           a.lc_names == b.lc_names && same(a.lc_outputs, b.lc_outputs) &&
           a.state_names == b.state_names && same(a.raw_state, b.raw_state) &&
           a.requirements == b.requirements && same(a.safety_metric, b.safety_metric);
}

WindowConfig::WindowConfig(int horizon, int context_multiplier)
    : h_(horizon), cm_(context_multiplier) {
    require(h_ >= 1, "window horizon must be >= 1");
    require(cm_ >= 1, "context multiplier must be >= 1");
}

QuantileGrid::QuantileGrid(std::vector<double> qs) : qs_(std::move(qs)) {
    require(!qs_.empty(), "quantile grid is empty");
    for (std::size_t i = 0; i < qs_.size(); ++i) {
        require(qs_[i] > 0.0 && qs_[i] < 1.0, fmt::format("quantile {} outside (0,1)", qs_[i]));
        if (i > 0) require(qs_[i] > qs_[i - 1], "quantile grid must be strictly increasing");
    }
}

QuantileGrid QuantileGrid::standard() {
    return QuantileGrid({0.005, 0.025, 0.05, 0.5, 0.95, 0.975, 0.995});
}

std::optional<std::size_t> QuantileGrid::find(double q) const {
    for (std::size_t i = 0; i < qs_.size(); ++i)
        if (std::abs(qs_[i] - q) <= 1e-12) return i;
    return std::nullopt;
}

QuantileGrid parse_quantile_list(const std::string& csv) {
    std::vector<double> qs;
    std::stringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(tok, &used);
        } catch (const std::exception&) {
            throw Error(fmt::format("bad quantile '{}'", tok));
        }
        require(used == tok.size(), fmt::format("bad quantile '{}'", tok));
        qs.push_back(v);
    }
    return QuantileGrid(std::move(qs));
}

std::vector<double> QuantileForecast::column(std::size_t j) const {
    std::vector<double> out(static_cast<std::size_t>(values.rows()));
    for (Eigen::Index i = 0; i < values.rows(); ++i)
        out[static_cast<std::size_t>(i)] = values(i, static_cast<Eigen::Index>(j));
    return out;
}

bool QuantileForecast::non_crossing() const {
    for (Eigen::Index i = 0; i < values.rows(); ++i)
        for (Eigen::Index j = 1; j < values.cols(); ++j)
            if (values(i, j) < values(i, j - 1)) return false;
    return true;
}

void WindowSample::check(const WindowConfig& wc, std::size_t n_covariates) const {
    const auto k = static_cast<std::size_t>(wc.lookback());
    require(past_target.size() == k,
            fmt::format("window has {} past targets, model expects {}", past_target.size(), k));
    require(static_cast<std::size_t>(past_covariates.rows()) == k &&
                static_cast<std::size_t>(past_covariates.cols()) == n_covariates,
            fmt::format("window covariates are {}x{}, model expects {}x{}", past_covariates.rows(),
                        past_covariates.cols(), k, n_covariates));
    require(future_target.empty() ||
                future_target.size() == static_cast<std::size_t>(wc.horizon()),
            "window future target length does not match horizon");
    require(denorm.std > 0.0, "window denorm std must be > 0");
}

double safety_metric_fn(double actual, double threshold) {
    require(threshold > 0.0, "safety threshold must be > 0");
    return std::abs(actual) - threshold;
}

int violation_sign(std::span<const double> horizon) {
    require(!horizon.empty(), "empty horizon");
    return *std::max_element(horizon.begin(), horizon.end()) >= 0.0 ? +1 : -1;
}

std::optional<int> first_violation_index(std::span<const double> horizon) {
    for (std::size_t i = 0; i < horizon.size(); ++i)
        if (horizon[i] >= 0.0) return static_cast<int>(i) + 1;
    return std::nullopt;
}

} // namespace safemon
