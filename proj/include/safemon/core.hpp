#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace safemon {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw Error(msg);
}

enum class DimKind : std::uint8_t { Continuous, CategoricalAsReal };

struct ScenarioDim {
    std::string name;
    double lo = 0.0;
    double hi = 1.0;
    DimKind kind = DimKind::Continuous;
};

/// Static operational context of one execution. Values are validated against
/// the declared ranges on construction.
class Scenario {
public:
    Scenario() = default;
    Scenario(std::vector<double> values, std::vector<ScenarioDim> dims);

    const std::vector<double>& values() const { return values_; }
    const std::vector<ScenarioDim>& dims() const { return dims_; }
    std::size_t size() const { return values_.size(); }
    double operator[](std::size_t i) const { return values_[i]; }

    /// Index of the named dimension; throws if absent.
    std::size_t index_of(const std::string& name) const;

    /// Values mapped affinely from [lo, hi] onto [-1, 1].
    std::vector<double> scaled() const;

    friend bool operator==(const Scenario&, const Scenario&);

private:
    std::vector<double> values_;
    std::vector<ScenarioDim> dims_;
};

bool operator==(const ScenarioDim& a, const ScenarioDim& b);

/// Time-of-day, cloud cover, starting cross-track error (m) and starting
/// heading error (degrees).
std::vector<ScenarioDim> default_scenario_dims();

struct SafetyRequirement {
    std::string name;
    std::size_t channel = 0;   // column of Episode::raw_state
    double threshold = 1.0;

    void validate() const;

    friend bool operator==(const SafetyRequirement&, const SafetyRequirement&) = default;
};

/// cte (5 m on raw_state column 0) and he (5 degrees on column 1).
std::vector<SafetyRequirement> default_requirements();

/// One simulated execution. Columns of each matrix are channels, rows are
/// timesteps; safety_metric carries one column per requirement.
struct Episode {
    std::string id;
    Scenario scenario;
    double dt_seconds = 1.0;
    std::vector<std::string> lc_names;
    Matrix lc_outputs;
    std::vector<std::string> state_names;
    Matrix raw_state;
    std::vector<SafetyRequirement> requirements;
    Matrix safety_metric;

    std::size_t length() const { return static_cast<std::size_t>(raw_state.rows()); }
    std::size_t requirement_index(const std::string& name) const;

    /// Checks shared lengths, dt > 0, and that every metric column equals the
    /// safety metric recomputed from raw_state.
    void validate() const;

    friend bool operator==(const Episode&, const Episode&);
};

class WindowConfig {
public:
    WindowConfig(int horizon, int context_multiplier);

    int horizon() const { return h_; }
    int context_multiplier() const { return cm_; }
    int lookback() const { return h_ * cm_; }
    int total() const { return h_ + h_ * cm_; }

    friend bool operator==(const WindowConfig&, const WindowConfig&) = default;

private:
    int h_;
    int cm_;
};

class QuantileGrid {
public:
    explicit QuantileGrid(std::vector<double> qs);

    /// {0.005, 0.025, 0.05, 0.5, 0.95, 0.975, 0.995}
    static QuantileGrid standard();

    const std::vector<double>& values() const { return qs_; }
    std::size_t size() const { return qs_.size(); }
    double operator[](std::size_t i) const { return qs_[i]; }

    /// Column of q in the grid (exact match within 1e-12), if present.
    std::optional<std::size_t> find(double q) const;

    friend bool operator==(const QuantileGrid&, const QuantileGrid&) = default;

private:
    std::vector<double> qs_;
};

QuantileGrid parse_quantile_list(const std::string& csv);

/// h x |Q| predicted safety-metric quantiles in original units.
struct QuantileForecast {
    Matrix values;
    std::vector<double> quantiles;
    long origin_t = 0;

    /// Column j as a length-h sequence.
    std::vector<double> column(std::size_t j) const;
    bool non_crossing() const;
};

struct Denorm {
    double mean = 0.0;
    double std = 1.0;

    double apply(double z) const { return z * std + mean; }
};

/// Model input: k normalized past targets and covariates, h normalized future
/// targets, and the static scenario.
struct WindowSample {
    Scenario scenario;
    std::vector<double> past_target;   // k
    Matrix past_covariates;            // k x D_o
    std::vector<double> future_target; // h (empty when unknown)
    std::vector<double> future_original; // same targets in original units
    Denorm denorm;
    std::string episode_id;
    long origin_t = 0; // index of the last lookback step

    void check(const WindowConfig& wc, std::size_t n_covariates) const;
};

/// |actual| - threshold; negative is safe, zero or positive is a violation.
double safety_metric_fn(double actual, double threshold);

/// +1 if any entry is >= 0 (violation within the horizon), else -1.
int violation_sign(std::span<const double> horizon);

/// 1-based position of the first entry >= 0.
std::optional<int> first_violation_index(std::span<const double> horizon);

} // namespace safemon
