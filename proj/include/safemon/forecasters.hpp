#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "safemon/core.hpp"
#include "safemon/dataset.hpp"
#include "safemon/nn/tape.hpp"

namespace safemon::fc {

enum class Family { Persistence, Seq2Seq, ConvSeq2Seq, ArRnn, AttnSeq2Seq };

std::string to_string(Family f);
Family parse_family(const std::string& name);
bool is_neural(Family f);
std::vector<Family> neural_families();

using HyperValue = std::variant<double, std::string>;
using HyperMap = std::map<std::string, HyperValue>;
using HyperGrid = std::map<std::string, std::vector<HyperValue>>;

std::string to_string(const HyperValue& v);
/// Numbers parse as double, anything else as text.
HyperValue parse_hyper_value(const std::string& text);

/// Allowed values per hyperparameter for a family:
///   all neural:        batch_size {64,128,256}, learning_rate {1e-4,1e-3,1e-2},
///                      grad_clip {1e-2,1,1e2}
///   seq2seq:           decoder_layers {1,2,4}, neurons {20,80}
///   convseq2seq:       + channels {20,40}
///   ar_rnn:            rnn_cell {gru,lstm}, rnn_nodes {40,100}, dropout {0.1,0.2,0.3}
///   attn_seq2seq:      state_size {40,80,160}, attention_heads {1,4}, dropout {0.1,0.2,0.3}
HyperGrid hyper_grid(Family f);

struct ForecasterSpec {
    Family family = Family::Persistence;
    HyperMap hyperparams;
    /// Permits values outside hyper_grid (keys must still be known).
    bool allow_off_grid = false;

    static ForecasterSpec defaults(Family f);

    void validate() const;
    double number(const std::string& key) const;
    int integer(const std::string& key) const;
    std::string text(const std::string& key) const;

    friend bool operator==(const ForecasterSpec&, const ForecasterSpec&) = default;
};

/// Everything about the data a model was trained against.
struct ModelSchema {
    WindowConfig wc{3, 3};
    QuantileGrid grid = QuantileGrid::standard();
    std::string target = "cte";
    std::vector<std::string> covariates;
    std::vector<ScenarioDim> scenario_dims;
    data::NormStats norm;
    int mc_paths = 100;

    std::size_t channels() const { return 1 + covariates.size(); }
};

/// Row-stacked model inputs.
///   statics:     B x D_x scenario scaled to [-1, 1]
///   lookback:    B x (k * (1 + D_o)), per step [target, covariates...]
///   past_target: B x k
///   future:      B x h (empty when unknown)
struct Batch {
    Matrix statics;
    Matrix lookback;
    Matrix past_target;
    Matrix future;

    Eigen::Index size() const { return statics.rows(); }
};

Batch make_batch(std::span<const WindowSample* const> samples);
Batch make_batch(std::span<const WindowSample> samples);

/// Architecture of one family. Holds parameter indices only; the parameter
/// values live in a ParamSet so the network can be shared across threads.
class Network {
public:
    virtual ~Network() = default;
    virtual Family family() const = 0;

    /// Raw network outputs: quantile heads B x (h * |Q|) for direct-quantile
    /// families; [mu | sigma] each B x (k + h - 1) teacher-forced for ar_rnn.
    virtual nn::Var forward(nn::Tape& t, const nn::ParamSet& ps, const Batch& b,
                            const nn::ForwardMode& mode) const = 0;

    /// Training objective (mean pinball over the model grid, or mean NLL).
    virtual nn::Var loss(nn::Tape& t, const nn::ParamSet& ps, const Batch& b,
                         const nn::ForwardMode& mode) const = 0;

    /// Normalized quantiles, B x (h * |grid|), quantile index fastest; rows
    /// are not yet sorted.
    virtual Matrix predict(const nn::ParamSet& ps, const Batch& b, const QuantileGrid& grid,
                           std::span<const std::uint64_t> mc_seeds) const = 0;

    virtual bool stochastic() const { return false; }
};

/// Builds the network for `spec` and appends its freshly initialized
/// parameters (seeded) to `params`.
std::unique_ptr<Network> build_network(const ForecasterSpec& spec, const ModelSchema& schema,
                                       nn::ParamSet& params, std::uint64_t init_seed);

/// Quantile level -> order statistic, ceil(q * n)-th smallest (1-based).
double empirical_quantile(std::span<double> sorted_values, double q);

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
};

struct TrainingRecord {
    std::vector<EpochLog> log;
    int best_epoch = 0;
    std::map<std::string, std::string> meta;
};

class Forecaster {
public:
    virtual ~Forecaster() = default;

    /// h x |grid| forecast in original units with rows sorted ascending.
    virtual QuantileForecast predict(const WindowSample& sample, const QuantileGrid& grid,
                                     std::optional<std::uint64_t> mc_seed = std::nullopt) const = 0;

    /// Batched predict. Stochastic models derive window i's seed from
    /// (base_seed, i).
    virtual std::vector<QuantileForecast> predict_many(std::span<const WindowSample> samples,
                                                       const QuantileGrid& grid,
                                                       std::optional<std::uint64_t> base_seed) const;

    virtual const WindowConfig& window() const = 0;
    virtual const QuantileGrid& grid() const = 0;
    virtual std::size_t covariate_count() const = 0;
    virtual bool needs_mc_seed() const { return false; }
};

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

class TrainedForecaster final : public Forecaster {
public:
    TrainedForecaster(ForecasterSpec spec, ModelSchema schema, nn::ParamSet params,
                      TrainingRecord record);

    QuantileForecast predict(const WindowSample& sample, const QuantileGrid& grid,
                             std::optional<std::uint64_t> mc_seed = std::nullopt) const override;
    std::vector<QuantileForecast> predict_many(std::span<const WindowSample> samples,
                                               const QuantileGrid& grid,
                                               std::optional<std::uint64_t> base_seed) const override;

    const WindowConfig& window() const override { return schema_.wc; }
    const QuantileGrid& grid() const override { return schema_.grid; }
    std::size_t covariate_count() const override { return schema_.covariates.size(); }
    bool needs_mc_seed() const override { return net_->stochastic(); }

    const ForecasterSpec& spec() const { return spec_; }
    const ModelSchema& schema() const { return schema_; }
    const nn::ParamSet& params() const { return params_; }
    const TrainingRecord& record() const { return record_; }
    const Network& network() const { return *net_; }

    std::size_t parameter_count() const { return params_.scalar_count(); }
    std::size_t parameter_bytes() const { return parameter_count() * sizeof(double); }

private:
    std::vector<QuantileForecast> finish(const Matrix& normalized,
                                         std::span<const WindowSample> samples,
                                         const QuantileGrid& grid) const;

    ForecasterSpec spec_;
    ModelSchema schema_;
    nn::ParamSet params_;
    TrainingRecord record_;
    std::shared_ptr<const Network> net_;
};

/// Persistence baseline ready for use (no training needed).
TrainedForecaster make_persistence(const ModelSchema& schema);

// Checkpoint: "SMCK" magic, u32 version, u64 header length, JSON header
// (spec, schema, record, parameter names/shapes), then raw little-endian
// float64 parameter data in header order. Round-trips bit-exactly.
std::string serialize_checkpoint(const TrainedForecaster& model);
TrainedForecaster deserialize_checkpoint(const std::string& bytes);
void save_checkpoint(const TrainedForecaster& model, const std::string& path);
TrainedForecaster load_checkpoint(const std::string& path);

} // namespace safemon::fc
