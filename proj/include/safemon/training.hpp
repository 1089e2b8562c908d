#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <vector>

#include "safemon/forecasters.hpp"

namespace safemon::train {

double pinball_loss(double y, double yhat, double q);
double gaussian_nll(double y, double mu, double sigma);

double global_norm(const nn::Grads& g);
/// Scales g in place so its global L2 norm is at most `clip`; returns the
/// norm before clipping.
double clip_by_global_norm(nn::Grads& g, double clip);

struct AdamState {
    std::vector<Matrix> m;
    std::vector<Matrix> v;
    long step = 0;
};

void adam_step(nn::ParamSet& params, const nn::Grads& grads, AdamState& state, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

struct TrainConfig {
    int epochs = 100;
    int batch_size = 128;
    double learning_rate = 1e-3;
    double grad_clip = 1.0;
    int patience = 10;
    std::uint64_t seed = 1;
    /// Train for exactly this many epochs without early stopping and keep the
    /// final parameters (used when refitting on train + val).
    std::optional<int> fixed_epochs;
    /// Copied into the training record.
    std::map<std::string, std::string> meta;

    void validate() const;

    /// Batch size, learning rate and clip taken from the spec's hyperparameters.
    static TrainConfig from_spec(const fc::ForecasterSpec& spec, int epochs, int patience,
                                 std::uint64_t seed);
};

using EpochCallback = std::function<void(const fc::EpochLog&)>;

/// Best-validation-epoch training. Epoch 0 in the log is the untrained model.
fc::TrainedForecaster fit(const fc::ForecasterSpec& spec, const fc::ModelSchema& schema,
                          std::span<const WindowSample> train, std::span<const WindowSample> val,
                          const TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// Mean training objective over `windows` in evaluation mode.
double mean_loss(const fc::Network& net, const nn::ParamSet& params,
                 std::span<const WindowSample> windows);

/// Schema for models trained on `d`.
fc::ModelSchema make_schema(const data::PreparedData& d, const WindowConfig& wc,
                            const std::string& target, std::vector<ScenarioDim> dims);

std::vector<fc::HyperMap> expand_grid(const fc::HyperGrid& grid);

struct TuneOptions {
    int repetitions = 5;
    int epochs = 100;
    int patience = 10;
    std::uint64_t seed = 1;
    std::size_t workers = 1;
    QuantileGrid eval_grid = QuantileGrid::standard();
};

struct TuneRow {
    std::size_t config_index = 0;
    fc::HyperMap config;
    int repetition = 0;
    std::uint64_t seed = 0;
    double val_qrisk_sum = 0.0;
    int best_epoch = 0;
    bool diverged = false;
    std::string error;
};

struct TuneSummary {
    fc::HyperMap config;
    double mean = 0.0;
    double half_width = 0.0;
    int diverged = 0;
    int rank = 0;
};

struct TuneResult {
    fc::ForecasterSpec best;
    double best_mean = 0.0;
    int best_epoch = 0; // median best epoch of the winner's repetitions
    std::vector<TuneRow> rows;
    std::vector<TuneSummary> summary; // in grid order
};

/// Trains every grid point `repetitions` times (axes missing from `grid` take
/// the family defaults) and ranks by the mean over
/// repetitions of the validation q-Risk summed over `eval_grid`. Diverged
/// configurations rank last.
TuneResult grid_tune(fc::Family family, const fc::HyperGrid& grid, const fc::ModelSchema& schema,
                     std::span<const WindowSample> train, std::span<const WindowSample> val,
                     const TuneOptions& opts);

/// One CSV row per (configuration, repetition).
void write_tune_report(const TuneResult& r, std::ostream& out);

} // namespace safemon::train
