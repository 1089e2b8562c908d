#include "safemon/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>

#include <fmt/format.h>

#include "safemon/evaluation.hpp"
#include "safemon/parallel.hpp"

namespace safemon::train {

double pinball_loss(double y, double yhat, double q) {
    require(q > 0.0 && q < 1.0, fmt::format("quantile {} outside (0, 1)", q));
    const double d = y - yhat;
    return d >= 0.0 ? q * d : (q - 1.0) * d;
}

double gaussian_nll(double y, double mu, double sigma) {
    require(sigma > 0.0, "sigma must be positive");
    const double s = std::max(sigma, 1e-6);
    const double r = y - mu;
    return 0.5 * std::log(2.0 * M_PI) + std::log(s) + r * r / (2.0 * s * s);
}

double global_norm(const nn::Grads& g) {
    double sq = 0.0;
    for (const auto& m : g)
        if (m.size() > 0) sq += m.squaredNorm();
    return std::sqrt(sq);
}

double clip_by_global_norm(nn::Grads& g, double clip) {
    require(clip > 0.0, "clip norm must be positive");
    const double norm = global_norm(g);
    if (norm > clip) {
        const double s = clip / norm;
        for (auto& m : g) m *= s;
    }
    return norm;
}

void adam_step(nn::ParamSet& params, const nn::Grads& grads, AdamState& st, double lr, double beta1,
               double beta2, double eps) {
    if (st.m.empty()) {
        st.m = params.zeros_like();
        st.v = params.zeros_like();
    }
    require(st.m.size() == params.size(), "optimizer state does not match the parameters");
    ++st.step;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(st.step));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(st.step));
    for (std::size_t i = 0; i < params.size() && i < grads.size(); ++i) {
        const Matrix& g = grads[i];
        if (g.size() == 0) continue;
        Matrix& p = params[i].value;
        require(g.rows() == p.rows() && g.cols() == p.cols(),
                fmt::format("gradient shape mismatch for '{}'", params[i].name));
        st.m[i] = beta1 * st.m[i] + (1.0 - beta1) * g;
        st.v[i] = beta2 * st.v[i] + (1.0 - beta2) * g.cwiseProduct(g);
        p.array() -= lr * (st.m[i].array() / c1) / ((st.v[i].array() / c2).sqrt() + eps);
    }
}

void TrainConfig::validate() const {
    require(epochs >= 1, "epochs must be >= 1");
    require(batch_size >= 1, "batch size must be >= 1");
    require(learning_rate > 0.0, "learning rate must be positive");
    require(grad_clip > 0.0, "gradient clip norm must be positive");
    require(patience >= 1, "patience must be >= 1");
    if (fixed_epochs) require(*fixed_epochs >= 1, "fixed epoch count must be >= 1");
}

TrainConfig TrainConfig::from_spec(const fc::ForecasterSpec& spec, int epochs, int patience,
                                   std::uint64_t seed) {
    TrainConfig c;
    c.epochs = epochs;
    c.patience = patience;
    c.seed = seed;
    if (fc::is_neural(spec.family)) {
        c.batch_size = spec.integer("batch_size");
        c.learning_rate = spec.number("learning_rate");
        c.grad_clip = spec.number("grad_clip");
    }
    return c;
}

double mean_loss(const fc::Network& net, const nn::ParamSet& params,
                 std::span<const WindowSample> windows) {
    require(!windows.empty(), "mean_loss over no windows");
    constexpr std::size_t kChunk = 512;
    double total = 0.0;
    for (std::size_t at = 0; at < windows.size(); at += kChunk) {
        const auto chunk = windows.subspan(at, std::min(kChunk, windows.size() - at));
        const fc::Batch b = fc::make_batch(chunk);
        nn::Tape t(false);
        const auto loss = net.loss(t, params, b, nn::ForwardMode{});
        total += t.value(loss)(0, 0) * static_cast<double>(chunk.size());
    }
    return total / static_cast<double>(windows.size());
}

fc::TrainedForecaster fit(const fc::ForecasterSpec& spec, const fc::ModelSchema& schema,
                          std::span<const WindowSample> train, std::span<const WindowSample> val,
                          const TrainConfig& cfg, const EpochCallback& on_epoch) {
    require(!train.empty(), "fit needs at least one training window");
    if (!fc::is_neural(spec.family)) return fc::make_persistence(schema);
    cfg.validate();
    nn::ParamSet ps;
    const auto net = fc::build_network(spec, schema, ps, fc::derive_seed(cfg.seed, 0));
    std::mt19937_64 shuffle_rng(fc::derive_seed(cfg.seed, 1));
    std::mt19937_64 dropout_rng(fc::derive_seed(cfg.seed, 2));
    const auto selection = val.empty() ? train : val;
    const int epochs = cfg.fixed_epochs.value_or(cfg.epochs);

    fc::TrainingRecord rec;
    fc::EpochLog first{0, mean_loss(*net, ps, train), mean_loss(*net, ps, selection)};
    require(std::isfinite(first.val_loss), "initial validation loss is not finite");
    rec.log.push_back(first);
    if (on_epoch) on_epoch(first);
    double best = first.val_loss;
    nn::ParamSet best_params = ps;

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<const WindowSample*> ptrs;
    AdamState adam;
    const auto bs = static_cast<std::size_t>(cfg.batch_size);
    int epochs_run = 0;
    for (int epoch = 1; epoch <= epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double train_total = 0.0;
        for (std::size_t at = 0; at < order.size(); at += bs) {
            const std::size_t n = std::min(bs, order.size() - at);
            ptrs.clear();
            for (std::size_t i = 0; i < n; ++i) ptrs.push_back(&train[order[at + i]]);
            const fc::Batch b = fc::make_batch(std::span<const WindowSample* const>(ptrs));
            nn::Tape t;
            const auto loss = net->loss(t, ps, b, nn::ForwardMode{true, &dropout_rng});
            const double lv = t.value(loss)(0, 0);
            if (!std::isfinite(lv)) throw Error(fmt::format("training diverged at epoch {}: non-finite loss", epoch));
            nn::Grads g;
            try {
                t.backward(loss, g);
            } catch (const Error& e) {
                throw Error(fmt::format("training diverged at epoch {}: {}", epoch, e.what()));
            }
            clip_by_global_norm(g, cfg.grad_clip);
            adam_step(ps, g, adam, cfg.learning_rate);
            train_total += lv * static_cast<double>(n);
        }
        epochs_run = epoch;
        fc::EpochLog log{epoch, train_total / static_cast<double>(train.size()), 0.0};
        try {
            log.val_loss = mean_loss(*net, ps, selection);
        } catch (const Error& e) {
            throw Error(fmt::format("training diverged at epoch {}: {}", epoch, e.what()));
        }
        if (!std::isfinite(log.val_loss))
            throw Error(fmt::format("training diverged at epoch {}: validation loss is not finite", epoch));
        rec.log.push_back(log);
        if (on_epoch) on_epoch(log);
        if (cfg.fixed_epochs) continue;
        if (log.val_loss < best) {
            best = log.val_loss;
            best_params = ps;
            rec.best_epoch = epoch;
        } else if (epoch - rec.best_epoch >= cfg.patience) {
            break;
        }
    }
    if (cfg.fixed_epochs) {
        best_params = ps;
        rec.best_epoch = epochs_run;
    }
    rec.meta = cfg.meta;
    rec.meta["family"] = fc::to_string(spec.family);
    rec.meta["epochs"] = std::to_string(cfg.epochs);
    rec.meta["patience"] = std::to_string(cfg.patience);
    rec.meta["seed"] = std::to_string(cfg.seed);
    rec.meta["epochs_run"] = std::to_string(epochs_run);
    rec.meta["train_windows"] = std::to_string(train.size());
    rec.meta["val_windows"] = std::to_string(val.size());
    return fc::TrainedForecaster(spec, schema, std::move(best_params), std::move(rec));
}

fc::ModelSchema make_schema(const data::PreparedData& d, const WindowConfig& wc,
                            const std::string& target, std::vector<ScenarioDim> dims) {
    fc::ModelSchema s;
    s.wc = wc;
    s.target = target;
    s.covariates = d.covariate_names;
    s.scenario_dims = std::move(dims);
    s.norm = d.norm;
    return s;
}

std::vector<fc::HyperMap> expand_grid(const fc::HyperGrid& grid) {
    std::vector<fc::HyperMap> out{fc::HyperMap{}};
    for (const auto& [key, values] : grid) {
        require(!values.empty(), fmt::format("grid axis '{}' is empty", key));
        std::vector<fc::HyperMap> next;
        for (const auto& partial : out)
            for (const auto& v : values) {
                auto m = partial;
                m[key] = v;
                next.push_back(std::move(m));
            }
        out = std::move(next);
    }
    return out;
}

TuneResult grid_tune(fc::Family family, const fc::HyperGrid& grid, const fc::ModelSchema& schema,
                     std::span<const WindowSample> train, std::span<const WindowSample> val,
                     const TuneOptions& opts) {
    require(opts.repetitions >= 1, "repetitions must be >= 1");
    require(!val.empty(), "tuning needs validation windows");
    auto configs = expand_grid(grid);
    require(!configs.empty(), "empty tuning grid");
    // Axes left out of the grid keep the family defaults.
    const auto defaults = fc::ForecasterSpec::defaults(family).hyperparams;
    for (auto& c : configs)
        for (const auto& [k, v] : defaults) c.emplace(k, v);
    const std::size_t reps = static_cast<std::size_t>(opts.repetitions);
    TuneResult res;
    res.rows.resize(configs.size() * reps);
    parallel_for(res.rows.size(), opts.workers, [&](std::size_t job) {
        TuneRow& row = res.rows[job];
        row.config_index = job / reps;
        row.repetition = static_cast<int>(job % reps);
        row.config = configs[row.config_index];
        row.seed = fc::derive_seed(opts.seed, job);
        fc::ForecasterSpec spec{family, row.config, true};
        try {
            const auto cfg = TrainConfig::from_spec(spec, opts.epochs, opts.patience, row.seed);
            const auto model = fit(spec, schema, train, val, cfg);
            row.best_epoch = model.record().best_epoch;
            const auto fcs = model.predict_many(val, opts.eval_grid, fc::derive_seed(row.seed, 99));
            double sum = 0.0;
            for (std::size_t j = 0; j < opts.eval_grid.size(); ++j)
                sum += eval::q_risk(val, fcs, j, opts.eval_grid[j]);
            row.val_qrisk_sum = sum;
            if (!std::isfinite(sum)) {
                row.diverged = true;
                row.error = "non-finite validation q-Risk";
            }
        } catch (const Error& e) {
            row.diverged = true;
            row.error = e.what();
        }
    });

    res.summary.resize(configs.size());
    for (std::size_t c = 0; c < configs.size(); ++c) {
        auto& s = res.summary[c];
        s.config = configs[c];
        std::vector<double> vals;
        for (std::size_t r = 0; r < reps; ++r) {
            const auto& row = res.rows[c * reps + r];
            if (row.diverged) ++s.diverged;
            else vals.push_back(row.val_qrisk_sum);
        }
        if (s.diverged == 0) {
            const auto ci = eval::mean_ci(vals);
            s.mean = ci.mean;
            s.half_width = ci.half_width;
        } else {
            s.mean = std::numeric_limits<double>::infinity();
        }
    }
    std::vector<std::size_t> idx(configs.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        const auto& sa = res.summary[a];
        const auto& sb = res.summary[b];
        if ((sa.diverged > 0) != (sb.diverged > 0)) return sa.diverged == 0;
        return sa.mean < sb.mean;
    });
    for (std::size_t r = 0; r < idx.size(); ++r) res.summary[idx[r]].rank = static_cast<int>(r + 1);
    const std::size_t win = idx.front();
    res.best = fc::ForecasterSpec{family, configs[win], true};
    res.best_mean = res.summary[win].mean;
    std::vector<int> epochs;
    for (std::size_t r = 0; r < reps; ++r) epochs.push_back(res.rows[win * reps + r].best_epoch);
    std::sort(epochs.begin(), epochs.end());
    res.best_epoch = epochs[epochs.size() / 2];
    return res;
}

void write_tune_report(const TuneResult& r, std::ostream& out) {
    std::vector<std::string> keys;
    if (!r.summary.empty())
        for (const auto& [k, v] : r.summary.front().config) keys.push_back(k);
    out << "config";
    for (const auto& k : keys) out << ',' << k;
    out << ",repetition,seed,val_qrisk_sum,best_epoch,status,mean_val_qrisk_sum,ci_half_width,rank\n";
    for (const auto& row : r.rows) {
        const auto& s = r.summary[row.config_index];
        out << row.config_index;
        for (const auto& k : keys) out << ',' << fc::to_string(row.config.at(k));
        out << fmt::format(",{},{},{:.10g},{},{},{:.10g},{:.10g},{}\n", row.repetition, row.seed,
                           row.diverged ? std::nan("") : row.val_qrisk_sum, row.best_epoch,
                           row.diverged ? "diverged" : "ok", s.mean, s.half_width, s.rank);
    }
}

} // namespace safemon::train
