#include "safemon/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>

#include <fmt/format.h>

#include "safemon/alloc_stats.hpp"
#include "safemon/parallel.hpp"

namespace safemon::eval {

double q_risk(std::span<const WindowSample> windows, std::span<const QuantileForecast> forecasts,
              std::size_t column, double q) {
    require(windows.size() == forecasts.size(), "q_risk: forecasts and windows are not aligned");
    double loss = 0.0;
    double scale = 0.0;
    for (std::size_t i = 0; i < windows.size(); ++i) {
        const auto& y = windows[i].future_original;
        const auto& f = forecasts[i].values;
        require(static_cast<Eigen::Index>(y.size()) == f.rows() &&
                    static_cast<Eigen::Index>(column) < f.cols(),
                "q_risk: forecast shape does not match the window");
        for (std::size_t s = 0; s < y.size(); ++s) {
            loss += train::pinball_loss(y[s], f(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(column)), q);
            scale += std::abs(y[s]);
        }
    }
    if (scale <= 1e-12) throw Error("degenerate test set");
    return 2.0 * loss / scale;
}

double q_risk(std::span<const WindowSample> windows, std::span<const QuantileForecast> forecasts,
              double q) {
    require(!forecasts.empty(), "q_risk over no forecasts");
    const auto& qs = forecasts.front().quantiles;
    for (std::size_t j = 0; j < qs.size(); ++j)
        if (std::abs(qs[j] - q) <= 1e-12) return q_risk(windows, forecasts, j, q);
    throw Error(fmt::format("quantile {} is not in the forecasts", q));
}

double Confusion::precision() const {
    if (tp + fp == 0) return fn == 0 ? 1.0 : 0.0;
    return static_cast<double>(tp) / static_cast<double>(tp + fp);
}

double Confusion::recall() const {
    if (tp + fn == 0) return 1.0;
    return static_cast<double>(tp) / static_cast<double>(tp + fn);
}

Confusion& Confusion::operator+=(const Confusion& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
}

Confusion confusion(std::span<const int> decisions, std::span<const int> truths) {
    require(decisions.size() == truths.size(), "confusion: length mismatch");
    Confusion c;
    for (std::size_t i = 0; i < decisions.size(); ++i) {
        const bool d = decisions[i] > 0;
        const bool t = truths[i] > 0;
        if (d && t) ++c.tp;
        else if (d) ++c.fp;
        else if (t) ++c.fn;
        else ++c.tn;
    }
    return c;
}

double f_beta(double precision, double recall, double beta) {
    require(precision >= 0.0 && precision <= 1.0 && recall >= 0.0 && recall <= 1.0,
            "precision and recall must lie in [0, 1]");
    if (precision == 0.0 && recall == 0.0) return 0.0;
    const double b2 = beta * beta;
    return (1.0 + b2) * precision * recall / (b2 * precision + recall);
}

double mann_whitney_u(std::span<const double> a, std::span<const double> b) {
    require(!a.empty() && !b.empty(), "Mann-Whitney U needs two non-empty samples");
    // Rank-sum form: O((n_a + n_b) log) instead of all pairs.
    std::vector<std::pair<double, int>> all;
    all.reserve(a.size() + b.size());
    for (double x : a) all.emplace_back(x, 0);
    for (double x : b) all.emplace_back(x, 1);
    std::sort(all.begin(), all.end());
    double rank_sum_a = 0.0;
    for (std::size_t i = 0; i < all.size();) {
        std::size_t j = i;
        while (j < all.size() && all[j].first == all[i].first) ++j;
        const double mid = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t m = i; m < j; ++m)
            if (all[m].second == 0) rank_sum_a += mid;
        i = j;
    }
    const double na = static_cast<double>(a.size());
    return rank_sum_a - na * (na + 1.0) / 2.0;
}

double mann_whitney_p(std::span<const double> a, std::span<const double> b) {
    const double u = mann_whitney_u(a, b);
    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());
    const double n = na + nb;
    std::vector<double> all(a.begin(), a.end());
    all.insert(all.end(), b.begin(), b.end());
    std::sort(all.begin(), all.end());
    double ties = 0.0;
    for (std::size_t i = 0; i < all.size();) {
        std::size_t j = i;
        while (j < all.size() && all[j] == all[i]) ++j;
        const double t = static_cast<double>(j - i);
        ties += t * t * t - t;
        i = j;
    }
    const double var = na * nb / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)));
    if (!(var > 0.0)) return 1.0;
    const double z = std::max(0.0, std::abs(u - na * nb / 2.0) - 0.5) / std::sqrt(var);
    return std::min(1.0, std::erfc(z / std::sqrt(2.0)));
}

double vargha_delaney(std::span<const double> a, std::span<const double> b) {
    return mann_whitney_u(a, b) / (static_cast<double>(a.size()) * static_cast<double>(b.size()));
}

StatTestResult compare(std::span<const double> a, std::span<const double> b) {
    StatTestResult r;
    r.u = mann_whitney_u(a, b);
    r.p_value = mann_whitney_p(a, b);
    r.a_hat = vargha_delaney(a, b);
    r.n_a = a.size();
    r.n_b = b.size();
    return r;
}

Interval mean_ci(std::span<const double> xs) {
    require(!xs.empty(), "mean_ci of an empty sample");
    const double n = static_cast<double>(xs.size());
    const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    if (xs.size() == 1) return {mean, 0.0};
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    return {mean, 1.96 * std::sqrt(ss / (n - 1.0)) / std::sqrt(n)};
}

std::vector<int> decisions(std::span<const QuantileForecast> forecasts, std::size_t column) {
    std::vector<int> out;
    out.reserve(forecasts.size());
    for (const auto& f : forecasts) {
        require(static_cast<Eigen::Index>(column) < f.values.cols(), "decision column out of range");
        const Vector col = f.values.col(static_cast<Eigen::Index>(column));
        out.push_back(violation_sign(std::span<const double>(col.data(), static_cast<std::size_t>(col.size()))));
    }
    return out;
}

std::vector<int> truths(std::span<const WindowSample> windows) {
    std::vector<int> out;
    out.reserve(windows.size());
    for (const auto& w : windows) out.push_back(violation_sign(w.future_original));
    return out;
}

std::vector<QuantileMetrics> evaluate_forecasts(std::span<const WindowSample> windows,
                                                std::span<const QuantileForecast> forecasts,
                                                const QuantileGrid& grid) {
    require(windows.size() == forecasts.size(), "evaluate: forecasts and windows are not aligned");
    require(!windows.empty(), "evaluate: no windows");
    const auto truth = truths(windows);
    std::vector<QuantileMetrics> out;
    for (std::size_t j = 0; j < grid.size(); ++j) {
        const auto& qs = forecasts.front().quantiles;
        std::size_t col = qs.size();
        for (std::size_t c = 0; c < qs.size(); ++c)
            if (std::abs(qs[c] - grid[j]) <= 1e-12) col = c;
        require(col < qs.size(), fmt::format("quantile {} is not in the forecasts", grid[j]));
        QuantileMetrics m;
        m.q = grid[j];
        m.q_risk = q_risk(windows, forecasts, col, grid[j]);
        m.counts = confusion(decisions(forecasts, col), truth);
        m.precision = m.counts.precision();
        m.recall = m.counts.recall();
        m.f_beta = f_beta(m.precision, m.recall);
        m.precision_defaulted = m.counts.precision_defaulted();
        m.recall_defaulted = m.counts.recall_defaulted();
        out.push_back(m);
    }
    return out;
}

EvalReport summarize(std::vector<std::vector<QuantileMetrics>> runs, std::size_t windows) {
    require(!runs.empty(), "summarize: no runs");
    EvalReport r;
    r.windows = windows;
    const std::size_t nq = runs.front().size();
    for (std::size_t j = 0; j < nq; ++j) {
        auto pick = [&](auto&& get) {
            std::vector<double> xs;
            for (const auto& run : runs) xs.push_back(get(run.at(j)));
            return mean_ci(xs);
        };
        QuantileSummary s;
        s.q = runs.front()[j].q;
        s.q_risk = pick([](const QuantileMetrics& m) { return m.q_risk; });
        s.tp = pick([](const QuantileMetrics& m) { return static_cast<double>(m.counts.tp); });
        s.fp = pick([](const QuantileMetrics& m) { return static_cast<double>(m.counts.fp); });
        s.fn = pick([](const QuantileMetrics& m) { return static_cast<double>(m.counts.fn); });
        s.tn = pick([](const QuantileMetrics& m) { return static_cast<double>(m.counts.tn); });
        s.precision = pick([](const QuantileMetrics& m) { return m.precision; });
        s.recall = pick([](const QuantileMetrics& m) { return m.recall; });
        s.f_beta = pick([](const QuantileMetrics& m) { return m.f_beta; });
        r.summary.push_back(s);
    }
    r.runs = std::move(runs);
    return r;
}

EvalReport evaluate(const fc::Forecaster& model, std::span<const WindowSample> windows,
                    const QuantileGrid& grid, std::optional<std::uint64_t> mc_seed) {
    if (model.needs_mc_seed() && !mc_seed) mc_seed = 0;
    const auto fcs = model.predict_many(windows, grid, mc_seed);
    return summarize({evaluate_forecasts(windows, fcs, grid)}, windows.size());
}

EvalReport evaluate_repeated(const std::function<fc::TrainedForecaster(int)>& make_model,
                             int repetitions, std::span<const WindowSample> windows,
                             const QuantileGrid& grid, std::uint64_t mc_seed, std::size_t workers) {
    require(repetitions >= 1, "repetitions must be >= 1");
    std::vector<std::vector<QuantileMetrics>> runs(static_cast<std::size_t>(repetitions));
    parallel_for(runs.size(), workers, [&](std::size_t r) {
        const auto model = make_model(static_cast<int>(r));
        const auto fcs = model.predict_many(windows, grid, fc::derive_seed(mc_seed, r));
        runs[r] = evaluate_forecasts(windows, fcs, grid);
    });
    return summarize(std::move(runs), windows.size());
}

std::map<std::string, Confusion> per_episode(std::span<const WindowSample> windows,
                                             std::span<const QuantileForecast> forecasts,
                                             std::size_t column) {
    require(windows.size() == forecasts.size(), "per_episode: forecasts and windows are not aligned");
    const auto d = decisions(forecasts, column);
    const auto t = truths(windows);
    std::map<std::string, Confusion> out;
    for (std::size_t i = 0; i < windows.size(); ++i) {
        const int di = d[i], ti = t[i];
        out[windows[i].episode_id] += confusion(std::span<const int>(&di, 1), std::span<const int>(&ti, 1));
    }
    return out;
}

void write_report(const EvalReport& r, std::ostream& out) {
    out << "q,repetitions,windows,q_risk,q_risk_hw,tp,fp,fn,tn,precision,precision_hw,recall,recall_hw,"
           "f3,f3_hw,flags\n";
    for (std::size_t j = 0; j < r.summary.size(); ++j) {
        const auto& s = r.summary[j];
        std::string flags;
        for (const auto& run : r.runs) {
            if (run[j].precision_defaulted && flags.find('P') == std::string::npos) flags += 'P';
            if (run[j].recall_defaulted && flags.find('R') == std::string::npos) flags += 'R';
        }
        out << fmt::format("{},{},{},{:.8g},{:.3g},{:.6g},{:.6g},{:.6g},{:.6g},{:.6f},{:.3g},{:.6f},{:.3g},"
                           "{:.6f},{:.3g},{}\n",
                           s.q, r.repetitions(), r.windows, s.q_risk.mean, s.q_risk.half_width, s.tp.mean,
                           s.fp.mean, s.fn.mean, s.tn.mean, s.precision.mean, s.precision.half_width,
                           s.recall.mean, s.recall.half_width, s.f_beta.mean, s.f_beta.half_width, flags);
    }
}

BenchReport bench(const fc::TrainedForecaster& model, const WindowSample& sample,
                  const QuantileGrid& grid, int warmup, int iters, std::uint64_t mc_seed) {
    require(iters >= 1, "bench needs at least one iteration");
    require(warmup >= 0, "warmup must be >= 0");
    BenchReport r;
    r.family = fc::to_string(model.spec().family);
    r.horizon = model.window().horizon();
    r.context_multiplier = model.window().context_multiplier();
    r.iterations = iters;
    r.parameter_bytes = model.parameter_bytes();
    const bool stochastic = model.needs_mc_seed();
    auto call = [&](int i) {
        return model.predict(sample, grid,
                             stochastic ? std::optional<std::uint64_t>(fc::derive_seed(mc_seed, static_cast<std::uint64_t>(i)))
                                        : std::nullopt);
    };
    for (int i = 0; i < warmup; ++i) (void)call(i);

    std::vector<double> ms(static_cast<std::size_t>(iters));
    const std::size_t base = alloc::current_bytes();
    alloc::reset_peak();
    for (int i = 0; i < iters; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto f = call(warmup + i);
        const auto t1 = std::chrono::steady_clock::now();
        ms[static_cast<std::size_t>(i)] = std::chrono::duration<double, std::milli>(t1 - t0).count();
        (void)f;
    }
    r.peak_measured = alloc::hooked();
    if (r.peak_measured) {
        const std::size_t peak = alloc::peak_bytes();
        r.peak_alloc_bytes = r.parameter_bytes + (peak > base ? peak - base : 0);
    } else {
        // Parameters plus every intermediate of one forward pass.
        const WindowSample* ptr = &sample;
        const auto b = fc::make_batch(std::span<const WindowSample* const>(&ptr, 1));
        nn::Tape t(false);
        (void)model.network().forward(t, model.params(), b, nn::ForwardMode{});
        const std::size_t act = t.value_bytes() * (stochastic ? static_cast<std::size_t>(model.schema().mc_paths) : 1);
        r.peak_alloc_bytes = r.parameter_bytes + act;
    }

    r.mean_ms = std::accumulate(ms.begin(), ms.end(), 0.0) / static_cast<double>(iters);
    std::sort(ms.begin(), ms.end());
    const auto n = ms.size();
    r.median_ms = n % 2 ? ms[n / 2] : 0.5 * (ms[n / 2 - 1] + ms[n / 2]);
    const auto p99 = static_cast<std::size_t>(std::ceil(0.99 * static_cast<double>(n) - 1e-9));
    r.p99_ms = ms[std::clamp<std::size_t>(p99, 1, n) - 1];
    return r;
}

SweepResult sweep(const std::vector<Episode>& episodes, const SweepOptions& opts) {
    require(!episodes.empty(), "sweep needs episodes");
    std::size_t max_len = 0;
    for (const auto& e : episodes) max_len = std::max(max_len, e.length());
    SweepResult res;
    struct Cell {
        int h, cm;
    };
    std::vector<Cell> cells;
    for (int h : opts.horizons)
        for (int cm : opts.multipliers) {
            const WindowConfig wc(h, cm);
            if (static_cast<std::size_t>(wc.total()) > max_len) {
                res.warnings.push_back(fmt::format("skipping (h={}, cm={}): total window {} exceeds episode length {}",
                                                   h, cm, wc.total(), max_len));
                continue;
            }
            cells.push_back({h, cm});
        }
    const auto dims = episodes.front().scenario.dims();
    for (const auto& cell : cells) {
        const WindowConfig wc(cell.h, cell.cm);
        data::PrepareOptions po;
        po.train_stride = opts.train_stride;
        po.eval_stride = opts.eval_stride;
        data::PreparedData d;
        try {
            d = data::prepare(episodes, wc, opts.target, po);
        } catch (const Error& e) {
            res.warnings.push_back(fmt::format("skipping (h={}, cm={}): {}", cell.h, cell.cm, e.what()));
            continue;
        }
        if (d.train.empty() || d.test.empty()) {
            res.warnings.push_back(fmt::format("skipping (h={}, cm={}): no train or test windows", cell.h, cell.cm));
            continue;
        }
        const auto schema = train::make_schema(d, wc, opts.target, dims);
        std::vector<SweepRow> rows(opts.families.size());
        parallel_for(rows.size(), opts.workers, [&](std::size_t i) {
            const auto family = opts.families[i];
            const auto spec = fc::ForecasterSpec::defaults(family);
            const auto cfg = train::TrainConfig::from_spec(spec, opts.epochs, opts.patience,
                                                           fc::derive_seed(opts.seed, i));
            const auto model = train::fit(spec, schema, d.train, d.val, cfg);
            SweepRow& row = rows[i];
            row.family = family;
            row.horizon = cell.h;
            row.context_multiplier = cell.cm;
            row.total_window = wc.total();
            row.report = evaluate(model, d.test, opts.grid, opts.seed);
            row.bench = bench(model, d.test.front(), opts.grid, opts.bench_warmup, opts.bench_iters, opts.seed);
        });
        std::move(rows.begin(), rows.end(), std::back_inserter(res.rows));
    }
    return res;
}

void write_sweep(const SweepResult& r, std::ostream& out) {
    out << "family,h,cm,total_window,q,q_risk,tp,fp,fn,tn,precision,recall,f3,mean_ms,median_ms,p99_ms,"
           "parameter_bytes,peak_alloc_bytes,peak_measured\n";
    for (const auto& row : r.rows)
        for (const auto& s : row.report.summary)
            out << fmt::format("{},{},{},{},{},{:.8g},{},{},{},{},{:.6f},{:.6f},{:.6f},{:.4f},{:.4f},{:.4f},{},{},{}\n",
                               fc::to_string(row.family), row.horizon, row.context_multiplier,
                               row.total_window, s.q, s.q_risk.mean, s.tp.mean, s.fp.mean, s.fn.mean,
                               s.tn.mean, s.precision.mean, s.recall.mean, s.f_beta.mean,
                               row.bench.mean_ms, row.bench.median_ms, row.bench.p99_ms,
                               row.bench.parameter_bytes, row.bench.peak_alloc_bytes,
                               row.bench.peak_measured ? 1 : 0);
}

} // namespace safemon::eval
