// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "safemon/analysis.hpp"
#include "safemon/dataset.hpp"
#include "safemon/evaluation.hpp"
#include "safemon/sim.hpp"
#include "safemon/training.hpp"
#include "gradcheck.hpp"
#include "support.hpp"

using namespace safemon;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

/// Failed expectations are collected so one criterion reports all of them.
struct Checker {
    std::vector<std::string> failures;

    void expect(bool ok, const std::string& what) {
        if (!ok) failures.push_back(what);
    }
};

int failed = 0;

void criterion(int id, const char* name, const std::function<std::string(Checker&)>& body) {
    Checker c;
    std::string detail;
    const auto t0 = Clock::now();
    try {
        detail = body(c);
    } catch (const std::exception& e) {
        c.failures.push_back(std::string("exception: ") + e.what());
    }
    const bool pass = c.failures.empty();
    if (!pass) ++failed;
    std::string msg = detail;
    for (const auto& f : c.failures) msg += (msg.empty() ? "" : "; ") + f;
    fmt::print("{} criterion {:2d} {}: {} [{:.1f}s]\n", pass ? "PASS" : "FAIL", id, name, msg, seconds_since(t0));
    std::fflush(stdout);
}

// ---- shared data -----------------------------------------------------------

const std::vector<Episode>& default_episodes() {
    static const std::vector<Episode> eps =
        sim::generate_dataset(sim::SimConfig{}, default_scenario_dims(), default_requirements());
    return eps;
}

const data::PreparedData& default_prepared() {
    static const data::PreparedData d = data::prepare(default_episodes(), WindowConfig(3, 3), "cte");
    return d;
}

struct TrainedRun {
    fc::Family family;
    fc::TrainedForecaster model;
    eval::EvalReport report;
    bool non_crossing = true;
    double seconds = 0.0;
};

constexpr int kEpochs = 15;
constexpr int kPatience = 10;
constexpr std::uint64_t kSeed = 42;

/// Persistence plus every neural family trained on the default dataset at (3, 3).
const std::vector<TrainedRun>& trained_runs() {
    static const std::vector<TrainedRun> runs = [] {
        const auto& d = default_prepared();
        const auto schema = train::make_schema(d, WindowConfig(3, 3), "cte", default_scenario_dims());
        const auto grid = QuantileGrid::standard();
        std::vector<TrainedRun> out;
        std::vector<fc::Family> families{fc::Family::Persistence};
        for (auto f : fc::neural_families()) families.push_back(f);
        for (auto f : families) {
            const auto t0 = Clock::now();
            const auto spec = fc::ForecasterSpec::defaults(f);
            const auto cfg = train::TrainConfig::from_spec(spec, kEpochs, kPatience, kSeed);
            auto model = train::fit(spec, schema, d.train, d.val, cfg);
            const auto fcs = model.predict_many(d.test, grid, kSeed);
            bool nc = true;
            for (const auto& q : fcs) nc = nc && q.non_crossing();
            auto report = eval::summarize({eval::evaluate_forecasts(d.test, fcs, grid)}, d.test.size());
            out.push_back({f, std::move(model), std::move(report), nc, seconds_since(t0)});
        }
        return out;
    }();
    return runs;
}

// ---- criteria --------------------------------------------------------------

std::string formula_fidelity(Checker& c) {
    const double f3 = eval::f_beta(0.993, 0.985);
    c.expect(std::abs(f3 - 0.986) < 5e-4, fmt::format("F3(0.993, 0.985) = {}", f3));
    c.expect(std::abs(train::pinball_loss(1.0, 0.0, 0.9) - 0.9) < 1e-12, "pinball(1, 0, 0.9)");
    c.expect(std::abs(train::pinball_loss(0.0, 1.0, 0.9) - 0.1) < 1e-12, "pinball(0, 1, 0.9)");
    c.expect(train::pinball_loss(2.5, 2.5, 0.3) == 0.0, "pinball at y = yhat");

    WindowSample w;
    w.future_original = {2.0};
    QuantileForecast f;
    f.values = Matrix::Constant(1, 1, 1.0);
    f.quantiles = {0.5};
    const double qr = eval::q_risk(std::vector<WindowSample>{w}, std::vector<QuantileForecast>{f}, 0.5);
    c.expect(std::abs(qr - 0.5) < 1e-12, fmt::format("q-risk hand case = {}", qr));

    const std::vector<double> touching{-1.0, 0.0, -2.0};
    c.expect(violation_sign(touching) == 1, "violation_sign with a zero entry");
    c.expect(safety_metric_fn(-5.0, 5.0) == 0.0, "metric at the threshold");
    c.expect(violation_sign(std::vector<double>{-1.0, -0.1}) == -1, "violation_sign all negative");
    return fmt::format("F3={:.5f} q-risk={:.3f}", f3, qr);
}

double brute_qrisk(const std::vector<WindowSample>& ws, const std::vector<QuantileForecast>& fs,
                   std::size_t col, double q) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < ws.size(); ++i)
        for (std::size_t t = 0; t < ws[i].future_original.size(); ++t) {
            const double y = ws[i].future_original[t];
            const double yhat = fs[i].values(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(col));
            num += y > yhat ? q * (y - yhat) : (1 - q) * (yhat - y);
            den += std::abs(y);
        }
    return 2 * num / den;
}

std::vector<long> brute_origins(const data::SplitSpec& s, data::Segment seg, const WindowConfig& wc, int stride) {
    std::vector<long> out;
    const long k = wc.lookback(), h = wc.horizon();
    const long lo = static_cast<long>(s.begin(seg)), hi = static_cast<long>(s.end(seg));
    long first = -1;
    for (long t = 0; t < static_cast<long>(s.length); ++t) {
        const bool ok = t - k + 1 >= 0 && t + 1 >= lo && t + h < hi;
        if (!ok) continue;
        if (first < 0) first = t;
        if ((t - first) % stride == 0) out.push_back(t);
    }
    return out;
}

std::string oracle_equivalence(Checker& c) {
    std::mt19937_64 rng(2024);
    // q-Risk against the double sum.
    const auto s = testing::schema(4, 1);
    const auto ws = testing::random_windows(s, 100, 3);
    const auto& g = QuantileGrid::standard();
    std::normal_distribution<double> nd(0.0, 2.0);
    std::vector<QuantileForecast> fs;
    for (const auto& w : ws) {
        QuantileForecast f;
        f.values.resize(static_cast<Eigen::Index>(w.future_original.size()), static_cast<Eigen::Index>(g.size()));
        for (Eigen::Index i = 0; i < f.values.size(); ++i) f.values.data()[i] = nd(rng);
        for (Eigen::Index r = 0; r < f.values.rows(); ++r) std::sort(f.values.row(r).begin(), f.values.row(r).end());
        f.quantiles = g.values();
        fs.push_back(f);
    }
    double worst_qr = 0.0;
    for (std::size_t j = 0; j < g.size(); ++j)
        worst_qr = std::max(worst_qr, std::abs(eval::q_risk(ws, fs, j, g[j]) - brute_qrisk(ws, fs, j, g[j])));
    c.expect(worst_qr < 1e-9, fmt::format("q-risk vs brute force differs by {}", worst_qr));

    // Mann-Whitney U and A-hat against pair enumeration.
    int mwu_cases = 0;
    for (std::size_t na = 1; na <= 8; ++na)
        for (std::size_t nb = 1; nb <= 8; ++nb)
            for (int trial = 0; trial < 10; ++trial) {
                std::vector<double> a(na), b(nb);
                for (auto& x : a) x = static_cast<double>(rng() % 5);
                for (auto& x : b) x = static_cast<double>(rng() % 5);
                double u = 0.0;
                for (double x : a)
                    for (double y : b) u += x > y ? 1.0 : x == y ? 0.5 : 0.0;
                const auto r = eval::compare(a, b);
                c.expect(r.u == u, fmt::format("U({}, {}) = {} vs {}", na, nb, r.u, u));
                c.expect(r.a_hat == u / static_cast<double>(na * nb), "A-hat vs enumeration");
                ++mwu_cases;
            }

    // Window origins against enumeration.
    int origin_cases = 0;
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t len = 10 + rng() % 60;
        const std::size_t a = 1 + rng() % (len - 2);
        const std::size_t b = a + rng() % (len - a);
        data::SplitSpec sp{a, b, len};
        const WindowConfig wc(1 + static_cast<int>(rng() % 4), 1 + static_cast<int>(rng() % 3));
        const int stride = 1 + static_cast<int>(rng() % 4);
        for (auto seg : {data::Segment::Train, data::Segment::Val, data::Segment::Test}) {
            c.expect(data::window_origins(sp, seg, wc, stride) == brute_origins(sp, seg, wc, stride),
                     fmt::format("window origins len={} split=({},{})", len, a, b));
            ++origin_cases;
        }
    }

    // Confusion counts against a naive scan.
    std::vector<int> d(2000), t(2000);
    eval::Confusion naive;
    for (std::size_t i = 0; i < d.size(); ++i) {
        d[i] = rng() % 2 ? 1 : -1;
        t[i] = rng() % 3 ? -1 : 1;
        (d[i] == 1 ? (t[i] == 1 ? naive.tp : naive.fp) : (t[i] == 1 ? naive.fn : naive.tn)) += 1;
    }
    c.expect(eval::confusion(d, t) == naive, "confusion vs naive scan");
    return fmt::format("q-risk max diff {:.1e}, {} U/A-hat cases, {} origin sets, 2000 confusion pairs", worst_qr,
                       mwu_cases, origin_cases);
}

std::string gradient_check(Checker& c) {
    const auto t0 = Clock::now();
    double worst = 0.0;
    int checks = 0;
    for (auto f : fc::neural_families()) {
        // (spec, training mode); training mode exercises the dropout masks.
        std::vector<std::pair<fc::ForecasterSpec, bool>> variants{{testing::small_spec(f), false}};
        if (f == fc::Family::ArRnn) {
            variants.push_back({testing::small_spec(f, "lstm"), false});
            variants.push_back({testing::small_spec(f, "gru", 0.3), true});
        }
        if (f == fc::Family::AttnSeq2Seq) variants.push_back({testing::small_spec(f, "gru", 0.2), true});
        for (const auto& [spec, training] : variants)
            for (std::uint64_t seed = 1; seed <= 5; ++seed) {
                const auto r = testing::check_network(spec, seed, training);
                worst = std::max(worst, r.max_rel);
                c.expect(r.max_rel < 1e-3, fmt::format("{} seed {} rel err {}", fc::to_string(f), seed, r.max_rel));
                ++checks;
            }
    }
    const double secs = seconds_since(t0);
    c.expect(secs < 60.0, fmt::format("took {:.1f}s", secs));
    return fmt::format("{} model/seed checks, max relative error {:.2e}, {:.1f}s", checks, worst, secs);
}

std::string quantile_minimizer(Checker& c) {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<double> xs(10000);
    for (auto& x : xs) x = nd(rng);
    auto sorted = xs;
    std::sort(sorted.begin(), sorted.end());
    double worst = 0.0;
    for (double q : {0.005, 0.05, 0.5, 0.95, 0.995}) {
        double best_c = 0.0, best = std::numeric_limits<double>::infinity();
        for (int i = -3000; i <= 3000; ++i) {
            const double cand = i * 0.001;
            double total = 0.0;
            for (double x : xs) total += train::pinball_loss(x, cand, q);
            if (total < best) {
                best = total;
                best_c = cand;
            }
        }
        const double gap = std::abs(best_c - fc::empirical_quantile(sorted, q));
        worst = std::max(worst, gap);
        c.expect(gap < 0.02, fmt::format("q={} minimizer off by {}", q, gap));
    }
    return fmt::format("max |argmin - empirical quantile| = {:.4f}", worst);
}

std::string monotonicity(Checker& c) {
    std::string detail;
    for (const auto& r : trained_runs()) {
        const auto& m = r.report.runs.at(0);
        bool ok = r.non_crossing;
        for (std::size_t j = 1; j < m.size(); ++j)
            ok = ok && m[j].counts.fn <= m[j - 1].counts.fn && m[j].counts.fp >= m[j - 1].counts.fp;
        c.expect(ok, fmt::format("{} is not monotone", fc::to_string(r.family)));
        detail += fmt::format("{}{} FN {}->{} FP {}->{}", detail.empty() ? "" : ", ", fc::to_string(r.family),
                              m.front().counts.fn, m.back().counts.fn, m.front().counts.fp, m.back().counts.fp);
    }
    return detail;
}

std::string forecast_quality(Checker& c) {
    const auto& runs = trained_runs();
    const auto col = *QuantileGrid::standard().find(0.995);
    const double base = runs.front().report.runs[0][col].q_risk;
    double best_f3 = 0.0, total_secs = 0.0;
    std::string detail = fmt::format("persistence q-risk {:.4f}", base);
    for (const auto& r : runs) {
        total_secs += r.seconds;
        const auto& m = r.report.runs[0][col];
        best_f3 = std::max(best_f3, m.f_beta);
        if (r.family == fc::Family::Persistence) continue;
        const double gain = 1.0 - m.q_risk / base;
        c.expect(gain >= 0.2, fmt::format("{} only {:.0f}% below persistence", fc::to_string(r.family), 100 * gain));
        detail += fmt::format(", {} {:.4f} (F3 {:.3f})", fc::to_string(r.family), m.q_risk, m.f_beta);
    }
    c.expect(best_f3 >= 0.85, fmt::format("best F3 {:.3f}", best_f3));
    c.expect(total_secs <= 900.0, fmt::format("train + evaluate took {:.0f}s", total_secs));
    return detail + fmt::format("; best F3 {:.3f}; {} epochs, train+evaluate {:.0f}s", best_f3, kEpochs, total_secs);
}

std::string latency(Checker& c) {
    const auto grid = QuantileGrid::standard();
    std::string detail;
    for (auto f : fc::neural_families()) {
        double ms[2] = {0, 0};
        int i = 0;
        for (int h : {3, 12}) {
            const auto s = testing::schema(h, 3);
            const auto spec = fc::ForecasterSpec::defaults(f);
            nn::ParamSet ps;
            fc::build_network(spec, s, ps, 1);
            const fc::TrainedForecaster m(spec, s, std::move(ps), {});
            const auto w = testing::random_windows(s, 1, 5).front();
            ms[i++] = eval::bench(m, w, grid, 20, 200).mean_ms;
        }
        const double ratio = ms[1] / ms[0];
        if (f == fc::Family::ArRnn) {
            c.expect(ratio >= 2.5, fmt::format("ar_rnn ratio {:.2f}", ratio));
        } else {
            c.expect(ratio <= 1.5, fmt::format("{} ratio {:.2f}", fc::to_string(f), ratio));
            c.expect(ms[0] < 10.0 && ms[1] < 10.0, fmt::format("{} mean {:.2f} ms", fc::to_string(f), ms[1]));
        }
        detail += fmt::format("{}{} {:.3f}->{:.3f} ms (x{:.2f})", detail.empty() ? "" : ", ", fc::to_string(f), ms[0],
                              ms[1], ratio);
    }
    return "cm=3, h 3->12: " + detail;
}

std::string sweep_shape(Checker& c) {
    eval::SweepOptions o;
    o.families = {fc::Family::Seq2Seq};
    o.epochs = 2;
    o.patience = 2;
    o.train_stride = 4;
    o.eval_stride = 4;
    o.bench_warmup = 5;
    o.bench_iters = 20;
    const auto r = eval::sweep(default_episodes(), o);
    c.expect(r.rows.size() == 6, fmt::format("{} rows", r.rows.size()));
    std::set<std::pair<int, int>> configs;
    int largest = 0;
    for (const auto& row : r.rows) {
        c.expect(row.total_window == row.horizon * (1 + row.context_multiplier),
                 fmt::format("total {} for ({}, {})", row.total_window, row.horizon, row.context_multiplier));
        configs.insert({row.horizon, row.context_multiplier});
        largest = std::max(largest, row.total_window);
    }
    c.expect(configs.size() == 6, "duplicate configurations");
    c.expect(largest == 120, fmt::format("largest window {}", largest));
    std::ostringstream csv;
    eval::write_sweep(r, csv);
    c.expect(csv.str().find("total_window") != std::string::npos, "CSV lacks total_window");
    std::string totals;
    for (const auto& row : r.rows) totals += fmt::format("{}{}", totals.empty() ? "" : ",", row.total_window);
    return fmt::format("{} rows, totals {}", r.rows.size(), totals);
}

std::string cart_recovery(Checker& c) {
    std::mt19937_64 rng(11);
    const auto dims = default_scenario_dims();
    const auto d = static_cast<Eigen::Index>(dims.size());
    const Eigen::Index n = 400;
    Matrix X(n, d);
    for (Eigen::Index j = 0; j < d; ++j) {
        std::uniform_real_distribution<double> u(dims[static_cast<std::size_t>(j)].lo, dims[static_cast<std::size_t>(j)].hi);
        for (Eigen::Index i = 0; i < n; ++i) X(i, j) = u(rng);
    }
    // F3-like response driven by dimensions 1 and 3 only.
    const double cut1 = 0.5 * (dims[1].lo + dims[1].hi), cut3 = 0.5 * (dims[3].lo + dims[3].hi);
    std::normal_distribution<double> noise(0.0, 0.02);
    Vector y(n);
    for (Eigen::Index i = 0; i < n; ++i)
        y(i) = (X(i, 1) <= cut1 ? 0.95 : 0.75) - (X(i, 3) > cut3 ? 0.3 : 0.0) + noise(rng);
    const auto cv = cart::cross_validate(X, y, cart::default_tree_grid(), 10, 3);
    std::set<int> used;
    for (const auto& node : cv.tree.nodes())
        if (!node.leaf()) used.insert(node.feature);
    c.expect(cv.r2 >= 0.9, fmt::format("R^2 {:.3f}", cv.r2));
    c.expect(used == std::set<int>{1, 3}, "split features differ from the planted set");

    const auto rules = cart::extract_rules(cv.tree);
    std::vector<double> x(static_cast<std::size_t>(d));
    int bad = 0;
    for (int i = 0; i < 10000; ++i) {
        for (Eigen::Index j = 0; j < d; ++j) {
            const auto& dim = dims[static_cast<std::size_t>(j)];
            const double span = dim.hi - dim.lo;
            x[static_cast<std::size_t>(j)] = std::uniform_real_distribution<double>(dim.lo - 0.1 * span, dim.hi + 0.1 * span)(rng);
        }
        const auto hits = std::count_if(rules.begin(), rules.end(), [&](const cart::Rule& r) { return r.matches(x); });
        if (hits != 1) ++bad;
    }
    c.expect(bad == 0, fmt::format("{} points matched zero or several rules", bad));
    return fmt::format("R^2 {:.3f}, features {{1,3}}, {} rules partition 10^4 points", cv.r2, rules.size());
}

struct PipelineArtifacts {
    std::uint64_t dataset_hash = 0;
    std::vector<std::string> checkpoints;
    std::vector<std::string> reports;
};

PipelineArtifacts quickstart() {
    sim::SimConfig cfg;
    cfg.n_scenarios = 40;
    PipelineArtifacts a;
    const auto eps = sim::generate_dataset(cfg, default_scenario_dims(), default_requirements(), 2);
    a.dataset_hash = data::dataset_hash(eps);
    data::PrepareOptions po;
    po.train_stride = 2;
    po.eval_stride = 2;
    const WindowConfig wc(3, 3);
    const auto d = data::prepare(eps, wc, "cte", po);
    const auto schema = train::make_schema(d, wc, "cte", default_scenario_dims());
    for (auto f : {fc::Family::Seq2Seq, fc::Family::ArRnn}) {
        const auto spec = fc::ForecasterSpec::defaults(f);
        const auto model = train::fit(spec, schema, d.train, d.val, train::TrainConfig::from_spec(spec, 3, 3, 42));
        a.checkpoints.push_back(fc::serialize_checkpoint(model));
        std::ostringstream rep;
        eval::write_report(eval::evaluate(model, d.test, QuantileGrid::standard(), 42), rep);
        a.reports.push_back(rep.str());
    }
    return a;
}

std::string determinism(Checker& c) {
    const auto a = quickstart();
    const auto b = quickstart();
    c.expect(a.dataset_hash == b.dataset_hash, "dataset hash differs");
    c.expect(a.checkpoints == b.checkpoints, "checkpoint bytes differ");
    c.expect(a.reports == b.reports, "metric summaries differ");
    std::size_t bytes = 0;
    for (const auto& s : a.checkpoints) bytes += s.size();
    return fmt::format("dataset {:016x}, {} checkpoint bytes, {} reports identical across runs", a.dataset_hash, bytes,
                       a.reports.size());
}

} // namespace

int main() {
    const auto t0 = Clock::now();
    criterion(1, "formula fidelity", formula_fidelity);
    criterion(2, "oracle equivalence", oracle_equivalence);
    criterion(3, "gradient check", gradient_check);
    criterion(4, "quantile minimizer", quantile_minimizer);
    criterion(5, "FN/FP monotonicity", monotonicity);
    criterion(6, "forecast quality", forecast_quality);
    criterion(7, "latency scaling", latency);
    criterion(8, "sweep shape", sweep_shape);
    criterion(9, "CART recovery", cart_recovery);
    criterion(10, "determinism", determinism);
    fmt::print("{} of 10 criteria passed in {:.0f}s\n", 10 - failed, seconds_since(t0));
    return failed == 0 ? 0 : 1;
}
