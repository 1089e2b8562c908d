#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "safemon/analysis.hpp"
#include "safemon/dataset.hpp"
#include "safemon/evaluation.hpp"
#include "safemon/monitor.hpp"
#include "safemon/sim.hpp"
#include "safemon/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace safemon;

namespace {

struct MissingInput : Error {
    using Error::Error;
};

struct Common {
    std::uint64_t seed = 42;
    std::string out = "out";
    std::size_t workers = 1;
};

void add_common(CLI::App* app, Common& c, const std::string& default_out) {
    c.out = default_out;
    app->add_option("--seed", c.seed, "Global seed")->capture_default_str();
    app->add_option("--out", c.out, "Output directory")->capture_default_str();
    app->add_option("--workers", c.workers, "Worker threads for independent jobs")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
}

std::string input_path(const std::string& path, const std::string& file_in_dir) {
    fs::path p(path);
    if (fs::is_directory(p)) p /= file_in_dir;
    if (!fs::exists(p)) throw MissingInput(fmt::format("input not found: {}", p.string()));
    return p.string();
}

std::vector<Episode> load_episodes(const std::string& data) {
    return data::read_dataset(input_path(data, "dataset.jsonl"));
}

fc::TrainedForecaster load_model(const std::string& path) {
    return fc::load_checkpoint(input_path(path, "model.bin"));
}

fs::path ensure_dir(const std::string& dir) {
    fs::create_directories(dir);
    return fs::path(dir);
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw Error(fmt::format("cannot write {}", p.string()));
    out << text;
}

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

/// Every option of the subcommand with its effective value.
json effective_config(const CLI::App* app) {
    json j;
    j["subcommand"] = app->get_name();
    json opts = json::object();
    for (const CLI::Option* o : app->get_options()) {
        const std::string name = o->get_lnames().empty() ? o->get_name() : o->get_lnames().front();
        if (name == "help" || name == "config") continue;
        if (o->count() > 0) {
            const auto& r = o->results();
            if (o->get_expected_max() > 1 || r.size() > 1) opts[name] = r;
            else opts[name] = r.empty() ? "" : r.front();
        } else {
            opts[name] = o->get_default_str();
        }
    }
    j["options"] = opts;
    return j;
}

void record_run(const CLI::App* app, const fs::path& dir, const json& metrics) {
    write_json(dir / "effective_config.json", effective_config(app));
    write_json(dir / "metrics.json", metrics);
}

json report_json(const eval::EvalReport& r) {
    json j;
    j["repetitions"] = r.repetitions();
    j["windows"] = r.windows;
    json rows = json::array();
    for (const auto& s : r.summary) {
        auto iv = [](const eval::Interval& i) { return json{{"mean", i.mean}, {"half_width", i.half_width}}; };
        rows.push_back({{"q", s.q}, {"q_risk", iv(s.q_risk)}, {"tp", iv(s.tp)}, {"fp", iv(s.fp)},
                        {"fn", iv(s.fn)}, {"tn", iv(s.tn)}, {"precision", iv(s.precision)},
                        {"recall", iv(s.recall)}, {"f3", iv(s.f_beta)}});
    }
    j["quantiles"] = rows;
    return j;
}

std::string plot_fn_fp(const eval::EvalReport& r) {
    std::string s = "q,fn,fp\n";
    for (const auto& q : r.summary) s += fmt::format("{},{},{}\n", q.q, q.fn.mean, q.fp.mean);
    return s;
}

fc::HyperMap parse_overrides(const std::vector<std::string>& items) {
    fc::HyperMap m;
    for (const auto& it : items) {
        const auto eq = it.find('=');
        if (eq == std::string::npos || eq == 0) throw Error(fmt::format("expected key=value, got '{}'", it));
        m[it.substr(0, eq)] = fc::parse_hyper_value(it.substr(eq + 1));
    }
    return m;
}

// ---- simulate --------------------------------------------------------------

struct SimulateArgs {
    Common c;
    int scenarios = 200;
    int episode_len = 200;
};

void run_simulate(const CLI::App* app, const SimulateArgs& a) {
    sim::SimConfig cfg;
    cfg.n_scenarios = a.scenarios;
    cfg.episode_len = a.episode_len;
    cfg.seed = a.c.seed;
    const auto episodes = sim::generate_dataset(cfg, default_scenario_dims(), default_requirements(), a.c.workers);
    const auto dir = ensure_dir(a.c.out);
    data::write_dataset(episodes, (dir / "dataset.jsonl").string());
    long violating = 0;
    for (const auto& ep : episodes)
        if ((ep.safety_metric.col(0).array() >= 0.0).any()) ++violating;
    const std::string hash = fmt::format("{:016x}", data::dataset_hash(episodes));
    json manifest = {{"file", "dataset.jsonl"},
                     {"episodes", episodes.size()},
                     {"episode_len", a.episode_len},
                     {"seed", a.c.seed},
                     {"fnv1a64", hash}};
    write_json(dir / "manifest.json", manifest);
    record_run(app, dir, {{"episodes", episodes.size()}, {"episodes_with_cte_violation", violating},
                          {"dataset_hash", hash}});
    fmt::print("wrote {} episodes to {} (hash {})\n", episodes.size(), (dir / "dataset.jsonl").string(), hash);
}

// ---- train -----------------------------------------------------------------

struct DataArgs {
    std::string data = "data";
    std::string target = "cte";
    int h = 3;
    int cm = 3;
    int train_stride = 1;
    int eval_stride = 1;
    std::string split = "0.7,0.1,0.2";
};

void add_data(CLI::App* app, DataArgs& d, bool window = true) {
    app->add_option("--data", d.data, "Dataset file or directory")->capture_default_str();
    app->add_option("--target", d.target, "Safety requirement to forecast")->capture_default_str();
    if (window) {
        app->add_option("--h", d.h, "Forecast horizon")->capture_default_str()->check(CLI::PositiveNumber);
        app->add_option("--cm", d.cm, "Context multiplier (lookback = cm * h)")
            ->capture_default_str()
            ->check(CLI::PositiveNumber);
    }
    app->add_option("--train-stride", d.train_stride, "Stride between training window origins")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    app->add_option("--eval-stride,--stride", d.eval_stride, "Stride between validation/test window origins")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    app->add_option("--split", d.split, "Train,val,test fractions")->capture_default_str();
}

data::SplitFractions parse_split(const std::string& text) {
    std::vector<double> v;
    std::stringstream ss(text);
    for (std::string item; std::getline(ss, item, ',');) v.push_back(std::stod(item));
    if (v.size() != 3) throw Error(fmt::format("--split needs three fractions, got '{}'", text));
    data::SplitFractions f{v[0], v[1], v[2]};
    f.validate();
    return f;
}

struct Prepared {
    std::vector<Episode> episodes;
    data::PreparedData d;
    fc::ModelSchema schema;
};

Prepared prepare_data(const DataArgs& a, const WindowConfig& wc) {
    Prepared p;
    p.episodes = load_episodes(a.data);
    data::PrepareOptions po;
    po.train_stride = a.train_stride;
    po.eval_stride = a.eval_stride;
    po.fractions = parse_split(a.split);
    p.d = data::prepare(p.episodes, wc, a.target, po);
    for (const auto& w : p.d.warnings) fmt::print(stderr, "warning: {}: {}\n", w.episode_id, w.reason);
    p.schema = train::make_schema(p.d, wc, a.target, p.episodes.front().scenario.dims());
    return p;
}

struct TrainArgs {
    Common c;
    DataArgs d;
    std::string family = "seq2seq";
    std::vector<std::string> hp;
    bool allow_off_grid = false;
    int epochs = 100;
    int patience = 10;
    bool refit_union = false;
    std::string name = "model";
};

json log_json(const fc::TrainingRecord& r) {
    json log = json::array();
    for (const auto& e : r.log) log.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}});
    return log;
}

std::string log_csv(const fc::TrainingRecord& r) {
    std::string s = "epoch,train_loss,val_loss\n";
    for (const auto& e : r.log) s += fmt::format("{},{:.17g},{:.17g}\n", e.epoch, e.train_loss, e.val_loss);
    return s;
}

std::vector<WindowSample> union_windows(const data::PreparedData& d) {
    std::vector<WindowSample> u = d.train;
    u.insert(u.end(), d.val.begin(), d.val.end());
    return u;
}

void save_model(const fc::TrainedForecaster& m, const fs::path& dir, const std::string& name) {
    fc::save_checkpoint(m, (dir / (name + ".bin")).string());
    write_text(dir / (name + "_training_log.csv"), log_csv(m.record()));
}

void run_train(const CLI::App* app, const TrainArgs& a) {
    const WindowConfig wc(a.d.h, a.d.cm);
    const auto p = prepare_data(a.d, wc);
    fc::ForecasterSpec spec = fc::ForecasterSpec::defaults(fc::parse_family(a.family));
    for (const auto& [k, v] : parse_overrides(a.hp)) spec.hyperparams[k] = v;
    spec.allow_off_grid = a.allow_off_grid;
    spec.validate();
    auto cfg = train::TrainConfig::from_spec(spec, a.epochs, a.patience, a.c.seed);
    cfg.meta["train_stride"] = std::to_string(a.d.train_stride);
    auto progress = [](const fc::EpochLog& e) {
        fmt::print("epoch {:3d}  train {:.6f}  val {:.6f}\n", e.epoch, e.train_loss, e.val_loss);
        std::fflush(stdout);
    };
    auto model = train::fit(spec, p.schema, p.d.train, p.d.val, cfg, progress);
    if (a.refit_union && fc::is_neural(spec.family)) {
        auto refit = cfg;
        refit.fixed_epochs = std::max(1, model.record().best_epoch);
        const auto u = union_windows(p.d);
        model = train::fit(spec, p.schema, u, {}, refit, progress);
    }
    const auto dir = ensure_dir(a.c.out);
    save_model(model, dir, a.name);
    const auto& rec = model.record();
    record_run(app, dir,
               {{"family", a.family},
                {"best_epoch", rec.best_epoch},
                {"best_val_loss", rec.log.empty() ? 0.0 : rec.log[static_cast<std::size_t>(rec.best_epoch)].val_loss},
                {"parameter_count", model.parameter_count()},
                {"train_windows", p.d.train.size()},
                {"val_windows", p.d.val.size()},
                {"log", log_json(rec)}});
    fmt::print("saved {}\n", (dir / (a.name + ".bin")).string());
}

// ---- tune ------------------------------------------------------------------

struct TuneArgs {
    Common c;
    DataArgs d;
    std::string family = "seq2seq";
    std::vector<std::string> grid;
    int reps = 5;
    int epochs = 100;
    int patience = 10;
    bool refit_union = false;
};

void run_tune(const CLI::App* app, const TuneArgs& a) {
    const WindowConfig wc(a.d.h, a.d.cm);
    const auto p = prepare_data(a.d, wc);
    const auto family = fc::parse_family(a.family);
    fc::HyperGrid grid = fc::hyper_grid(family);
    for (const auto& item : a.grid) {
        const auto eq = item.find('=');
        if (eq == std::string::npos) throw Error(fmt::format("expected key=v1,v2,..., got '{}'", item));
        std::vector<fc::HyperValue> values;
        std::stringstream ss(item.substr(eq + 1));
        for (std::string v; std::getline(ss, v, ',');) values.push_back(fc::parse_hyper_value(v));
        grid[item.substr(0, eq)] = values;
    }
    train::TuneOptions opts;
    opts.repetitions = a.reps;
    opts.epochs = a.epochs;
    opts.patience = a.patience;
    opts.seed = a.c.seed;
    opts.workers = a.c.workers;
    const auto res = train::grid_tune(family, grid, p.schema, p.d.train, p.d.val, opts);
    const auto dir = ensure_dir(a.c.out);
    std::ostringstream report;
    train::write_tune_report(res, report);
    write_text(dir / "tune_report.csv", report.str());
    json best = json::object();
    for (const auto& [k, v] : res.best.hyperparams) best[k] = fc::to_string(v);
    json metrics = {{"family", a.family}, {"configurations", res.summary.size()}, {"rows", res.rows.size()},
                    {"best", best}, {"best_mean_val_qrisk_sum", res.best_mean}, {"best_epoch", res.best_epoch}};
    if (a.refit_union && fc::is_neural(family)) {
        auto cfg = train::TrainConfig::from_spec(res.best, a.epochs, a.patience, a.c.seed);
        cfg.fixed_epochs = std::max(1, res.best_epoch);
        cfg.meta["train_stride"] = std::to_string(a.d.train_stride);
        const auto u = union_windows(p.d);
        const auto model = train::fit(res.best, p.schema, u, {}, cfg);
        save_model(model, dir, "model");
        metrics["refit_epochs"] = *cfg.fixed_epochs;
    }
    record_run(app, dir, metrics);
    fmt::print("{} configurations x {} repetitions; best {}\n", res.summary.size(), a.reps, best.dump());
}

// ---- evaluate --------------------------------------------------------------

struct EvaluateArgs {
    Common c;
    DataArgs d;
    std::string model = "models/model.bin";
    std::string quantiles = "0.005,0.025,0.05,0.5,0.95,0.975,0.995";
    int reps = 1;
};

void run_evaluate(const CLI::App* app, const EvaluateArgs& a) {
    const auto model = load_model(a.model);
    const auto grid = parse_quantile_list(a.quantiles);
    DataArgs d = a.d;
    d.h = model.window().horizon();
    d.cm = model.window().context_multiplier();
    d.target = model.schema().target;
    const auto p = prepare_data(d, model.window());
    eval::EvalReport r;
    if (a.reps <= 1 || !fc::is_neural(model.spec().family)) {
        r = eval::evaluate(model, p.d.test, grid, a.c.seed);
    } else {
        const auto& meta = model.record().meta;
        const int epochs = meta.count("epochs") ? std::stoi(meta.at("epochs")) : 100;
        const int patience = meta.count("patience") ? std::stoi(meta.at("patience")) : 10;
        auto make = [&](int rep) {
            const auto cfg = train::TrainConfig::from_spec(model.spec(), epochs, patience,
                                                           fc::derive_seed(a.c.seed, static_cast<std::uint64_t>(rep)));
            return train::fit(model.spec(), p.schema, p.d.train, p.d.val, cfg);
        };
        r = eval::evaluate_repeated(make, a.reps, p.d.test, grid, a.c.seed, a.c.workers);
    }
    const auto dir = ensure_dir(a.c.out);
    std::ostringstream table;
    eval::write_report(r, table);
    write_text(dir / "report.csv", table.str());
    write_text(dir / "plot_fn_fp_vs_q.csv", plot_fn_fp(r));
    json metrics = report_json(r);
    metrics["family"] = fc::to_string(model.spec().family);
    record_run(app, dir, metrics);
    std::cout << table.str();
}

// ---- sweep -----------------------------------------------------------------

struct SweepArgs {
    Common c;
    DataArgs d;
    std::vector<std::string> families{"seq2seq"};
    std::vector<int> h_values{3, 12};
    std::vector<int> cm_values{1, 3, 9};
    int epochs = 100;
    int patience = 10;
    int warmup = 50;
    int iters = 500;
};

void run_sweep(const CLI::App* app, const SweepArgs& a) {
    eval::SweepOptions o;
    o.families.clear();
    for (const auto& f : a.families) o.families.push_back(fc::parse_family(f));
    o.horizons = a.h_values;
    o.multipliers = a.cm_values;
    o.target = a.d.target;
    o.epochs = a.epochs;
    o.patience = a.patience;
    o.train_stride = a.d.train_stride;
    o.eval_stride = a.d.eval_stride;
    o.seed = a.c.seed;
    o.bench_warmup = a.warmup;
    o.bench_iters = a.iters;
    o.workers = a.c.workers;
    const auto episodes = load_episodes(a.d.data);
    const auto res = eval::sweep(episodes, o);
    for (const auto& w : res.warnings) fmt::print(stderr, "warning: {}\n", w);
    const auto dir = ensure_dir(a.c.out);
    std::ostringstream table;
    eval::write_sweep(res, table);
    write_text(dir / "sweep.csv", table.str());
    std::string plot = "family,h,cm,q,q_risk\n";
    json rows = json::array();
    for (const auto& row : res.rows) {
        json qs = json::array();
        for (const auto& s : row.report.summary) {
            plot += fmt::format("{},{},{},{},{:.8g}\n", fc::to_string(row.family), row.horizon,
                                row.context_multiplier, s.q, s.q_risk.mean);
            qs.push_back({{"q", s.q}, {"q_risk", s.q_risk.mean}, {"f3", s.f_beta.mean}});
        }
        rows.push_back({{"family", fc::to_string(row.family)}, {"h", row.horizon},
                        {"cm", row.context_multiplier}, {"total_window", row.total_window},
                        {"parameter_bytes", row.bench.parameter_bytes}, {"quantiles", qs}});
    }
    write_text(dir / "plot_qrisk_vs_h.csv", plot);
    record_run(app, dir, {{"rows", rows}, {"warnings", res.warnings}});
    std::cout << table.str();
}

// ---- bench -----------------------------------------------------------------

struct BenchArgs {
    Common c;
    DataArgs d;
    std::string model = "models/model.bin";
    int warmup = 50;
    int iters = 500;
};

void run_bench(const CLI::App* app, const BenchArgs& a) {
    const auto model = load_model(a.model);
    DataArgs d = a.d;
    d.target = model.schema().target;
    const auto p = prepare_data(d, model.window());
    if (p.d.test.empty()) throw Error("no test windows to benchmark on");
    const auto b = eval::bench(model, p.d.test.front(), model.grid(), a.warmup, a.iters, a.c.seed);
    const auto dir = ensure_dir(a.c.out);
    json j = {{"family", b.family}, {"h", b.horizon}, {"cm", b.context_multiplier}, {"iterations", b.iterations},
              {"mean_ms", b.mean_ms}, {"median_ms", b.median_ms}, {"p99_ms", b.p99_ms},
              {"parameter_bytes", b.parameter_bytes}, {"peak_alloc_bytes", b.peak_alloc_bytes},
              {"peak_alloc_source", b.peak_measured ? "allocation-counter" : "analytic"},
              {"within_10ms_budget", b.mean_ms < 10.0}};
    record_run(app, dir, j);
    std::cout << j.dump(2) << '\n';
}

// ---- monitor ---------------------------------------------------------------

struct MonitorArgs {
    Common c;
    std::string model = "models/model.bin";
    double quantile = 0.995;
    int hysteresis = 1;
};

void run_monitor(const CLI::App* app, const MonitorArgs& a) {
    auto model = std::make_shared<const fc::TrainedForecaster>(load_model(a.model));
    const auto cfg = mon::monitor_config(model, a.quantile, a.hysteresis, a.c.seed);
    long episodes = 0, decisions = 0, alarms = 0;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(std::cin, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const Episode ep = data::parse_episode(line, line_no);
        mon::Monitor m(cfg, ep.scenario);
        for (const auto& step : mon::replay(ep, m)) {
            const auto& d = step.decision;
            json rec = {{"episode", ep.id}, {"t", d.origin_t}, {"q", d.q}, {"max_forecast", d.max_forecast},
                        {"decision", d.decision}, {"ttv", d.ttv ? json(*d.ttv) : json(nullptr)},
                        {"alarm", d.alarm}};
            std::cout << rec.dump() << '\n';
            ++decisions;
            if (step.alarm) ++alarms;
        }
        ++episodes;
    }
    record_run(app, ensure_dir(a.c.out), {{"episodes", episodes}, {"decisions", decisions}, {"alarms", alarms}});
}

// ---- analyze ---------------------------------------------------------------

struct AnalyzeArgs {
    Common c;
    DataArgs d;
    std::string model = "models/model.bin";
    double quantile = 0.995;
    int folds = 10;
};

void run_analyze(const CLI::App* app, const AnalyzeArgs& a) {
    const auto model = load_model(a.model);
    DataArgs d = a.d;
    d.target = model.schema().target;
    const auto p = prepare_data(d, model.window());
    const auto col = model.grid().find(a.quantile);
    if (!col) throw Error(fmt::format("quantile {} is not in the model's grid", a.quantile));
    const auto fcs = model.predict_many(p.d.test, model.grid(), a.c.seed);
    const auto per = eval::per_episode(p.d.test, fcs, *col);
    std::map<std::string, const Scenario*> scen;
    for (const auto& w : p.d.test) scen.emplace(w.episode_id, &w.scenario);
    const auto& dims = p.schema.scenario_dims;
    Matrix X(static_cast<Eigen::Index>(per.size()), static_cast<Eigen::Index>(dims.size()));
    Vector y(static_cast<Eigen::Index>(per.size()));
    std::string table = "episode";
    for (const auto& dim : dims) table += "," + dim.name;
    table += ",tp,fp,fn,tn,f3\n";
    Eigen::Index i = 0;
    for (const auto& [id, c] : per) {
        const Scenario& s = *scen.at(id);
        table += id;
        for (std::size_t j = 0; j < dims.size(); ++j) {
            X(i, static_cast<Eigen::Index>(j)) = s[j];
            table += fmt::format(",{:.17g}", s[j]);
        }
        y(i) = eval::f_beta(c.precision(), c.recall());
        table += fmt::format(",{},{},{},{},{:.17g}\n", c.tp, c.fp, c.fn, c.tn, y(i));
        ++i;
    }
    const auto cv = cart::cross_validate(X, y, cart::default_tree_grid(), a.folds, a.c.seed);
    const auto rules = cart::extract_rules(cv.tree);
    std::vector<std::string> names;
    for (const auto& dim : dims) names.push_back(dim.name);
    const auto dir = ensure_dir(a.c.out);
    write_text(dir / "scenario_f3.csv", table);
    std::string text;
    for (const auto& r : rules) text += r.render(names) + "\n";
    write_text(dir / "rules.txt", text);
    std::ofstream rj(dir / "rules.json");
    cart::write_rules_json(rules, names, rj);
    record_run(app, dir,
               {{"episodes", per.size()}, {"q", a.quantile}, {"max_depth", cv.best.max_depth},
                {"min_samples_leaf", cv.best.min_samples_leaf}, {"cv_mse", cv.cv_mse}, {"r2", cv.r2},
                {"rules", rules.size()}});
    std::cout << text;
    fmt::print("cv_mse {:.6g}  r2 {:.4f}\n", cv.cv_mse, cv.r2);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Forecast-based runtime safety monitoring"};
    app.set_help_flag("--help", "Print this help message and exit");
    app.set_config("--config", "", "Key-value config file; command-line flags take precedence");
    app.require_subcommand(1);

    SimulateArgs sa;
    auto* sim_cmd = app.add_subcommand("simulate", "Generate a synthetic dataset");
    add_common(sim_cmd, sa.c, "data");
    sim_cmd->add_option("--scenarios", sa.scenarios, "Number of scenarios (episodes)")->capture_default_str()->check(CLI::PositiveNumber);
    sim_cmd->add_option("--episode-len", sa.episode_len, "Timesteps per episode")->capture_default_str()->check(CLI::PositiveNumber);

    TrainArgs ta;
    auto* train_cmd = app.add_subcommand("train", "Train one forecaster");
    add_common(train_cmd, ta.c, "models");
    add_data(train_cmd, ta.d);
    train_cmd->add_option("--family", ta.family, "persistence|seq2seq|convseq2seq|ar_rnn|attn_seq2seq")->capture_default_str();
    train_cmd->add_option("--hp", ta.hp, "Hyperparameter override key=value (repeatable)");
    train_cmd->add_flag("--allow-off-grid", ta.allow_off_grid, "Accept hyperparameters outside the grid");
    train_cmd->add_option("--epochs", ta.epochs, "Epoch budget")->capture_default_str()->check(CLI::PositiveNumber);
    train_cmd->add_option("--patience", ta.patience, "Early-stop patience")->capture_default_str()->check(CLI::PositiveNumber);
    train_cmd->add_flag("--refit-union", ta.refit_union, "Refit on train+val for the best epoch count");
    train_cmd->add_option("--name", ta.name, "Checkpoint base name")->capture_default_str();

    TuneArgs ua;
    auto* tune_cmd = app.add_subcommand("tune", "Grid-search hyperparameters");
    add_common(tune_cmd, ua.c, "tune");
    add_data(tune_cmd, ua.d);
    tune_cmd->add_option("--family", ua.family, "Forecaster family")->capture_default_str();
    tune_cmd->add_option("--grid", ua.grid, "Grid axis override key=v1,v2 (repeatable)");
    tune_cmd->add_option("--reps", ua.reps, "Repetitions per configuration")->capture_default_str()->check(CLI::PositiveNumber);
    tune_cmd->add_option("--epochs", ua.epochs, "Epoch budget")->capture_default_str()->check(CLI::PositiveNumber);
    tune_cmd->add_option("--patience", ua.patience, "Early-stop patience")->capture_default_str()->check(CLI::PositiveNumber);
    tune_cmd->add_flag("--refit-union", ua.refit_union, "Refit the winner on train+val");

    EvaluateArgs ea;
    auto* eval_cmd = app.add_subcommand("evaluate", "q-Risk and violation-prediction metrics");
    add_common(eval_cmd, ea.c, "eval");
    add_data(eval_cmd, ea.d, false);
    eval_cmd->add_option("--model", ea.model, "Checkpoint file or directory")->capture_default_str();
    eval_cmd->add_option("--quantiles", ea.quantiles, "Comma-separated quantiles")->capture_default_str();
    eval_cmd->add_option("--reps", ea.reps, "Retrain-and-evaluate repetitions")->capture_default_str()->check(CLI::PositiveNumber);

    SweepArgs wa;
    auto* sweep_cmd = app.add_subcommand("sweep", "Window-configuration sweep");
    add_common(sweep_cmd, wa.c, "sweep");
    add_data(sweep_cmd, wa.d, false);
    sweep_cmd->add_option("--families", wa.families, "Families to sweep")->capture_default_str();
    sweep_cmd->add_option("--h-values", wa.h_values, "Horizons")->capture_default_str();
    sweep_cmd->add_option("--cm-values", wa.cm_values, "Context multipliers")->capture_default_str();
    sweep_cmd->add_option("--epochs", wa.epochs, "Epoch budget")->capture_default_str()->check(CLI::PositiveNumber);
    sweep_cmd->add_option("--patience", wa.patience, "Early-stop patience")->capture_default_str()->check(CLI::PositiveNumber);
    sweep_cmd->add_option("--warmup", wa.warmup, "Benchmark warm-up calls")->capture_default_str();
    sweep_cmd->add_option("--iters", wa.iters, "Benchmark timed calls")->capture_default_str()->check(CLI::PositiveNumber);

    BenchArgs ba;
    auto* bench_cmd = app.add_subcommand("bench", "Inference latency and size");
    add_common(bench_cmd, ba.c, "bench");
    add_data(bench_cmd, ba.d, false);
    bench_cmd->add_option("--model", ba.model, "Checkpoint file or directory")->capture_default_str();
    bench_cmd->add_option("--warmup", ba.warmup, "Warm-up calls")->capture_default_str();
    bench_cmd->add_option("--iters", ba.iters, "Timed calls")->capture_default_str()->check(CLI::PositiveNumber);

    MonitorArgs ma;
    auto* mon_cmd = app.add_subcommand("monitor", "Replay episodes from stdin through the monitor");
    add_common(mon_cmd, ma.c, "monitor");
    mon_cmd->add_option("--model", ma.model, "Checkpoint file or directory")->capture_default_str();
    mon_cmd->add_option("--quantile", ma.quantile, "Decision quantile")->capture_default_str();
    mon_cmd->add_option("--hysteresis", ma.hysteresis, "Consecutive positive decisions per alarm")->capture_default_str();

    AnalyzeArgs aa;
    auto* an_cmd = app.add_subcommand("analyze", "Regression-tree analysis of F3 over scenarios");
    add_common(an_cmd, aa.c, "analysis");
    add_data(an_cmd, aa.d, false);
    an_cmd->add_option("--model", aa.model, "Checkpoint file or directory")->capture_default_str();
    an_cmd->add_option("--quantile", aa.quantile, "Decision quantile")->capture_default_str();
    an_cmd->add_option("--folds", aa.folds, "Cross-validation folds")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        std::cerr << app.help();
        return 2;
    }

    const CLI::App* cmd = app.get_subcommands().front();
    try {
        if (cmd == sim_cmd) run_simulate(cmd, sa);
        else if (cmd == train_cmd) run_train(cmd, ta);
        else if (cmd == tune_cmd) run_tune(cmd, ua);
        else if (cmd == eval_cmd) run_evaluate(cmd, ea);
        else if (cmd == sweep_cmd) run_sweep(cmd, wa);
        else if (cmd == bench_cmd) run_bench(cmd, ba);
        else if (cmd == mon_cmd) run_monitor(cmd, ma);
        else if (cmd == an_cmd) run_analyze(cmd, aa);
    } catch (const std::exception& e) {
        std::cerr << json{{"error", e.what()}, {"subcommand", cmd->get_name()}}.dump() << '\n';
        return 1;
    }
    return 0;
}
