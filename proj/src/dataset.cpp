#include "safemon/dataset.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace safemon::data {

namespace {

using nlohmann::json;

void append_real(std::string& out, double v) {
    require(std::isfinite(v), "cannot serialize non-finite value");
    fmt::format_to(std::back_inserter(out), "{:.17g}", v);
}

void append_string(std::string& out, const std::string& s) { out += json(s).dump(); }

void append_column(std::string& out, const std::string& name, const Matrix& m, Eigen::Index col) {
    append_string(out, name);
    out += ":[";
    for (Eigen::Index t = 0; t < m.rows(); ++t) {
        if (t) out += ',';
        append_real(out, m(t, col));
    }
    out += ']';
}

template <typename Fn>
void append_list(std::string& out, std::size_t n, Fn&& item) {
    out += '[';
    for (std::size_t i = 0; i < n; ++i) {
        if (i) out += ',';
        item(i);
    }
    out += ']';
}

const char* kind_name(DimKind k) { return k == DimKind::Continuous ? "continuous" : "categorical"; }

} // namespace

std::string format_episode(const Episode& ep) {
    std::string out;
    out += "{\"id\":";
    append_string(out, ep.id);
    const auto& dims = ep.scenario.dims();
    out += ",\"scenario\":{\"names\":";
    append_list(out, dims.size(), [&](std::size_t i) { append_string(out, dims[i].name); });
    out += ",\"values\":";
    append_list(out, dims.size(), [&](std::size_t i) { append_real(out, ep.scenario[i]); });
    out += ",\"lo\":";
    append_list(out, dims.size(), [&](std::size_t i) { append_real(out, dims[i].lo); });
    out += ",\"hi\":";
    append_list(out, dims.size(), [&](std::size_t i) { append_real(out, dims[i].hi); });
    out += ",\"kind\":";
    append_list(out, dims.size(), [&](std::size_t i) { append_string(out, kind_name(dims[i].kind)); });
    out += "},\"dt\":";
    append_real(out, ep.dt_seconds);
    out += ",\"roles\":{\"lc\":";
    append_list(out, ep.lc_names.size(), [&](std::size_t i) { append_string(out, ep.lc_names[i]); });
    out += ",\"state\":";
    append_list(out, ep.state_names.size(),
                [&](std::size_t i) { append_string(out, ep.state_names[i]); });
    out += "},\"requirements\":";
    append_list(out, ep.requirements.size(), [&](std::size_t i) {
        const auto& r = ep.requirements[i];
        out += "{\"name\":";
        append_string(out, r.name);
        out += ",\"channel\":";
        append_string(out, ep.state_names.at(r.channel));
        out += ",\"threshold\":";
        append_real(out, r.threshold);
        out += '}';
    });
    out += ",\"columns\":{";
    bool first = true;
    auto sep = [&] {
        if (!first) out += ',';
        first = false;
    };
    for (std::size_t c = 0; c < ep.lc_names.size(); ++c) {
        sep();
        append_column(out, ep.lc_names[c], ep.lc_outputs, static_cast<Eigen::Index>(c));
    }
    for (std::size_t c = 0; c < ep.state_names.size(); ++c) {
        sep();
        append_column(out, ep.state_names[c], ep.raw_state, static_cast<Eigen::Index>(c));
    }
    for (std::size_t c = 0; c < ep.requirements.size(); ++c) {
        sep();
        append_column(out, ep.requirements[c].name, ep.safety_metric, static_cast<Eigen::Index>(c));
    }
    out += "}}";
    return out;
}

Episode parse_episode(std::string_view line, std::size_t line_no) {
    auto fail = [&](const std::string& what) -> Error {
        return Error(fmt::format("dataset line {}: {}", line_no, what));
    };
    json j;
    try {
        j = json::parse(line);
    } catch (const json::parse_error& e) {
        throw fail(fmt::format("malformed record ({})", e.what()));
    }
    try {
        Episode ep;
        ep.id = j.at("id").get<std::string>();
        const auto& sc = j.at("scenario");
        const auto names = sc.at("names").get<std::vector<std::string>>();
        const auto values = sc.at("values").get<std::vector<double>>();
        const auto lo = sc.at("lo").get<std::vector<double>>();
        const auto hi = sc.at("hi").get<std::vector<double>>();
        const auto kinds = sc.at("kind").get<std::vector<std::string>>();
        if (values.size() != names.size() || lo.size() != names.size() ||
            hi.size() != names.size() || kinds.size() != names.size())
            throw fail("scenario arrays have unequal lengths");
        std::vector<ScenarioDim> dims;
        for (std::size_t i = 0; i < names.size(); ++i)
            dims.push_back({names[i], lo[i], hi[i],
                            kinds[i] == "continuous" ? DimKind::Continuous
                                                     : DimKind::CategoricalAsReal});
        ep.scenario = Scenario(values, dims);
        ep.dt_seconds = j.at("dt").get<double>();
        ep.lc_names = j.at("roles").at("lc").get<std::vector<std::string>>();
        ep.state_names = j.at("roles").at("state").get<std::vector<std::string>>();

        const auto& cols = j.at("columns");
        std::map<std::string, std::vector<double>> series;
        std::size_t len = 0;
        bool have_len = false;
        for (auto it = cols.begin(); it != cols.end(); ++it) {
            auto v = it.value().get<std::vector<double>>();
            if (have_len && v.size() != len)
                throw fail(fmt::format("column '{}' has length {}, expected {}", it.key(), v.size(),
                                       len));
            len = v.size();
            have_len = true;
            series.emplace(it.key(), std::move(v));
        }
        auto fill = [&](const std::vector<std::string>& which, Matrix& m) {
            m.resize(static_cast<Eigen::Index>(len), static_cast<Eigen::Index>(which.size()));
            for (std::size_t c = 0; c < which.size(); ++c) {
                auto it = series.find(which[c]);
                if (it == series.end()) throw fail(fmt::format("missing column '{}'", which[c]));
                for (std::size_t t = 0; t < len; ++t)
                    m(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(c)) = it->second[t];
            }
        };
        fill(ep.lc_names, ep.lc_outputs);
        fill(ep.state_names, ep.raw_state);

        std::vector<std::string> metric_names;
        for (const auto& r : j.at("requirements")) {
            SafetyRequirement req;
            req.name = r.at("name").get<std::string>();
            const auto channel = r.at("channel").get<std::string>();
            bool found = false;
            for (std::size_t c = 0; c < ep.state_names.size(); ++c)
                if (ep.state_names[c] == channel) {
                    req.channel = c;
                    found = true;
                }
            if (!found) throw fail(fmt::format("requirement channel '{}' not in state", channel));
            req.threshold = r.at("threshold").get<double>();
            ep.requirements.push_back(req);
            metric_names.push_back(req.name);
        }
        fill(metric_names, ep.safety_metric);
        ep.validate();
        return ep;
    } catch (const json::exception& e) {
        throw fail(fmt::format("malformed record ({})", e.what()));
    } catch (const Error& e) {
        const std::string msg = e.what();
        if (msg.rfind("dataset line", 0) == 0) throw;
        throw fail(msg);
    }
}

void write_dataset(const std::vector<Episode>& episodes, std::ostream& out) {
    for (const auto& ep : episodes) out << format_episode(ep) << '\n';
    require(static_cast<bool>(out), "failed writing dataset");
}

void write_dataset(const std::vector<Episode>& episodes, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), fmt::format("cannot open '{}' for writing", path));
    write_dataset(episodes, out);
}

std::vector<Episode> read_dataset(std::istream& in) {
    std::vector<Episode> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        out.push_back(parse_episode(line, line_no));
    }
    return out;
}

std::vector<Episode> read_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), fmt::format("cannot open '{}'", path));
    return read_dataset(in);
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t dataset_hash(const std::vector<Episode>& episodes) {
    std::uint64_t h = fnv1a64({});
    for (const auto& ep : episodes) {
        h = fnv1a64(format_episode(ep), h);
        h = fnv1a64("\n", h);
    }
    return h;
}

const char* to_string(Segment s) {
    switch (s) {
    case Segment::Train: return "train";
    case Segment::Val: return "val";
    case Segment::Test: return "test";
    }
    return "?";
}

void SplitFractions::validate() const {
    require(train > 0.0 && val >= 0.0 && test > 0.0, "split fractions must be positive");
    require(std::abs(train + val + test - 1.0) < 1e-9, "split fractions must sum to 1");
}

std::size_t SplitSpec::begin(Segment s) const {
    switch (s) {
    case Segment::Train: return 0;
    case Segment::Val: return train_end;
    case Segment::Test: return val_end;
    }
    return 0;
}

std::size_t SplitSpec::end(Segment s) const {
    switch (s) {
    case Segment::Train: return train_end;
    case Segment::Val: return val_end;
    case Segment::Test: return length;
    }
    return 0;
}

SplitSpec split_episode(const Episode& ep, const SplitFractions& fractions) {
    fractions.validate();
    const std::size_t t = ep.length();
    require(t >= 10, fmt::format("episode '{}' has {} steps; splitting needs at least 10", ep.id, t));
    // The epsilon guards products such as 0.7 * 10 that land a hair below an integer.
    const auto floor_of = [&](double f) {
        return static_cast<std::size_t>(std::floor(f * static_cast<double>(t) + 1e-9));
    };
    SplitSpec s;
    s.length = t;
    s.train_end = floor_of(fractions.train);
    s.val_end = s.train_end + floor_of(fractions.val);
    return s;
}

NormStats::NormStats(std::vector<std::string> names, std::vector<ChannelStats> stats)
    : names_(std::move(names)), stats_(std::move(stats)) {
    require(names_.size() == stats_.size(), "norm stats names/stats size mismatch");
    for (const auto& s : stats_) require(s.std >= kMinStd, "norm std below floor");
}

const ChannelStats& NormStats::at(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
        if (names_[i] == name) return stats_[i];
    throw Error(fmt::format("no normalization statistics for channel '{}'", name));
}

double NormStats::apply(const std::string& name, double x) const {
    const auto& s = at(name);
    return (x - s.mean) / s.std;
}

double NormStats::invert(const std::string& name, double z) const {
    const auto& s = at(name);
    return z * s.std + s.mean;
}

bool operator==(const NormStats& a, const NormStats& b) {
    if (a.names_ != b.names_) return false;
    for (std::size_t i = 0; i < a.stats_.size(); ++i)
        if (a.stats_[i].mean != b.stats_[i].mean || a.stats_[i].std != b.stats_[i].std)
            return false;
    return true;
}

NormStats fit_norm(const std::vector<Episode>& episodes, const std::vector<SplitSpec>& splits) {
    require(!episodes.empty(), "fit_norm needs at least one episode");
    require(episodes.size() == splits.size(), "fit_norm: one split per episode required");
    const auto& first = episodes.front();
    std::vector<std::string> names = first.lc_names;
    for (const auto& r : first.requirements) names.push_back(r.name);

    // Two passes (mean, then centered squares) for accuracy.
    std::vector<double> sum(names.size(), 0.0);
    std::size_t count = 0;
    auto value = [&](const Episode& ep, std::size_t c, Eigen::Index t) {
        const auto n_lc = ep.lc_names.size();
        return c < n_lc ? ep.lc_outputs(t, static_cast<Eigen::Index>(c))
                        : ep.safety_metric(t, static_cast<Eigen::Index>(c - n_lc));
    };
    for (std::size_t e = 0; e < episodes.size(); ++e) {
        const auto& ep = episodes[e];
        require(ep.lc_names == first.lc_names && ep.requirements.size() == first.requirements.size(),
                fmt::format("episode '{}' schema differs from '{}'", ep.id, first.id));
        for (Eigen::Index t = 0; t < static_cast<Eigen::Index>(splits[e].train_end); ++t) {
            for (std::size_t c = 0; c < names.size(); ++c) sum[c] += value(ep, c, t);
            ++count;
        }
    }
    require(count > 0, "fit_norm: zero training timesteps");
    std::vector<ChannelStats> stats(names.size());
    for (std::size_t c = 0; c < names.size(); ++c) stats[c].mean = sum[c] / static_cast<double>(count);
    std::vector<double> sq(names.size(), 0.0);
    for (std::size_t e = 0; e < episodes.size(); ++e)
        for (Eigen::Index t = 0; t < static_cast<Eigen::Index>(splits[e].train_end); ++t)
            for (std::size_t c = 0; c < names.size(); ++c) {
                const double d = value(episodes[e], c, t) - stats[c].mean;
                sq[c] += d * d;
            }
    for (std::size_t c = 0; c < names.size(); ++c)
        stats[c].std = std::max(std::sqrt(sq[c] / static_cast<double>(count)), NormStats::kMinStd);
    return NormStats(std::move(names), std::move(stats));
}

std::vector<long> window_origins(const SplitSpec& split, Segment segment, const WindowConfig& wc,
                                 int stride) {
    require(stride >= 1, "stride must be >= 1");
    const long h = wc.horizon();
    const long k = wc.lookback();
    const long seg_begin = static_cast<long>(split.begin(segment));
    const long seg_end = static_cast<long>(split.end(segment));
    std::vector<long> out;
    const long first = std::max(seg_begin - 1, k - 1);
    for (long t = first; t + h <= seg_end - 1; t += stride) out.push_back(t);
    return out;
}

std::vector<WindowSample> make_windows(const Episode& ep, const SplitSpec& split, Segment segment,
                                       const WindowConfig& wc, const NormStats& norm,
                                       const std::string& target, int stride) {
    const auto r = static_cast<Eigen::Index>(ep.requirement_index(target));
    const auto& ts = norm.at(target);
    std::vector<ChannelStats> cov_stats;
    for (const auto& name : ep.lc_names) cov_stats.push_back(norm.at(name));
    const Scenario scenario = ep.scenario;

    const int h = wc.horizon();
    const int k = wc.lookback();
    const auto n_cov = static_cast<Eigen::Index>(ep.lc_names.size());
    std::vector<WindowSample> out;
    for (long t : window_origins(split, segment, wc, stride)) {
        WindowSample w;
        w.scenario = scenario;
        w.episode_id = ep.id;
        w.origin_t = t;
        w.denorm = {ts.mean, ts.std};
        w.past_target.resize(static_cast<std::size_t>(k));
        w.past_covariates.resize(k, n_cov);
        for (int i = 0; i < k; ++i) {
            const Eigen::Index src = t - k + 1 + i;
            w.past_target[static_cast<std::size_t>(i)] = (ep.safety_metric(src, r) - ts.mean) / ts.std;
            for (Eigen::Index c = 0; c < n_cov; ++c)
                w.past_covariates(i, c) =
                    (ep.lc_outputs(src, c) - cov_stats[static_cast<std::size_t>(c)].mean) /
                    cov_stats[static_cast<std::size_t>(c)].std;
        }
        w.future_target.resize(static_cast<std::size_t>(h));
        w.future_original.resize(static_cast<std::size_t>(h));
        for (int i = 0; i < h; ++i) {
            const double y = ep.safety_metric(t + 1 + i, r);
            w.future_original[static_cast<std::size_t>(i)] = y;
            w.future_target[static_cast<std::size_t>(i)] = (y - ts.mean) / ts.std;
        }
        out.push_back(std::move(w));
    }
    return out;
}

PreparedData prepare(const std::vector<Episode>& episodes, const WindowConfig& wc,
                     const std::string& target, const PrepareOptions& opts) {
    PreparedData d;
    std::vector<Episode> kept;
    for (const auto& ep : episodes) {
        if (ep.length() < 10) {
            d.warnings.push_back({ep.id, Segment::Train, "episode shorter than 10 steps"});
            continue;
        }
        kept.push_back(ep);
    }
    require(!kept.empty(), "no episode is long enough to split");
    for (const auto& ep : kept) d.splits.push_back(split_episode(ep, opts.fractions));
    d.norm = fit_norm(kept, d.splits);
    d.covariate_names = kept.front().lc_names;

    for (std::size_t e = 0; e < kept.size(); ++e) {
        for (Segment seg : {Segment::Train, Segment::Val, Segment::Test}) {
            const int stride = seg == Segment::Train ? opts.train_stride : opts.eval_stride;
            auto w = make_windows(kept[e], d.splits[e], seg, wc, d.norm, target, stride);
            if (w.empty()) {
                d.warnings.push_back(
                    {kept[e].id, seg,
                     fmt::format("{} segment of {} steps cannot host a window of {} (h={}, k={})",
                                 to_string(seg), d.splits[e].size(seg), wc.total(), wc.horizon(),
                                 wc.lookback())});
                continue;
            }
            auto& dst = seg == Segment::Train ? d.train : seg == Segment::Val ? d.val : d.test;
            dst.insert(dst.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
        }
    }
    return d;
}

} // namespace safemon::data
