#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "safemon/forecasters.hpp"

namespace safemon::fc {

static_assert(std::endian::native == std::endian::little, "checkpoints assume a little-endian host");

namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'S', 'M', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

json hyper_to_json(const HyperMap& m) {
    json j = json::object();
    for (const auto& [k, v] : m) {
        if (const auto* d = std::get_if<double>(&v)) j[k] = *d;
        else j[k] = std::get<std::string>(v);
    }
    return j;
}

HyperMap hyper_from_json(const json& j) {
    HyperMap m;
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (it->is_number()) m[it.key()] = it->get<double>();
        else m[it.key()] = it->get<std::string>();
    }
    return m;
}

json header_json(const TrainedForecaster& model) {
    const auto& spec = model.spec();
    const auto& s = model.schema();
    json j;
    j["spec"] = {{"family", to_string(spec.family)},
                 {"hyperparams", hyper_to_json(spec.hyperparams)},
                 {"allow_off_grid", spec.allow_off_grid}};
    json dims = json::array();
    for (const auto& d : s.scenario_dims)
        dims.push_back({{"name", d.name}, {"lo", d.lo}, {"hi", d.hi},
                        {"kind", d.kind == DimKind::Continuous ? "continuous" : "categorical"}});
    json norm = json::array();
    for (std::size_t i = 0; i < s.norm.names().size(); ++i)
        norm.push_back({{"name", s.norm.names()[i]}, {"mean", s.norm.stats()[i].mean},
                        {"std", s.norm.stats()[i].std}});
    j["schema"] = {{"horizon", s.wc.horizon()},
                   {"context_multiplier", s.wc.context_multiplier()},
                   {"quantiles", s.grid.values()},
                   {"target", s.target},
                   {"covariates", s.covariates},
                   {"scenario_dims", dims},
                   {"norm", norm},
                   {"mc_paths", s.mc_paths}};
    json log = json::array();
    for (const auto& e : model.record().log)
        log.push_back({e.epoch, e.train_loss, e.val_loss});
    j["record"] = {{"log", log}, {"best_epoch", model.record().best_epoch}, {"meta", model.record().meta}};
    json params = json::array();
    for (const auto& p : model.params().all())
        params.push_back({{"name", p.name}, {"rows", p.value.rows()}, {"cols", p.value.cols()}});
    j["params"] = params;
    return j;
}

template <typename T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

template <typename T>
T get(const std::string& in, std::size_t& at) {
    require(at + sizeof(T) <= in.size(), "checkpoint is truncated");
    T v;
    std::memcpy(&v, in.data() + at, sizeof(T));
    at += sizeof(T);
    return v;
}

} // namespace

std::string serialize_checkpoint(const TrainedForecaster& model) {
    const std::string header = header_json(model).dump();
    std::string out(kMagic, 4);
    put<std::uint32_t>(out, kVersion);
    put<std::uint64_t>(out, header.size());
    out += header;
    for (const auto& p : model.params().all())
        out.append(reinterpret_cast<const char*>(p.value.data()),
                   static_cast<std::size_t>(p.value.size()) * sizeof(double));
    return out;
}

TrainedForecaster deserialize_checkpoint(const std::string& bytes) {
    require(bytes.size() >= 16 && std::memcmp(bytes.data(), kMagic, 4) == 0,
            "not a checkpoint (bad magic)");
    std::size_t at = 4;
    const auto version = get<std::uint32_t>(bytes, at);
    require(version == kVersion, fmt::format("unsupported checkpoint version {}", version));
    const auto hlen = get<std::uint64_t>(bytes, at);
    require(at + hlen <= bytes.size(), "checkpoint is truncated");
    json j;
    try {
        j = json::parse(bytes.substr(at, hlen));
    } catch (const json::exception& e) {
        throw Error(fmt::format("checkpoint header: {}", e.what()));
    }
    at += hlen;
    try {
        ForecasterSpec spec;
        spec.family = parse_family(j.at("spec").at("family").get<std::string>());
        spec.hyperparams = hyper_from_json(j.at("spec").at("hyperparams"));
        spec.allow_off_grid = j.at("spec").at("allow_off_grid").get<bool>();

        const json& js = j.at("schema");
        ModelSchema schema;
        schema.wc = WindowConfig(js.at("horizon").get<int>(), js.at("context_multiplier").get<int>());
        schema.grid = QuantileGrid(js.at("quantiles").get<std::vector<double>>());
        schema.target = js.at("target").get<std::string>();
        schema.covariates = js.at("covariates").get<std::vector<std::string>>();
        for (const auto& d : js.at("scenario_dims"))
            schema.scenario_dims.push_back(
                {d.at("name").get<std::string>(), d.at("lo").get<double>(), d.at("hi").get<double>(),
                 d.at("kind").get<std::string>() == "continuous" ? DimKind::Continuous
                                                                  : DimKind::CategoricalAsReal});
        std::vector<std::string> names;
        std::vector<data::ChannelStats> stats;
        for (const auto& n : js.at("norm")) {
            names.push_back(n.at("name").get<std::string>());
            stats.push_back({n.at("mean").get<double>(), n.at("std").get<double>()});
        }
        schema.norm = data::NormStats(std::move(names), std::move(stats));
        schema.mc_paths = js.at("mc_paths").get<int>();

        TrainingRecord record;
        for (const auto& e : j.at("record").at("log"))
            record.log.push_back({e.at(0).get<int>(), e.at(1).get<double>(), e.at(2).get<double>()});
        record.best_epoch = j.at("record").at("best_epoch").get<int>();
        record.meta = j.at("record").at("meta").get<std::map<std::string, std::string>>();

        nn::ParamSet params;
        for (const auto& p : j.at("params")) {
            const auto rows = p.at("rows").get<Eigen::Index>();
            const auto cols = p.at("cols").get<Eigen::Index>();
            Matrix m(rows, cols);
            const std::size_t n = static_cast<std::size_t>(rows * cols) * sizeof(double);
            require(at + n <= bytes.size(), "checkpoint is truncated");
            std::memcpy(m.data(), bytes.data() + at, n);
            at += n;
            params.add(p.at("name").get<std::string>(), std::move(m));
        }
        require(at == bytes.size(), "checkpoint has trailing bytes");
        return TrainedForecaster(std::move(spec), std::move(schema), std::move(params), std::move(record));
    } catch (const json::exception& e) {
        throw Error(fmt::format("checkpoint header: {}", e.what()));
    }
}

void save_checkpoint(const TrainedForecaster& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), fmt::format("cannot write '{}'", path));
    const std::string bytes = serialize_checkpoint(model);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    require(out.good(), fmt::format("failed writing '{}'", path));
}

TrainedForecaster load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), fmt::format("cannot open checkpoint '{}'", path));
    std::ostringstream ss;
    ss << in.rdbuf();
    return deserialize_checkpoint(ss.str());
}

} // namespace safemon::fc
