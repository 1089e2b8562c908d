#include "safemon/sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "safemon/parallel.hpp"

namespace safemon::sim {

namespace {

std::mt19937_64 make_stream(std::uint64_t seed, std::uint64_t index, std::uint32_t tag) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                      tag};
    return std::mt19937_64(seq);
}

constexpr std::uint32_t kLhsTag = 0x4c485301;
constexpr std::uint32_t kEpisodeTag = 0x45504901;

} // namespace

void SimConfig::validate() const {
    require(n_scenarios >= 1, "n_scenarios must be >= 1");
    require(episode_len >= 1, "episode_len must be >= 1");
    require(dt_seconds > 0.0, "dt_seconds must be > 0");
    for (double g : {speed_mps, k_c, k_h, u_max, noise_base, noise_cloud_gain, noise_tod_gain,
                     bias_gain, he_noise_ratio})
        require(std::isfinite(g), "simulator gains must be finite");
    require(u_max > 0.0, "u_max must be > 0");
    require(noise_base >= 0.0 && noise_cloud_gain >= 0.0 && noise_tod_gain >= 0.0 &&
                he_noise_ratio >= 0.0,
            "noise gains must be >= 0");
}

std::vector<Scenario> lhs_sample(int n, const std::vector<ScenarioDim>& dims, std::uint64_t seed) {
    require(n >= 1, "lhs_sample needs n >= 1");
    require(!dims.empty(), "lhs_sample needs at least one dimension");
    auto rng = make_stream(seed, 0, kLhsTag);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    const auto un = static_cast<std::size_t>(n);
    std::vector<std::vector<double>> columns(dims.size(), std::vector<double>(un));
    std::vector<std::size_t> strata(un);
    for (std::size_t d = 0; d < dims.size(); ++d) {
        std::iota(strata.begin(), strata.end(), std::size_t{0});
        std::shuffle(strata.begin(), strata.end(), rng);
        const double width = (dims[d].hi - dims[d].lo) / n;
        for (std::size_t i = 0; i < un; ++i) {
            double v = dims[d].lo + (static_cast<double>(strata[i]) + unit(rng)) * width;
            // Keep the draw inside its stratum under rounding.
            const double top = dims[d].lo + static_cast<double>(strata[i] + 1) * width;
            if (v >= top) v = std::nextafter(top, dims[d].lo);
            columns[d][i] = std::clamp(v, dims[d].lo, dims[d].hi);
        }
    }

    std::vector<Scenario> out;
    out.reserve(un);
    for (std::size_t i = 0; i < un; ++i) {
        std::vector<double> values(dims.size());
        for (std::size_t d = 0; d < dims.size(); ++d) values[d] = columns[d][i];
        out.emplace_back(std::move(values), dims);
    }
    return out;
}

Episode simulate_episode(const Scenario& scenario, const SimConfig& cfg,
                         const std::vector<SafetyRequirement>& requirements,
                         std::uint64_t episode_index) {
    cfg.validate();
    const double tod = scenario[scenario.index_of("time_of_day")];
    const double cloud = scenario[scenario.index_of("cloud_cover")];
    double cte = scenario[scenario.index_of("cte_start")];
    double he = scenario[scenario.index_of("he_start")];

    const double sigma = cfg.noise_base + cfg.noise_cloud_gain * cloud + cfg.noise_tod_gain * tod;
    const double bias = cfg.bias_gain * (cloud - 0.5);
    auto rng = make_stream(cfg.seed, episode_index, kEpisodeTag);
    std::normal_distribution<double> normal(0.0, 1.0);

    const auto len = static_cast<Eigen::Index>(cfg.episode_len);
    Episode ep;
    ep.id = fmt::format("ep-{:05d}", episode_index);
    ep.scenario = scenario;
    ep.dt_seconds = cfg.dt_seconds;
    ep.lc_names = {"cte_est", "he_est"};
    ep.state_names = {"cte_act", "he_act"};
    ep.lc_outputs.resize(len, 2);
    ep.raw_state.resize(len, 2);
    ep.requirements = requirements;
    ep.safety_metric.resize(len, static_cast<Eigen::Index>(requirements.size()));

    constexpr double deg = std::numbers::pi / 180.0;
    for (Eigen::Index t = 0; t < len; ++t) {
        if (!std::isfinite(cte) || !std::isfinite(he))
            throw Error(fmt::format("diverged plant at t={} in {}", t, ep.id));
        const double cte_est = cte + bias + sigma * normal(rng);
        const double he_est = he + cfg.he_noise_ratio * sigma * normal(rng);
        ep.raw_state(t, 0) = cte;
        ep.raw_state(t, 1) = he;
        ep.lc_outputs(t, 0) = cte_est;
        ep.lc_outputs(t, 1) = he_est;
        for (std::size_t r = 0; r < requirements.size(); ++r) {
            const auto& req = requirements[r];
            require(req.channel < 2, fmt::format("requirement '{}' channel out of range", req.name));
            ep.safety_metric(t, static_cast<Eigen::Index>(r)) =
                safety_metric_fn(ep.raw_state(t, static_cast<Eigen::Index>(req.channel)),
                                 req.threshold);
        }
        const double u = std::clamp(-cfg.k_c * cte_est - cfg.k_h * he_est, -cfg.u_max, cfg.u_max);
        cte += cfg.speed_mps * std::sin(he * deg) * cfg.dt_seconds;
        he += u * cfg.dt_seconds;
    }
    return ep;
}

std::vector<Episode> generate_dataset(const SimConfig& cfg, const std::vector<ScenarioDim>& dims,
                                      const std::vector<SafetyRequirement>& requirements,
                                      std::size_t workers) {
    cfg.validate();
    const auto scenarios = lhs_sample(cfg.n_scenarios, dims, cfg.seed);
    std::vector<Episode> episodes(scenarios.size());
    parallel_for(scenarios.size(), workers, [&](std::size_t i) {
        episodes[i] = simulate_episode(scenarios[i], cfg, requirements, i);
    });
    return episodes;
}

} // namespace safemon::sim
