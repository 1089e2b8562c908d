#pragma once

#include <cstdint>
#include <vector>

#include "safemon/core.hpp"

namespace safemon::sim {

/// Closed-loop centerline-tracking plant with a noisy, biased estimator
/// standing in for the learned component.
///
/// Plant (he in degrees):
///   cte <- cte + speed * sin(he) * dt
///   he  <- he + u * dt
/// Estimator:
///   cte_est = cte + bias + eps,  he_est = he + eps_he
///   sigma   = noise_base + noise_cloud_gain * cloud + noise_tod_gain * tod
///   bias    = bias_gain * (cloud - 0.5)
///   eps ~ N(0, sigma^2), eps_he ~ N(0, (he_noise_ratio * sigma)^2)
/// Controller:
///   u = clamp(-k_c * cte_est - k_h * he_est, -u_max, u_max)
///
/// The defaults put roughly 45% of episodes over the cte threshold at least
/// once on the default scenario box.
struct SimConfig {
    int n_scenarios = 200;
    int episode_len = 200;
    double dt_seconds = 1.0;
    double speed_mps = 5.0;
    double k_c = 0.5;  // per meter
    double k_h = 0.6;  // per degree
    double u_max = 5.0; // degrees per second
    double noise_base = 0.1;
    double noise_cloud_gain = 0.3;
    double noise_tod_gain = 0.1;
    double bias_gain = 10.5;
    double he_noise_ratio = 1.0;
    std::uint64_t seed = 42;

    void validate() const;
};

/// Latin hypercube sample: per dimension, exactly one value in each of the n
/// equal-width strata of [lo, hi).
std::vector<Scenario> lhs_sample(int n, const std::vector<ScenarioDim>& dims, std::uint64_t seed);

/// Simulates one episode. The noise stream depends only on (cfg.seed,
/// episode_index). Throws "diverged plant" if the state becomes non-finite.
Episode simulate_episode(const Scenario& scenario, const SimConfig& cfg,
                         const std::vector<SafetyRequirement>& requirements,
                         std::uint64_t episode_index = 0);

std::vector<Episode> generate_dataset(const SimConfig& cfg, const std::vector<ScenarioDim>& dims,
                                      const std::vector<SafetyRequirement>& requirements,
                                      std::size_t workers = 1);

} // namespace safemon::sim
