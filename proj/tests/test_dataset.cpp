#include "doctest.h"

#include <map>
#include <random>
#include <sstream>

#include "safemon/dataset.hpp"
#include "safemon/sim.hpp"

using namespace safemon;

namespace {

std::vector<Episode> small_dataset(int n, int len, std::uint64_t seed = 42) {
    sim::SimConfig cfg;
    cfg.n_scenarios = n;
    cfg.episode_len = len;
    cfg.seed = seed;
    return sim::generate_dataset(cfg, default_scenario_dims(), default_requirements());
}

Episode synthetic_episode(std::size_t len) {
    auto ep = small_dataset(1, static_cast<int>(len)).front();
    return ep;
}

std::vector<long> brute_origins(const data::SplitSpec& s, data::Segment seg, const WindowConfig& wc,
                                int stride) {
    std::vector<long> valid;
    const long k = wc.lookback(), h = wc.horizon();
    const long lo = static_cast<long>(s.begin(seg)), hi = static_cast<long>(s.end(seg));
    for (long t = 0; t < static_cast<long>(s.length); ++t) {
        bool ok = t - k + 1 >= 0;
        for (long j = 1; j <= h; ++j) ok = ok && t + j >= lo && t + j < hi;
        if (ok) valid.push_back(t);
    }
    std::vector<long> out;
    for (std::size_t i = 0; i < valid.size(); i += static_cast<std::size_t>(stride)) out.push_back(valid[i]);
    return out;
}

} // namespace

TEST_SUITE("dataset") {

TEST_CASE("dataset round-trips losslessly") {
    const auto eps = small_dataset(5, 60);
    std::stringstream ss;
    data::write_dataset(eps, ss);
    const auto back = data::read_dataset(ss);
    REQUIRE(back.size() == eps.size());
    for (std::size_t i = 0; i < eps.size(); ++i) CHECK(back[i] == eps[i]);
    CHECK(data::dataset_hash(back) == data::dataset_hash(eps));
}

TEST_CASE("empty input is an empty dataset") {
    std::stringstream ss("");
    CHECK(data::read_dataset(ss).empty());
}

TEST_CASE("malformed records report the line") {
    const auto eps = small_dataset(1, 20);
    std::string line = data::format_episode(eps[0]);
    auto pos = line.find("\"cte\":[");
    REQUIRE(pos != std::string::npos);
    line.insert(pos + 7, "1.0,");
    std::stringstream ss(data::format_episode(eps[0]) + "\n" + line + "\n");
    CHECK_THROWS_WITH_AS(data::read_dataset(ss), doctest::Contains("line 2"), Error);
    CHECK_THROWS_AS(data::parse_episode("{not json", 1), Error);
}

TEST_CASE("normalization statistics") {
    Episode ep = synthetic_episode(10);
    ep.lc_outputs.col(0).setConstant(4.0);
    for (int t = 0; t < 10; ++t) ep.lc_outputs(t, 1) = 1.0 + t % 3;
    data::SplitSpec s{3, 4, 10};
    const auto norm = data::fit_norm({ep}, {s});
    CHECK(norm.at("he_est").mean == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(norm.at("he_est").std == doctest::Approx(0.816496580927726).epsilon(1e-12));
    CHECK(norm.at("cte_est").std == data::NormStats::kMinStd);
    CHECK(norm.apply("cte_est", 4.0) == 0.0);

    std::mt19937_64 rng(5);
    std::normal_distribution<double> nd(0.0, 30.0);
    const auto eps = small_dataset(3, 50);
    std::vector<data::SplitSpec> splits;
    for (const auto& e : eps) splits.push_back(data::split_episode(e));
    const auto n2 = data::fit_norm(eps, splits);
    for (int i = 0; i < 1000; ++i) {
        const double x = nd(rng);
        for (const auto& name : n2.names()) CHECK(std::abs(n2.invert(name, n2.apply(name, x)) - x) <= 1e-12);
    }
}

TEST_CASE("normalization uses training steps only") {
    auto eps = small_dataset(4, 100);
    std::vector<data::SplitSpec> splits;
    for (const auto& e : eps) splits.push_back(data::split_episode(e));
    const auto before = data::fit_norm(eps, splits);
    for (auto& e : eps)
        for (Eigen::Index t = static_cast<Eigen::Index>(splits[0].train_end); t < 100; ++t) {
            e.lc_outputs.row(t).setConstant(1e6);
            e.safety_metric.row(t).setConstant(1e6);
        }
    CHECK(data::fit_norm(eps, splits) == before);

    double sum = 0.0, sq = 0.0;
    int n = 0;
    for (const auto& e : eps)
        for (Eigen::Index t = 0; t < static_cast<Eigen::Index>(splits[0].train_end); ++t) {
            sum += e.safety_metric(t, 0);
            ++n;
        }
    const double mean = sum / n;
    for (const auto& e : eps)
        for (Eigen::Index t = 0; t < static_cast<Eigen::Index>(splits[0].train_end); ++t)
            sq += (e.safety_metric(t, 0) - mean) * (e.safety_metric(t, 0) - mean);
    CHECK(before.at("cte").mean == doctest::Approx(mean).epsilon(1e-12));
    CHECK(before.at("cte").std == doctest::Approx(std::sqrt(sq / n)).epsilon(1e-12));
}

TEST_CASE("split sizes") {
    auto sizes = [](std::size_t t) {
        const auto s = data::split_episode(synthetic_episode(t));
        return std::array<std::size_t, 3>{s.size(data::Segment::Train), s.size(data::Segment::Val),
                                          s.size(data::Segment::Test)};
    };
    CHECK(sizes(200) == std::array<std::size_t, 3>{140, 20, 40});
    CHECK(sizes(10) == std::array<std::size_t, 3>{7, 1, 2});
    CHECK_THROWS_AS(data::split_episode(synthetic_episode(9)), Error);
}

TEST_CASE("window counts") {
    // 40-step test segment with plenty of earlier context.
    data::SplitSpec s{100, 120, 160};
    const WindowConfig wc(3, 3);
    CHECK(data::window_origins(s, data::Segment::Test, wc).size() == 38);
    CHECK(data::window_origins(s, data::Segment::Test, wc, 3).size() == 13);
    data::SplitSpec tiny{100, 117, 120};
    CHECK(data::window_origins(tiny, data::Segment::Test, wc).size() == 1);
    data::SplitSpec too_short{100, 118, 120};
    CHECK(data::window_origins(too_short, data::Segment::Test, wc).empty());
}

TEST_CASE("window origins match brute-force enumeration") {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t len = 10 + rng() % 60;
        const std::size_t a = 1 + rng() % (len - 2);
        const std::size_t b = a + rng() % (len - a);
        data::SplitSpec s{a, b, len};
        const WindowConfig wc(1 + static_cast<int>(rng() % 4), 1 + static_cast<int>(rng() % 3));
        const int stride = 1 + static_cast<int>(rng() % 4);
        for (auto seg : {data::Segment::Train, data::Segment::Val, data::Segment::Test})
            CHECK(data::window_origins(s, seg, wc, stride) == brute_origins(s, seg, wc, stride));
    }
}

TEST_CASE("window contents and anti look-ahead") {
    const auto eps = small_dataset(3, 120);
    const WindowConfig wc(3, 3);
    const auto d = data::prepare(eps, wc, "cte");
    CHECK(!d.train.empty());
    CHECK(!d.val.empty());
    CHECK(!d.test.empty());
    const auto& s = d.splits[0];
    const auto& ts = d.norm.at("cte");
    std::map<std::string, long> max_val_target, min_test_target;
    for (const auto& w : d.val) {
        auto& m = max_val_target[w.episode_id];
        m = std::max(m, w.origin_t + wc.horizon());
    }
    for (const auto& w : d.test) {
        auto it = min_test_target.find(w.episode_id);
        const long first = w.origin_t + 1;
        if (it == min_test_target.end()) min_test_target[w.episode_id] = first;
        else it->second = std::min(it->second, first);
        CHECK(first >= static_cast<long>(s.val_end));
    }
    for (const auto& [id, lo] : min_test_target) CHECK(lo > max_val_target[id]);
    for (const auto& w : d.train) CHECK(w.origin_t + wc.horizon() < static_cast<long>(s.train_end));

    const auto& w = d.test.front();
    const auto& ep = eps[0];
    REQUIRE(w.episode_id == ep.id);
    for (int i = 0; i < wc.lookback(); ++i) {
        const auto t = w.origin_t - wc.lookback() + 1 + i;
        CHECK(w.past_target[static_cast<std::size_t>(i)] ==
              doctest::Approx((ep.safety_metric(t, 0) - ts.mean) / ts.std));
        CHECK(w.past_covariates(i, 1) == doctest::Approx(d.norm.apply("he_est", ep.lc_outputs(t, 1))));
    }
    for (int i = 0; i < wc.horizon(); ++i) {
        CHECK(w.future_original[static_cast<std::size_t>(i)] == ep.safety_metric(w.origin_t + 1 + i, 0));
        CHECK(w.denorm.apply(w.future_target[static_cast<std::size_t>(i)]) ==
              doctest::Approx(w.future_original[static_cast<std::size_t>(i)]));
    }
}

TEST_CASE("segments that cannot host a window are excluded with a warning") {
    const auto eps = small_dataset(2, 60);
    const auto d = data::prepare(eps, WindowConfig(12, 9), "cte");
    CHECK(d.train.empty());
    CHECK(d.test.empty());
    CHECK(d.warnings.size() == 6);
    const auto ok = data::prepare(eps, WindowConfig(3, 1), "cte");
    CHECK(ok.warnings.empty());
}

}
