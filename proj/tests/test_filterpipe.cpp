#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <set>

#include "refocus/filterpipe.hpp"
#include "refocus/reward.hpp"

using namespace refocus;

namespace {

std::vector<env::Episode> small_dataset(int n, int T) {
    env::EnvConfig cfg;
    cfg.T = T;
    cfg.n_needle = 2;
    std::vector<env::Episode> out;
    for (int i = 0; i < n; ++i) out.push_back(env::gen_episode(cfg, 2000 + i));
    return out;
}

std::vector<int> range_vec(int lo, int hi) {
    std::vector<int> v;
    for (int t = lo; t < hi; ++t) v.push_back(t);
    return v;
}

}  // namespace

TEST_CASE("window layout for T = 16") {
    const auto spec = filter::temporal_windows(16);
    CHECK(spec.w == 2);
    CHECK(spec.stride == 1);
    for (int i = 0; i < 7; ++i) CHECK(spec.windows[i] == range_vec(i, i + 2));
    // wrap-around window: [0, 1) u [7, 16)
    std::vector<int> w8 = {0};
    for (int t = 7; t < 16; ++t) w8.push_back(t);
    CHECK(spec.windows[7] == w8);

    // complements partition against their windows
    for (int i = 0; i < 8; ++i) {
        std::set<int> all(spec.windows[i].begin(), spec.windows[i].end());
        all.insert(spec.complements[i].begin(), spec.complements[i].end());
        CHECK(static_cast<int>(all.size()) == 16);
        CHECK(spec.windows[i].size() + spec.complements[i].size() == 16);
    }
}

TEST_CASE("window layout for T = 80") {
    const auto spec = filter::temporal_windows(80);
    CHECK(spec.w == 10);
    CHECK(spec.stride == 5);
    CHECK(spec.windows[0] == range_vec(0, 10));
    CHECK(spec.windows[6] == range_vec(30, 40));
    std::vector<int> w8 = range_vec(0, 5);
    for (int t = 35; t < 80; ++t) w8.push_back(t);
    CHECK(spec.windows[7] == w8);
}

TEST_CASE("windows for T = 128 cover the full horizon") {
    const auto spec = filter::temporal_windows(128);
    CHECK(spec.w == 16);
    CHECK(spec.stride == 8);
    std::set<int> covered;
    for (const auto& w : spec.windows) covered.insert(w.begin(), w.end());
    CHECK(static_cast<int>(covered.size()) == 128);

    CHECK_THROWS_AS(filter::temporal_windows(7), std::invalid_argument);
}

TEST_CASE("probe subsets: 16 regions, membership, dedup, determinism") {
    const auto data = small_dataset(1, 64);
    const auto spec = filter::temporal_windows(64, 5);
    const auto subsets = filter::build_probe_subsets(data[0], spec);
    CHECK(subsets.size() == 16);
    for (int i = 0; i < 16; ++i) {
        const auto& region = i < 8 ? spec.windows[i] : spec.complements[i - 8];
        const std::set<int> allowed(region.begin(), region.end());
        const std::size_t expect = std::min<std::size_t>(5, region.size());
        CHECK(subsets[i].size() == expect);
        CHECK(std::is_sorted(subsets[i].begin(), subsets[i].end()));
        CHECK(std::set<int>(subsets[i].begin(), subsets[i].end()).size() == expect);
        for (int t : subsets[i]) CHECK(allowed.count(t) == 1);
    }
    // same episode, same subsets; different episode id, different draws
    CHECK(filter::build_probe_subsets(data[0], spec) == subsets);
    auto other = data[0];
    other.id = "different";
    CHECK(filter::build_probe_subsets(other, spec) != subsets);
}

TEST_CASE("small regions are taken whole") {
    const auto data = small_dataset(1, 16);
    const auto spec = filter::temporal_windows(16, 32);
    const auto subsets = filter::build_probe_subsets(data[0], spec);
    // windows of size 2 with k = 32: the probe is the window itself
    for (int i = 0; i < 7; ++i) CHECK(subsets[i] == spec.windows[i]);
}

TEST_CASE("a subset-insensitive oracle drives every variance to zero") {
    const auto data = small_dataset(3, 32);
    filter::OracleFn flat = [](const env::Episode&, std::span<const int>) {
        Eigen::VectorXd z = Eigen::VectorXd::Zero(4);
        z[0] = 0.7;
        return z;
    };
    const auto [kept, report] = filter::score_and_filter(data, flat, 0.21);
    CHECK(kept.empty());
    CHECK(report.retention_rate == 0.0);
    for (const auto& rec : report.episodes) {
        CHECK(rec.variance < 1e-30);
        CHECK(!rec.retained);
        for (double m : rec.margins) CHECK(m == rec.margins[0]);
    }
}

TEST_CASE("retention is monotone in tau and complete at tau below zero") {
    const auto data = small_dataset(12, 32);
    env::OracleConfig oc;
    filter::OracleFn oracle = [&](const env::Episode& ep, std::span<const int> subset) {
        return env::oracle_logits(ep, subset, oc);
    };
    std::vector<double> taus = {-1.0, 0.01, 0.1, 0.3, 1.1};
    std::size_t prev = data.size() + 1;
    for (double tau : taus) {
        const auto [kept, report] = filter::score_and_filter(data, oracle, tau);
        CHECK(kept.size() <= prev);
        prev = kept.size();
        CHECK(report.retention_rate ==
              doctest::Approx(static_cast<double>(kept.size()) / data.size()).epsilon(1e-12));
    }
    // tau = -1 keeps everything; variance past tanh range keeps nothing
    CHECK(filter::score_and_filter(data, oracle, -1.0).first.size() == data.size());
    CHECK(filter::score_and_filter(data, oracle, 1.1).first.empty());
}

TEST_CASE("filter variances agree with the reward module") {
    const auto data = small_dataset(2, 32);
    env::OracleConfig oc;
    filter::OracleFn oracle = [&](const env::Episode& ep, std::span<const int> subset) {
        return env::oracle_logits(ep, subset, oc);
    };
    const auto [kept, report] = filter::score_and_filter(data, oracle, 0.0);
    for (const auto& rec : report.episodes) {
        std::vector<double> m(rec.margins.begin(), rec.margins.end());
        CHECK(rec.variance == doctest::Approx(reward::reward_variance(m)).epsilon(1e-14));
    }
}

TEST_CASE("report serializes with a 20-bin histogram") {
    const auto data = small_dataset(6, 24);
    env::OracleConfig oc;
    filter::OracleFn oracle = [&](const env::Episode& ep, std::span<const int> subset) {
        return env::oracle_logits(ep, subset, oc);
    };
    const auto [kept, report] = filter::score_and_filter(data, oracle, 0.05);
    CHECK(report.variance_histogram.size() == 20);
    int total = 0;
    for (int c : report.variance_histogram) total += c;
    CHECK(total == 6);
    const std::string json = filter::report_to_json(report);
    CHECK(json.find("\"retention_rate\"") != std::string::npos);
    CHECK(json.find("\"variance_histogram\"") != std::string::npos);
}
