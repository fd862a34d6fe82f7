#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "refocus/reward.hpp"
#include "refocus/rng.hpp"
#include "testutil.hpp"

using namespace refocus;

TEST_CASE("margin reward worked examples") {
    Eigen::VectorXd z(4);
    z << 2, 0, 0, 0;
    auto rec = reward::margin_reward(z, 0);
    CHECK(rec.margin == doctest::Approx(std::tanh(1.0)).epsilon(1e-12));
    CHECK(rec.margin == doctest::Approx(0.761594).epsilon(1e-5));
    CHECK(rec.hardest_negative == 1);  // tie among negatives breaks low

    z << -2, 0, 0, 0;
    rec = reward::margin_reward(z, 0);
    CHECK(rec.margin == doctest::Approx(std::tanh(-1.0)).epsilon(1e-12));

    z << 1, 0.5, 1, 0;
    rec = reward::margin_reward(z, 0);
    CHECK(rec.margin == 0.0);
    CHECK(rec.hardest_negative == 2);
}

TEST_CASE("margin reward validates inputs") {
    Eigen::VectorXd one(1);
    one << 0.0;
    CHECK_THROWS_AS(reward::margin_reward(one, 0), std::invalid_argument);
    Eigen::VectorXd bad(3);
    bad << 1.0, std::nan(""), 0.0;
    CHECK_THROWS_AS(reward::margin_reward(bad, 0), std::invalid_argument);
}

TEST_CASE("tanh form matches the confidence-ratio form") {
    Rng rng(41);
    for (int i = 0; i < 10000; ++i) {
        Eigen::VectorXd z(4);
        for (int m = 0; m < 4; ++m) z[m] = rng.uniform(-10.0, 10.0);
        const auto rec = reward::margin_reward(z, 0);
        const double ratio = testutil::margin_ratio_form(z[0], z[rec.hardest_negative]);
        CHECK(std::abs(rec.margin - ratio) < 1e-12);
    }
}

TEST_CASE("margin is monotone in the correct logit and antisymmetric") {
    Rng rng(17);
    for (int i = 0; i < 1000; ++i) {
        Eigen::VectorXd z(3);
        for (int m = 0; m < 3; ++m) z[m] = rng.uniform(-5.0, 5.0);
        const double m0 = reward::margin_reward(z, 0).margin;
        Eigen::VectorXd z2 = z;
        z2[0] += rng.uniform(0.01, 2.0);
        CHECK(reward::margin_reward(z2, 0).margin > m0);

        // swapping the correct and hardest-negative logits flips the sign
        const auto rec = reward::margin_reward(z, 0);
        Eigen::VectorXd zs = z;
        std::swap(zs[0], zs[rec.hardest_negative]);
        const auto swapped = reward::margin_reward(zs, 0);
        if (swapped.hardest_negative == rec.hardest_negative)
            CHECK(swapped.margin == doctest::Approx(-rec.margin).epsilon(1e-12));
    }
}

TEST_CASE("group advantages worked examples") {
    {
        std::vector<double> r = {1.0, -1.0};
        const auto g = reward::group_advantages(r, 1e-9);
        CHECK(g.advantages[0] == doctest::Approx(1.0).epsilon(1e-6));
        CHECK(g.advantages[1] == doctest::Approx(-1.0).epsilon(1e-6));
    }
    {
        std::vector<double> r = {0.5, 0.5, 0.5};
        const auto g = reward::group_advantages(r);
        for (double a : g.advantages) CHECK(a == 0.0);
    }
    {
        std::vector<double> r = {0.2, 0.4, 0.6};
        const auto g = reward::group_advantages(r, 1e-12);
        CHECK(g.advantages[0] == doctest::Approx(-1.224745).epsilon(1e-5));
        CHECK(g.advantages[1] == doctest::Approx(0.0).epsilon(1e-9));
        CHECK(g.advantages[2] == doctest::Approx(1.224745).epsilon(1e-5));
    }
    std::vector<double> single = {1.0};
    CHECK_THROWS_AS(reward::group_advantages(single), std::invalid_argument);
}

TEST_CASE("advantages are invariant to shift and positive scale") {
    Rng rng(23);
    for (int rep = 0; rep < 200; ++rep) {
        std::vector<double> r(8);
        for (double& x : r) x = rng.uniform(-1.0, 1.0);
        const auto base = reward::group_advantages(r, 1e-9);
        const double shift = rng.uniform(-3.0, 3.0);
        const double scale = rng.uniform(0.5, 4.0);
        std::vector<double> shifted = r, scaled = r;
        for (double& x : shifted) x += shift;
        for (double& x : scaled) x *= scale;
        const auto gs = reward::group_advantages(shifted, 1e-9);
        const auto gc = reward::group_advantages(scaled, 1e-9);
        for (std::size_t i = 0; i < r.size(); ++i) {
            CHECK(gs.advantages[i] == doctest::Approx(base.advantages[i]).epsilon(1e-9));
            CHECK(gc.advantages[i] == doctest::Approx(base.advantages[i]).epsilon(1e-6));
        }
    }
}

TEST_CASE("normalized advantages have zero mean and near-unit std") {
    Rng rng(5);
    std::vector<double> r(16);
    for (double& x : r) x = rng.uniform(-1.0, 1.0);
    const auto g = reward::group_advantages(r, 1e-9);
    double mean = 0.0, var = 0.0;
    for (double a : g.advantages) mean += a;
    mean /= g.advantages.size();
    for (double a : g.advantages) var += (a - mean) * (a - mean);
    var /= g.advantages.size();
    CHECK(std::abs(mean) < 1e-9);
    CHECK(std::sqrt(var) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("reward variance worked examples") {
    std::vector<double> equal(16, 0.3);
    CHECK(reward::reward_variance(equal) < 1e-30);  // rounding of 0.3 - mean

    std::vector<double> pm;
    for (int i = 0; i < 8; ++i) pm.push_back(1.0);
    for (int i = 0; i < 8; ++i) pm.push_back(-1.0);
    CHECK(reward::reward_variance(pm) == doctest::Approx(1.0).epsilon(1e-12));

    std::vector<double> pair = {0.0, 1.0};
    CHECK(reward::reward_variance(pair) == doctest::Approx(0.25).epsilon(1e-12));

    std::vector<double> single = {0.0};
    CHECK_THROWS_AS(reward::reward_variance(single), std::invalid_argument);
}
