#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "refocus/analysis.hpp"
#include "refocus/rng.hpp"

using namespace refocus;

namespace {

policy::Dims small_dims() {
    policy::Dims d;
    d.d_in = 3;
    d.d_e = 4;
    d.d_model = 4;
    d.d_g = 4;
    d.d_q = 2;
    return d;
}

env::Episode small_episode(int T, std::uint64_t seed) {
    env::EnvConfig cfg;
    cfg.T = T;
    cfg.d_in = 3;
    cfg.d_q = 2;
    cfg.n_needle = 1;
    return env::gen_episode(cfg, seed);
}

}  // namespace

TEST_CASE("selection pdf is a distribution and is deterministic") {
    const auto d = small_dims();
    const auto p = policy::init_params(d, 2);
    const auto ep = small_episode(20, 4);
    const auto pdf = analysis::estimate_selection_pdf(p, ep, 5, 32, 9);
    CHECK(pdf.p.size() == 20);
    CHECK(std::abs(pdf.p.sum() - 1.0) < 1e-12);
    CHECK(pdf.p.minCoeff() >= 0.0);
    CHECK(pdf.episode_id == ep.id);
    const auto again = analysis::estimate_selection_pdf(p, ep, 5, 32, 9);
    CHECK(pdf.p == again.p);
    CHECK_THROWS_AS(analysis::estimate_selection_pdf(p, ep, 5, 0, 9), std::invalid_argument);
}

TEST_CASE("a uniform scorer yields the uniform selection pdf") {
    const auto d = small_dims();
    auto p = policy::init_params(d, 3);
    p.W_k.setZero();  // every step distribution is uniform over the pool
    const auto ep = small_episode(16, 1);
    const auto pdf = analysis::estimate_selection_pdf(p, ep, 4, 4096, 13);
    for (int t = 0; t < 16; ++t) CHECK(std::abs(pdf.p[t] - 1.0 / 16.0) < 0.01);
}

TEST_CASE("a single run averages the recorded step distributions") {
    const auto d = small_dims();
    const auto p = policy::init_params(d, 6);
    const auto ep = small_episode(10, 2);
    const auto pdf = analysis::estimate_selection_pdf(p, ep, 4, 1, 21);

    // replay run 0 by hand through the same stream layout
    const auto emb = policy::frame_embeddings(p, ep);
    Eigen::VectorXd accum = Eigen::VectorXd::Zero(ep.T);
    Rng rng(stream_seed(stream_seed(21ull, hash_str(ep.id), 0x504446ull), 0ull));
    policy::sample_one(p, emb, ep, 4, rng, &accum);
    CHECK((pdf.p - accum / 4.0).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("distances vanish between identical distributions") {
    Eigen::VectorXd p(4);
    p << 0.1, 0.2, 0.3, 0.4;
    const auto t = analysis::distribution_distances(p, p);
    CHECK(t.js == 0.0);
    CHECK(std::abs(t.sym_kl) < 1e-15);
    CHECK(t.w1 == 0.0);
}

TEST_CASE("distance worked examples: disjoint deltas") {
    // point masses 10 frames apart
    Eigen::VectorXd p = Eigen::VectorXd::Zero(16), q = Eigen::VectorXd::Zero(16);
    p[2] = 1.0;
    q[12] = 1.0;
    const auto t = analysis::distribution_distances(p, q);
    CHECK(t.js == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(t.w1 == doctest::Approx(10.0).epsilon(1e-12));
    // smoothed symmetric KL of near-disjoint deltas: 2 * (1-lam) * log(...)
    CHECK(t.sym_kl > 20.0);
    CHECK(std::isfinite(t.sym_kl));
}

TEST_CASE("distances are symmetric and respect scale of separation") {
    Rng rng(77);
    Eigen::VectorXd p(8), q(8);
    for (int t = 0; t < 8; ++t) {
        p[t] = rng.uniform(0.01, 1.0);
        q[t] = rng.uniform(0.01, 1.0);
    }
    p /= p.sum();
    q /= q.sum();
    const auto a = analysis::distribution_distances(p, q);
    const auto b = analysis::distribution_distances(q, p);
    CHECK(a.js == doctest::Approx(b.js).epsilon(1e-12));
    CHECK(a.sym_kl == doctest::Approx(b.sym_kl).epsilon(1e-12));
    CHECK(a.w1 == doctest::Approx(b.w1).epsilon(1e-12));
    CHECK(a.js <= std::log(2.0) + 1e-12);

    Eigen::VectorXd bad(7);
    CHECK_THROWS_AS(analysis::distribution_distances(p, bad), std::invalid_argument);
}

TEST_CASE("pairwise diversity equals the brute-force pair mean") {
    const auto d = small_dims();
    std::vector<analysis::SelectionPdf> pdfs;
    for (int i = 0; i < 4; ++i) {
        const auto p = policy::init_params(d, 40 + i);
        pdfs.push_back(analysis::estimate_selection_pdf(p, small_episode(12, i), 3, 64, 5));
    }
    const auto mean = analysis::pairwise_diversity(pdfs);
    double js = 0.0, kl = 0.0, w1 = 0.0;
    int n = 0;
    for (int i = 0; i < 4; ++i)
        for (int j = i + 1; j < 4; ++j) {
            const auto t = analysis::distribution_distances(pdfs[i].p, pdfs[j].p);
            js += t.js;
            kl += t.sym_kl;
            w1 += t.w1;
            ++n;
        }
    CHECK(mean.js == doctest::Approx(js / n).epsilon(1e-12));
    CHECK(mean.sym_kl == doctest::Approx(kl / n).epsilon(1e-12));
    CHECK(mean.w1 == doctest::Approx(w1 / n).epsilon(1e-12));

    std::vector<analysis::SelectionPdf> one = {pdfs[0]};
    CHECK_THROWS_AS(analysis::pairwise_diversity(one), std::invalid_argument);
}

TEST_CASE("entropy estimator recovers closed forms") {
    Rng rng(31415);
    const int n = 20000;
    std::vector<double> u(n), g(n);
    for (int i = 0; i < n; ++i) {
        u[i] = rng.uniform();
        g[i] = rng.normal();
    }
    // H(U(0,1)) = 0, H(N(0,1)) = 0.5 ln(2 pi e) = 1.41894
    CHECK(std::abs(analysis::kl_entropy(u, 4)) < 0.05);
    CHECK(std::abs(analysis::kl_entropy(g, 4) - 1.4189385) < 0.05);

    // scaling law: H(cX) = H(X) + ln c
    std::vector<double> scaled = u;
    for (double& x : scaled) x *= 10.0;
    CHECK(std::abs(analysis::kl_entropy(scaled, 4) - analysis::kl_entropy(u, 4) -
                   std::log(10.0)) < 0.02);

    std::vector<double> few = {0.0, 1.0};
    CHECK_THROWS_AS(analysis::kl_entropy(few, 4), std::invalid_argument);
}

TEST_CASE("entropy estimator survives exact ties") {
    std::vector<double> ties;
    Rng rng(8);
    for (int i = 0; i < 500; ++i) ties.push_back(std::floor(rng.uniform() * 10.0));
    const double h = analysis::kl_entropy(ties, 4);
    CHECK(std::isfinite(h));
}

TEST_CASE("needle grid cells hold the needle pdf mass") {
    const auto d = small_dims();
    auto p = policy::init_params(d, 12);
    p.W_k.setZero();  // uniform policy: every cell should be near 1/T
    analysis::EnvFactory factory = [](int T, double pos) {
        env::EnvConfig cfg;
        cfg.T = T;
        cfg.d_in = 3;
        cfg.d_q = 2;
        cfg.n_needle = 1;
        const int needle = std::min(T - 1, static_cast<int>(pos * T));
        return env::gen_episode_with_needles(cfg, 99, {needle});
    };
    std::vector<int> Ts = {16, 32};
    std::vector<double> positions = {0.1, 0.5, 0.9};
    const auto grid = analysis::vniah_sweep(p, factory, Ts, positions, 4, 2048, 3);
    CHECK(grid.cells.rows() == 2);
    CHECK(grid.cells.cols() == 3);
    for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 3; ++c)
            CHECK(std::abs(grid.cells(r, c) - 1.0 / Ts[r]) < 0.02);
    const std::string csv = analysis::niah_grid_csv(grid);
    CHECK(csv.find("frames,pos_0.1,pos_0.5,pos_0.9\n16,") != std::string::npos);

    analysis::EnvFactory multi = [](int T, double) {
        env::EnvConfig cfg;
        cfg.T = T;
        cfg.d_in = 3;
        cfg.d_q = 2;
        cfg.n_needle = 2;
        return env::gen_episode(cfg, 1);
    };
    CHECK_THROWS_AS(analysis::vniah_sweep(p, multi, Ts, positions, 4, 8, 3),
                    std::invalid_argument);
}

TEST_CASE("likelihood bins: both sides equal the full pool at k = 100") {
    const auto d = small_dims();
    const auto p = policy::init_params(d, 7);
    std::vector<env::Episode> eps = {small_episode(12, 5), small_episode(12, 6)};
    env::OracleConfig oc;
    filter::OracleFn oracle = [&](const env::Episode& ep, std::span<const int> subset) {
        return env::oracle_logits(ep, subset, oc);
    };
    std::vector<int> ks = {100};
    // over-100% is every frame, under-100% is the complement of over-0%,
    // i.e. also every frame; with T' = T both sides evaluate the full pool
    const auto table = analysis::likelihood_bins_eval(p, eps, oracle, ks, 12, 8, 64, 11);
    CHECK(table.over_accuracy[0] == table.under_accuracy[0]);
    CHECK(table.exhaustion_flags[0] == 1);
}

TEST_CASE("likelihood bins: subset-insensitive oracle scores both sides equally") {
    const auto d = small_dims();
    const auto p = policy::init_params(d, 8);
    std::vector<env::Episode> eps = {small_episode(16, 9)};
    eps[0].correct = 1;
    filter::OracleFn flat = [](const env::Episode&, std::span<const int>) {
        Eigen::VectorXd z = Eigen::VectorXd::Zero(4);
        z[1] = 2.0;
        return z;
    };
    std::vector<int> ks = {20, 40, 60, 80};
    const auto table = analysis::likelihood_bins_eval(p, eps, flat, ks, 4, 4, 32, 1);
    for (std::size_t i = 0; i < ks.size(); ++i) {
        CHECK(table.over_accuracy[i] == 1.0);
        CHECK(table.under_accuracy[i] == 1.0);
    }
    const std::string csv = analysis::bin_table_csv(table);
    CHECK(csv.rfind("k,over_accuracy,under_accuracy,exhausted\n", 0) == 0);
    CHECK(csv.find("\n20,1,1,") != std::string::npos);
}

TEST_CASE("likelihood bins flag exhausted sides") {
    const auto d = small_dims();
    auto p = policy::init_params(d, 14);
    p.s = 50.0;  // sharply peaked: the over-20% side collapses to a few frames
    std::vector<env::Episode> eps = {small_episode(16, 3)};
    env::OracleConfig oc;
    filter::OracleFn oracle = [&](const env::Episode& ep, std::span<const int> subset) {
        return env::oracle_logits(ep, subset, oc);
    };
    std::vector<int> ks = {20};
    const auto table = analysis::likelihood_bins_eval(p, eps, oracle, ks, 8, 4, 32, 2);
    CHECK(table.exhaustion_flags[0] == 1);
}
