#include <benchmark/benchmark.h>

#include "refocus/analysis.hpp"
#include "refocus/filterpipe.hpp"
#include "refocus/policy.hpp"
#include "refocus/reward.hpp"

using namespace refocus;

namespace {

env::Episode bench_episode(int T) {
    env::EnvConfig cfg;
    cfg.T = T;
    cfg.n_needle = 3;
    return env::gen_episode(cfg, 7);
}

policy::PolicyParams bench_params() { return policy::init_params(policy::Dims{}, 7); }

void BM_FrameEmbeddings(benchmark::State& state) {
    const auto p = bench_params();
    const auto ep = bench_episode(static_cast<int>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(policy::frame_embeddings(p, ep));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_FrameEmbeddings)->Arg(64)->Arg(128)->Arg(512);

void BM_SampleSubsets(benchmark::State& state) {
    const auto p = bench_params();
    const auto ep = bench_episode(128);
    std::uint64_t seed = 0;
    for (auto _ : state)
        benchmark::DoNotOptimize(policy::sample_subsets(p, ep, static_cast<int>(state.range(0)),
                                                        16, ++seed));
}
BENCHMARK(BM_SampleSubsets)->Arg(4)->Arg(8)->Arg(32);

void BM_ObjectiveAndGradient(benchmark::State& state) {
    const auto p = bench_params();
    const auto ep = bench_episode(128);
    policy::BatchItem item;
    item.episode = &ep;
    item.subsets = policy::sample_subsets(p, ep, 8, 16, 1);
    for (std::size_t j = 0; j < item.subsets.size(); ++j) {
        item.old_logps.push_back(item.subsets[j].logp());
        item.advantages.push_back(j % 2 == 0 ? 1.0 : -1.0);
    }
    std::vector<policy::BatchItem> batch = {item};
    policy::PolicyParams grads = policy::PolicyParams::zeros(p.dims);
    for (auto _ : state)
        benchmark::DoNotOptimize(policy::objective_and_gradient(
            p, batch, 0.002, policy::EntropyMode::kMeanOverSteps, &grads,
            static_cast<int>(state.range(0))));
}
BENCHMARK(BM_ObjectiveAndGradient)->Arg(1)->Arg(4);

void BM_MarginReward(benchmark::State& state) {
    Rng rng(3);
    Eigen::VectorXd z(4);
    for (int m = 0; m < 4; ++m) z[m] = rng.uniform(-2.0, 2.0);
    for (auto _ : state) benchmark::DoNotOptimize(reward::margin_reward(z, 0));
}
BENCHMARK(BM_MarginReward);

void BM_SelectionPdf(benchmark::State& state) {
    const auto p = bench_params();
    const auto ep = bench_episode(128);
    for (auto _ : state)
        benchmark::DoNotOptimize(analysis::estimate_selection_pdf(p, ep, 8, 64, 5));
}
BENCHMARK(BM_SelectionPdf);

void BM_ProbeSubsets(benchmark::State& state) {
    const auto ep = bench_episode(static_cast<int>(state.range(0)));
    const auto spec = filter::temporal_windows(ep.T);
    for (auto _ : state) benchmark::DoNotOptimize(filter::build_probe_subsets(ep, spec));
}
BENCHMARK(BM_ProbeSubsets)->Arg(64)->Arg(512);

}  // namespace

BENCHMARK_MAIN();
