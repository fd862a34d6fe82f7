#include "refocus/trainer.hpp"

#include <cmath>
#include <future>
#include <sstream>
#include <stdexcept>

#include "refocus/checkpoint.hpp"
#include "refocus/reward.hpp"

namespace refocus::train {

using policy::BatchItem;
using policy::PolicyParams;

void TrainConfig::validate() const {
    if (N < 2) throw std::invalid_argument("TrainConfig: N must be >= 2");
    if (K < 1) throw std::invalid_argument("TrainConfig: K must be >= 1");
    if (T_sel < 1) throw std::invalid_argument("TrainConfig: T' must be >= 1");
    if (lr_backbone <= 0.0 || lr_heads <= 0.0)
        throw std::invalid_argument("TrainConfig: learning rates must be > 0");
    if (batch_size < 1 || total_steps < 1)
        throw std::invalid_argument("TrainConfig: batch_size and total_steps must be >= 1");
    if (eps_adv <= 0.0) throw std::invalid_argument("TrainConfig: eps_adv must be > 0");
    if (warmup_ratio < 0.0 || warmup_ratio >= 1.0)
        throw std::invalid_argument("TrainConfig: warmup_ratio must be in [0, 1)");
    if (workers < 1) throw std::invalid_argument("TrainConfig: workers must be >= 1");
}

OptimizerState OptimizerState::zeros(const policy::Dims& d) {
    OptimizerState st;
    st.m = PolicyParams::zeros(d);
    st.v = PolicyParams::zeros(d);
    st.step = 0;
    return st;
}

double lr_factor(long step, long total_steps, double warmup_ratio) {
    const double warmup = warmup_ratio * static_cast<double>(total_steps);
    if (warmup > 0.0 && static_cast<double>(step) < warmup)
        return static_cast<double>(step) / warmup;
    const double remaining = static_cast<double>(total_steps) - warmup;
    if (remaining <= 0.0) return 0.0;
    return (static_cast<double>(total_steps) - static_cast<double>(step)) / remaining;
}

double global_grad_norm(const policy::PolicyParams& grads) {
    double sq = 0.0;
    for (const auto& b : policy::blocks(grads))
        for (std::size_t i = 0; i < b.size(); ++i) sq += b.data[i] * b.data[i];
    return std::sqrt(sq);
}

namespace {

bool is_head_block(const std::string& name) {
    return name == "W_k" || name == "W_q" || name == "W_v" || name == "b_v" || name == "u0" ||
           name == "s";
}

bool decays(const std::string& name) {
    return name != "b_v" && name != "u0" && name != "s";
}

}  // namespace

void optimizer_step(OptimizerState& state, PolicyParams& params, PolicyParams& grads, long step,
                    const TrainConfig& cfg) {
    const double norm = global_grad_norm(grads);
    if (!std::isfinite(norm)) throw std::runtime_error("optimizer_step: non-finite gradient");
    if (cfg.grad_clip > 0.0 && norm > cfg.grad_clip) {
        const double scale = cfg.grad_clip / norm;
        for (auto& b : policy::blocks(grads))
            for (std::size_t i = 0; i < b.size(); ++i) b.data[i] *= scale;
    }

    const double factor = lr_factor(step, cfg.total_steps, cfg.warmup_ratio);
    const long t = ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(t));

    auto pb = policy::blocks(params);
    auto gb = policy::blocks(grads);
    auto mb = policy::blocks(state.m);
    auto vb = policy::blocks(state.v);
    for (std::size_t b = 0; b < pb.size(); ++b) {
        const double base_lr = is_head_block(pb[b].name) ? cfg.lr_heads : cfg.lr_backbone;
        const double lr = factor * base_lr;
        const double wd = decays(pb[b].name) ? cfg.weight_decay : 0.0;
        for (std::size_t i = 0; i < pb[b].size(); ++i) {
            const double g = gb[b].data[i];
            double& m = mb[b].data[i];
            double& v = vb[b].data[i];
            m = cfg.adam_beta1 * m + (1.0 - cfg.adam_beta1) * g;
            v = cfg.adam_beta2 * v + (1.0 - cfg.adam_beta2) * g * g;
            const double mhat = m / bc1;
            const double vhat = v / bc2;
            // gradient ascent on the objective, decoupled decay toward 0
            pb[b].data[i] += lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
            pb[b].data[i] -= lr * wd * pb[b].data[i];
        }
    }
}

namespace {

struct EpisodeStepData {
    BatchItem item;
    double reward_sum = 0.0;
    double recall_sum = 0.0;
};

EpisodeStepData sample_and_score(const PolicyParams& snapshot, const env::Episode& ep,
                                 const TrainConfig& cfg, RewardBackend& backend, long step) {
    EpisodeStepData out;
    out.item.episode = &ep;
    const std::uint64_t seed =
        stream_seed(cfg.seed, 0x53414d50ull, static_cast<std::uint64_t>(step));
    out.item.subsets = policy::sample_subsets(snapshot, ep, cfg.T_sel, cfg.N, seed);

    std::vector<double> margins;
    margins.reserve(cfg.N);
    for (const auto& cand : out.item.subsets) {
        out.item.old_logps.push_back(cand.logp());
        Eigen::VectorXd logits = backend.score(ep, cand.time_sorted);
        const auto rec = reward::margin_reward(logits, ep.correct);
        margins.push_back(rec.margin);
        out.reward_sum += rec.margin;
        out.recall_sum += env::needle_coverage(ep, cand.time_sorted);
    }
    out.item.advantages = reward::group_advantages(margins, cfg.eps_adv).advantages;
    return out;
}

}  // namespace

TrainResult run_training(const TrainConfig& cfg, const policy::Dims& dims,
                         std::span<const env::Episode> dataset, RewardBackend& backend,
                         const MetricSink& sink, const std::string& ckpt_dir) {
    return run_training(cfg, policy::init_params(dims, cfg.seed), dataset, backend, sink,
                        ckpt_dir);
}

TrainResult run_training(const TrainConfig& cfg, policy::PolicyParams initial,
                         std::span<const env::Episode> dataset, RewardBackend& backend,
                         const MetricSink& sink, const std::string& ckpt_dir) {
    cfg.validate();
    if (dataset.empty()) throw std::invalid_argument("run_training: empty dataset");

    PolicyParams params = std::move(initial);
    OptimizerState opt = OptimizerState::zeros(params.dims);
    double final_reward = 0.0;

    for (long step = 0; step < cfg.total_steps; ++step) {
        // snapshot for importance sampling: candidates come from the frozen
        // policy while the K inner updates move `params`
        const PolicyParams snapshot = params;

        std::vector<const env::Episode*> batch_eps;
        for (int i = 0; i < cfg.batch_size; ++i) {
            const std::size_t idx =
                (static_cast<std::size_t>(step) * cfg.batch_size + i) % dataset.size();
            batch_eps.push_back(&dataset[idx]);
        }

        std::vector<EpisodeStepData> data(batch_eps.size());
        if (cfg.workers <= 1 || batch_eps.size() <= 1) {
            for (std::size_t i = 0; i < batch_eps.size(); ++i)
                data[i] = sample_and_score(snapshot, *batch_eps[i], cfg, backend, step);
        } else {
            std::vector<std::future<EpisodeStepData>> futs;
            futs.reserve(batch_eps.size());
            for (std::size_t i = 0; i < batch_eps.size(); ++i)
                futs.push_back(std::async(std::launch::async, [&, i] {
                    return sample_and_score(snapshot, *batch_eps[i], cfg, backend, step);
                }));
            for (std::size_t i = 0; i < batch_eps.size(); ++i) data[i] = futs[i].get();
        }

        std::vector<BatchItem> batch;
        double reward_sum = 0.0, recall_sum = 0.0;
        for (auto& d : data) {
            reward_sum += d.reward_sum;
            recall_sum += d.recall_sum;
            batch.push_back(std::move(d.item));
        }
        const double n_cand = static_cast<double>(batch.size()) * cfg.N;

        StepMetrics metrics;
        metrics.step = static_cast<int>(step);
        metrics.mean_reward = reward_sum / n_cand;
        metrics.needle_recall = recall_sum / n_cand;
        metrics.lr = lr_factor(step, cfg.total_steps, cfg.warmup_ratio) * cfg.lr_heads;

        for (int k = 0; k < cfg.K; ++k) {
            PolicyParams grads = PolicyParams::zeros(params.dims);
            const auto res = policy::objective_and_gradient(params, batch, cfg.beta,
                                                            cfg.entropy_mode, &grads,
                                                            cfg.workers);
            if (!std::isfinite(res.objective)) {
                std::ostringstream oss;
                oss << "run_training: non-finite objective at step " << step << " inner " << k;
                throw std::runtime_error(oss.str());
            }
            if (k == 0) {
                metrics.mean_entropy = res.mean_entropy;
                metrics.grad_norm = global_grad_norm(grads);
            }
            optimizer_step(opt, params, grads, step, cfg);
        }

        if (sink) sink(metrics);
        final_reward = metrics.mean_reward;

        if (!ckpt_dir.empty() && cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0) {
            std::ostringstream oss;
            oss << ckpt_dir << "/ckpt-" << (step + 1);
            ckpt::save_checkpoint(params, oss.str());
        }
    }

    if (!ckpt_dir.empty()) ckpt::save_checkpoint(params, ckpt_dir + "/ckpt-final");
    return {std::move(params), final_reward};
}

}  // namespace refocus::train
