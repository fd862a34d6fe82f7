#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>

#include "refocus/episode.hpp"
#include "refocus/policy.hpp"

namespace refocus::train {

struct TrainConfig {
    int N = 16;         // candidates per episode
    int T_sel = 8;      // frames per subset
    int K = 1;          // inner updates per snapshot
    double beta = 0.002;
    double lr_backbone = 1e-5;
    double lr_heads = 1e-4;
    double warmup_ratio = 0.05;
    double weight_decay = 0.01;
    double grad_clip = 1.0;
    int batch_size = 192;
    int total_steps = 100;
    std::uint64_t seed = 0;
    double eps_adv = 1e-6;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.99;
    double adam_eps = 1e-8;
    int checkpoint_every = 0;  // 0: final checkpoint only
    int workers = 1;
    policy::EntropyMode entropy_mode = policy::EntropyMode::kMeanOverSteps;

    void validate() const;
};

struct OptimizerState {
    policy::PolicyParams m;
    policy::PolicyParams v;
    long step = 0;

    static OptimizerState zeros(const policy::Dims& d);
};

struct StepMetrics {
    int step = 0;
    double mean_reward = 0.0;
    double mean_entropy = 0.0;
    double grad_norm = 0.0;
    double lr = 0.0;
    double needle_recall = 0.0;
};

using MetricSink = std::function<void(const StepMetrics&)>;

// Answer-option scorer over a time-sorted frame subset. The trainer never
// looks inside; swapping the local oracle for a remote service is a
// constructor change.
class RewardBackend {
public:
    virtual ~RewardBackend() = default;
    virtual Eigen::VectorXd score(const env::Episode& ep, std::span<const int> time_sorted) = 0;
};

class LocalOracleBackend final : public RewardBackend {
public:
    explicit LocalOracleBackend(env::OracleConfig oc) : oc_(std::move(oc)) {}
    Eigen::VectorXd score(const env::Episode& ep, std::span<const int> time_sorted) override {
        return env::oracle_logits(ep, time_sorted, oc_);
    }

private:
    env::OracleConfig oc_;
};

// Linear warmup from 0 over warmup_ratio * total, then linear decay to 0.
double lr_factor(long step, long total_steps, double warmup_ratio);

// Global-norm clip, then AdamW ascent with bias correction and decoupled
// weight decay. Heads and backbone carry distinct base rates.
void optimizer_step(OptimizerState& state, policy::PolicyParams& params,
                    policy::PolicyParams& grads, long step, const TrainConfig& cfg);

double global_grad_norm(const policy::PolicyParams& grads);

struct TrainResult {
    policy::PolicyParams params;
    double final_mean_reward = 0.0;
};

TrainResult run_training(const TrainConfig& cfg, const policy::Dims& dims,
                         std::span<const env::Episode> dataset, RewardBackend& backend,
                         const MetricSink& sink = {}, const std::string& ckpt_dir = "");

TrainResult run_training(const TrainConfig& cfg, policy::PolicyParams initial,
                         std::span<const env::Episode> dataset, RewardBackend& backend,
                         const MetricSink& sink = {}, const std::string& ckpt_dir = "");

}  // namespace refocus::train
