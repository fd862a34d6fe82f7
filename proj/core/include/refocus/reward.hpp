#pragma once

#include <Eigen/Dense>
#include <span>
#include <vector>

namespace refocus::reward {

struct RewardRecord {
    Eigen::VectorXd logits;
    double margin = 0.0;        // in [-1, 1]
    int hardest_negative = -1;  // != correct
};

struct AdvantageGroup {
    std::vector<double> rewards;
    std::vector<double> advantages;
    double eps = 1e-6;
};

// Margin reward: tanh of half the logit gap between the correct option and
// the hardest negative. Ties among negatives break to the lowest index.
RewardRecord margin_reward(const Eigen::VectorXd& logits, int correct);

// Group-relative normalization: (r - mean) / (population std + eps).
// Constant groups map to exact zeros.
AdvantageGroup group_advantages(std::span<const double> rewards, double eps = 1e-6);

// Population variance.
double reward_variance(std::span<const double> margins);

}  // namespace refocus::reward
