#include "refocus/reward.hpp"

#include <cmath>
#include <stdexcept>

namespace refocus::reward {

RewardRecord margin_reward(const Eigen::VectorXd& logits, int correct) {
    const int M = static_cast<int>(logits.size());
    if (M < 2) throw std::invalid_argument("margin_reward: need at least 2 options");
    if (correct < 0 || correct >= M) throw std::invalid_argument("margin_reward: bad correct index");
    if (!logits.allFinite()) throw std::invalid_argument("margin_reward: non-finite logits");

    int hardest = -1;
    for (int m = 0; m < M; ++m) {
        if (m == correct) continue;
        if (hardest < 0 || logits[m] > logits[hardest]) hardest = m;
    }
    RewardRecord rec;
    rec.logits = logits;
    rec.hardest_negative = hardest;
    rec.margin = std::tanh(0.5 * (logits[correct] - logits[hardest]));
    return rec;
}

AdvantageGroup group_advantages(std::span<const double> rewards, double eps) {
    const std::size_t n = rewards.size();
    if (n < 2) throw std::invalid_argument("group_advantages: need at least 2 rewards");
    if (eps <= 0.0) throw std::invalid_argument("group_advantages: eps must be > 0");

    AdvantageGroup g;
    g.rewards.assign(rewards.begin(), rewards.end());
    g.eps = eps;
    double mean = 0.0;
    for (double r : rewards) mean += r;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double r : rewards) var += (r - mean) * (r - mean);
    var /= static_cast<double>(n);

    g.advantages.resize(n);
    if (var == 0.0) {
        for (auto& a : g.advantages) a = 0.0;
        return g;
    }
    const double denom = std::sqrt(var) + eps;
    for (std::size_t i = 0; i < n; ++i) g.advantages[i] = (rewards[i] - mean) / denom;
    return g;
}

double reward_variance(std::span<const double> margins) {
    const std::size_t n = margins.size();
    if (n < 2) throw std::invalid_argument("reward_variance: need at least 2 margins");
    double mean = 0.0;
    for (double m : margins) mean += m;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double m : margins) var += (m - mean) * (m - mean);
    return var / static_cast<double>(n);
}

}  // namespace refocus::reward
