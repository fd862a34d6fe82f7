#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "refocus/episode.hpp"
#include "refocus/rng.hpp"

namespace refocus::policy {

struct Dims {
    int d_in = 32;     // token features
    int d_e = 32;      // frame embedding
    int d_model = 32;  // key/query/value space
    int d_g = 32;      // selection state
    int d_q = 16;      // query vector
};

// All learnable tensors of the selection scorer.
struct PolicyParams {
    Dims dims;
    Eigen::MatrixXd token_in;   // d_e x d_in   (A in the token recurrence)
    Eigen::MatrixXd token_rec;  // d_e x d_e    (B in the token recurrence)
    Eigen::MatrixXd W_k;        // d_model x d_e
    Eigen::MatrixXd W_q;        // d_model x d_g
    Eigen::MatrixXd W_v;        // d_model x d_e
    Eigen::VectorXd b_v;        // d_model
    Eigen::MatrixXd W_g;        // d_g x d_g
    Eigen::MatrixXd W_u;        // d_g x d_model
    Eigen::MatrixXd W_c;        // d_g x d_q
    Eigen::VectorXd u0;         // d_g, start embedding
    double s = 1.0;             // logit scale

    static PolicyParams zeros(const Dims& d);
};

struct BlockRef {
    std::string name;
    double* data;
    Eigen::Index rows;
    Eigen::Index cols;
    std::size_t size() const { return static_cast<std::size_t>(rows * cols); }
};

std::vector<BlockRef> blocks(PolicyParams& p);
std::vector<BlockRef> blocks(const PolicyParams& p);  // data points at const storage; callers must not write

// Orthogonal init for the heads (gain 1.0 for key/query, 0.1 for value,
// zero value bias), u0 ~ N(0, 0.02^2), s = 1.
PolicyParams init_params(const Dims& d, std::uint64_t seed);

Eigen::MatrixXd orthogonal_matrix(int rows, int cols, double gain, Rng& rng);

struct FrameEmbeddings {
    Eigen::MatrixXd E;  // T x d_e, last-token embedding per frame
    Eigen::MatrixXd K;  // T x d_model
    Eigen::MatrixXd V;  // T x d_model
    // per-frame hidden states of the token recurrence (d_e x L), kept for
    // backprop
    std::vector<Eigen::MatrixXd> hidden;
};

FrameEmbeddings frame_embeddings(const PolicyParams& p, const env::Episode& ep);

// Masked scaled-dot-product distribution over frames given selection state g.
// Masked entries are exactly 0.
Eigen::VectorXd step_distribution(const PolicyParams& p, const Eigen::MatrixXd& K,
                                  const Eigen::VectorXd& g,
                                  const std::vector<std::uint8_t>& masked);

struct CandidateSubset {
    std::vector<int> indices;      // selection order
    std::vector<int> time_sorted;  // same set, ascending
    std::vector<double> step_logps;
    std::vector<double> step_entropies;
    double logp() const;
};

// Per-step full categorical distributions may be accumulated into `pdf_accum`
// (length T) for selection-PDF estimation; each step adds its distribution.
CandidateSubset sample_one(const PolicyParams& p, const FrameEmbeddings& emb,
                           const env::Episode& ep, int T_sel, Rng& rng,
                           Eigen::VectorXd* pdf_accum = nullptr);

// N candidates with independent streams derived from (seed, episode id, j).
std::vector<CandidateSubset> sample_subsets(const PolicyParams& p, const env::Episode& ep,
                                            int T_sel, int N, std::uint64_t seed);

struct LogprobResult {
    double logp = 0.0;
    std::vector<double> step_logps;
    std::vector<double> step_entropies;
};

// Recompute exact step distributions along the given selection order.
LogprobResult subset_logprob(const PolicyParams& p, const env::Episode& ep,
                             std::span<const int> indices);

enum class EntropyMode { kMeanOverSteps, kSumOverSteps };

struct BatchItem {
    const env::Episode* episode = nullptr;
    std::vector<CandidateSubset> subsets;   // sampled under the snapshot policy
    std::vector<double> old_logps;          // frozen log-probs under the snapshot
    std::vector<double> advantages;
};

struct ObjectiveResult {
    double objective = 0.0;
    double mean_entropy = 0.0;
    std::vector<double> ratios;  // flattened per (item, candidate)
};

// J = mean_j ratio_j * A_j + beta * H, with H the mean (or per-candidate sum)
// of per-step conditional entropies. Gradients are the exact reverse-mode
// derivative of J w.r.t. every field of PolicyParams; old log-probs are
// constants. Pass grads_out = nullptr to evaluate the objective only.
ObjectiveResult objective_and_gradient(const PolicyParams& p, std::span<const BatchItem> batch,
                                       double beta, EntropyMode mode, PolicyParams* grads_out,
                                       int workers = 1);

}  // namespace refocus::policy
