#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace refocus::env {

struct EnvConfig {
    int T = 128;           // frames per episode
    int L = 1;             // tokens per frame
    int d_in = 32;         // token feature dimension
    int d_q = 16;          // query dimension
    int M = 4;             // answer options
    int n_needle = 3;      // planted needle frames
    double signal_strength = 3.0;
};

// A synthetic "video": feature tokens instead of pixels.
struct Episode {
    std::string id;
    int T = 0;
    int L = 0;
    int d_in = 0;
    std::vector<Eigen::MatrixXd> frames;  // T matrices, each d_in x L
    std::vector<int> needles;             // sorted ascending
    Eigen::VectorXd query;                // d_q
    std::vector<std::string> options;     // M identifiers
    int correct = 0;
};

struct OracleConfig {
    double gain_a = 4.0;
    double bias_b = -2.0;
    // frame index -> (wrong option index, logit boost)
    std::map<int, std::pair<int, double>> decoys;
    double noise_std = 0.0;
};

// Direction added to needle frames, shared across all episodes of a given
// feature dimension. Unit norm.
Eigen::VectorXd needle_signature(int d_in);

Episode gen_episode(const EnvConfig& cfg, std::uint64_t seed);

// Same generator with the needle set pinned; used by needle-position sweeps.
Episode gen_episode_with_needles(const EnvConfig& cfg, std::uint64_t seed,
                                 std::vector<int> needles);

// Deterministic stand-in for the reference scorer. Depends on the frame SET
// only, never on the order of `subset`.
Eigen::VectorXd oracle_logits(const Episode& ep, std::span<const int> subset,
                              const OracleConfig& oc);

double needle_coverage(const Episode& ep, std::span<const int> subset);

// JSONL serialization, one episode per line.
void write_jsonl(std::ostream& os, std::span<const Episode> eps);
std::vector<Episode> read_jsonl(std::istream& is);

}  // namespace refocus::env
