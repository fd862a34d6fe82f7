#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "refocus/episode.hpp"
#include "refocus/filterpipe.hpp"
#include "refocus/policy.hpp"

namespace refocus::analysis {

struct SelectionPdf {
    Eigen::VectorXd p;  // length T, sums to 1
    int n_runs = 0;
    std::string episode_id;
};

// Average of the full per-step categorical distributions, first across steps
// then across sampling runs.
SelectionPdf estimate_selection_pdf(const policy::PolicyParams& params, const env::Episode& ep,
                                    int T_sel, int n_runs, std::uint64_t seed);

struct DistanceTriple {
    double js = 0.0;      // nats
    double sym_kl = 0.0;  // KL(p||q) + KL(q||p) after support smoothing
    double w1 = 0.0;      // sum_t |CDF_p - CDF_q|, unit frame spacing
};

// Support smoothing mixes each pdf with uniform at this rate before the KL
// terms; JS and W1 are computed on the raw inputs.
inline constexpr double kKlSmoothing = 1e-6;

DistanceTriple distribution_distances(const Eigen::VectorXd& p, const Eigen::VectorXd& q);

// Mean of each metric over all unordered pairs.
DistanceTriple pairwise_diversity(std::span<const SelectionPdf> pdfs);

// Kozachenko-Leonenko k-NN differential entropy of 1-d samples, in nats.
// Exact ties are broken by a deterministic additive jitter of 1e-9.
double kl_entropy(std::span<const double> samples, int k);

struct NiahGrid {
    std::vector<int> frame_counts;
    std::vector<double> positions;  // relative needle positions in [0, 1]
    Eigen::MatrixXd cells;          // rows: frame counts, cols: positions; needle PDF mass
};

using EnvFactory = std::function<env::Episode(int T, double position)>;

NiahGrid vniah_sweep(const policy::PolicyParams& params, const EnvFactory& factory,
                     std::span<const int> frame_counts, std::span<const double> positions,
                     int T_sel, int n_runs, std::uint64_t seed);

std::string niah_grid_csv(const NiahGrid& grid);

struct BinTable {
    std::vector<int> ks;
    std::vector<double> over_accuracy;
    std::vector<double> under_accuracy;
    std::vector<int> exhaustion_flags;  // bins where a side was smaller than T'
};

// Frames ranked by selection likelihood; over-k% keeps the minimal top mass
// >= k%, under-k% is the complement of over-(100-k)%. Accuracy is the
// oracle argmax over subsets drawn inside each side.
BinTable likelihood_bins_eval(const policy::PolicyParams& params,
                              std::span<const env::Episode> episodes,
                              const filter::OracleFn& oracle, std::span<const int> ks, int T_sel,
                              int subsets_per_bin, int pdf_runs, std::uint64_t seed);

std::string bin_table_csv(const BinTable& table);

}  // namespace refocus::analysis
