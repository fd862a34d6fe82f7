#pragma once

#include <Eigen/Dense>
#include <array>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "refocus/episode.hpp"

namespace refocus::filter {

// Eight overlapping windows: W_i = [(i-1)s, (i-1)s + w) for i = 1..7 and the
// wrap-around W_8 = [0, s) u [7s, T), with w = ceil(T/8), s = ceil(w/2).
struct WindowSpec {
    int T = 0;
    int w = 0;
    int stride = 0;
    int k = 32;  // probe sample count per region
    std::array<std::vector<int>, 8> windows;
    std::array<std::vector<int>, 8> complements;
};

WindowSpec temporal_windows(int T, int k = 32);

// Subsets 1-8 sample min(k, |W_i|) distinct frames from W_i, 9-16 from C_i;
// each sorted ascending, deterministic per (episode id, i).
std::array<std::vector<int>, 16> build_probe_subsets(const env::Episode& ep,
                                                     const WindowSpec& spec);

struct EpisodeFilterRecord {
    std::string id;
    std::array<double, 16> margins{};
    double variance = 0.0;
    bool retained = false;
};

struct FilterReport {
    double tau = 0.0;
    std::vector<EpisodeFilterRecord> episodes;
    double retention_rate = 0.0;
    std::vector<int> variance_histogram;  // 20 bins over [0, max variance]
    double histogram_max = 0.0;
};

using OracleFn = std::function<Eigen::VectorXd(const env::Episode&, std::span<const int>)>;

std::pair<std::vector<env::Episode>, FilterReport> score_and_filter(
    std::span<const env::Episode> dataset, const OracleFn& oracle, double tau);

std::string report_to_json(const FilterReport& report);

}  // namespace refocus::filter
