#include "refocus/filterpipe.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <stdexcept>

#include "refocus/reward.hpp"
#include "refocus/rng.hpp"

namespace refocus::filter {

using nlohmann::json;

WindowSpec temporal_windows(int T, int k) {
    if (T < 8) throw std::invalid_argument("temporal_windows: T must be >= 8");
    if (k < 1) throw std::invalid_argument("temporal_windows: k must be >= 1");
    WindowSpec spec;
    spec.T = T;
    spec.w = (T + 7) / 8;
    spec.stride = (spec.w + 1) / 2;
    spec.k = k;

    for (int i = 0; i < 7; ++i) {
        const int lo = i * spec.stride;
        const int hi = std::min(lo + spec.w, T);
        for (int t = lo; t < hi; ++t) spec.windows[i].push_back(t);
    }
    // wrap-around window: [0, s) u [7s, T)
    for (int t = 0; t < spec.stride; ++t) spec.windows[7].push_back(t);
    for (int t = 7 * spec.stride; t < T; ++t) spec.windows[7].push_back(t);

    for (int i = 0; i < 8; ++i) {
        std::vector<std::uint8_t> in(T, 0);
        for (int t : spec.windows[i]) in[t] = 1;
        for (int t = 0; t < T; ++t)
            if (!in[t]) spec.complements[i].push_back(t);
        if (spec.windows[i].empty() || spec.complements[i].empty())
            throw std::invalid_argument("temporal_windows: degenerate window at index " +
                                        std::to_string(i + 1));
    }
    return spec;
}

namespace {

std::vector<int> sample_region(const std::vector<int>& region, int k, Rng& rng) {
    if (region.empty()) throw std::invalid_argument("build_probe_subsets: empty region");
    if (static_cast<int>(region.size()) <= k) return region;  // exhaustive case
    // without replacement via partial Fisher-Yates
    std::vector<int> pool = region;
    std::vector<int> out;
    out.reserve(k);
    for (int i = 0; i < k; ++i) {
        const std::size_t j = i + rng.uniform_index(pool.size() - i);
        std::swap(pool[i], pool[j]);
        out.push_back(pool[i]);
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

std::array<std::vector<int>, 16> build_probe_subsets(const env::Episode& ep,
                                                     const WindowSpec& spec) {
    if (spec.T != ep.T) throw std::invalid_argument("build_probe_subsets: spec/episode mismatch");
    std::array<std::vector<int>, 16> probes;
    for (int i = 0; i < 8; ++i) {
        Rng rw(stream_seed(hash_str(ep.id), 0x57494eull, static_cast<std::uint64_t>(i)));
        probes[i] = sample_region(spec.windows[i], spec.k, rw);
        Rng rc(stream_seed(hash_str(ep.id), 0x434f4dull, static_cast<std::uint64_t>(i)));
        probes[8 + i] = sample_region(spec.complements[i], spec.k, rc);
    }
    return probes;
}

std::pair<std::vector<env::Episode>, FilterReport> score_and_filter(
    std::span<const env::Episode> dataset, const OracleFn& oracle, double tau) {
    FilterReport report;
    report.tau = tau;
    std::vector<env::Episode> retained;

    for (const env::Episode& ep : dataset) {
        EpisodeFilterRecord rec;
        rec.id = ep.id;
        const WindowSpec spec = temporal_windows(ep.T);
        const auto probes = build_probe_subsets(ep, spec);
        std::vector<double> margins;
        margins.reserve(16);
        for (int i = 0; i < 16; ++i) {
            Eigen::VectorXd logits;
            try {
                logits = oracle(ep, probes[i]);
            } catch (const std::exception& e) {
                throw std::runtime_error("score_and_filter: oracle failed for episode " + ep.id +
                                         ": " + e.what());
            }
            rec.margins[i] = reward::margin_reward(logits, ep.correct).margin;
            margins.push_back(rec.margins[i]);
        }
        rec.variance = reward::reward_variance(margins);
        rec.retained = rec.variance > tau;
        if (rec.retained) retained.push_back(ep);
        report.episodes.push_back(std::move(rec));
    }

    if (!report.episodes.empty()) {
        report.retention_rate =
            static_cast<double>(retained.size()) / static_cast<double>(report.episodes.size());
        double vmax = 0.0;
        for (const auto& r : report.episodes) vmax = std::max(vmax, r.variance);
        report.histogram_max = vmax;
        report.variance_histogram.assign(20, 0);
        for (const auto& r : report.episodes) {
            int bin = vmax > 0.0 ? static_cast<int>(r.variance / vmax * 20.0) : 0;
            bin = std::clamp(bin, 0, 19);
            ++report.variance_histogram[bin];
        }
    }
    return {std::move(retained), std::move(report)};
}

std::string report_to_json(const FilterReport& report) {
    json j;
    j["tau"] = report.tau;
    j["retention_rate"] = report.retention_rate;
    j["histogram_max"] = report.histogram_max;
    j["variance_histogram"] = report.variance_histogram;
    json eps = json::array();
    for (const auto& r : report.episodes) {
        eps.push_back({{"id", r.id},
                       {"margins", std::vector<double>(r.margins.begin(), r.margins.end())},
                       {"variance", r.variance},
                       {"retained", r.retained}});
    }
    j["episodes"] = std::move(eps);
    return j.dump(2);
}

}  // namespace refocus::filter
