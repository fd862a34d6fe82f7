#include "refocus/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "refocus/rng.hpp"

namespace refocus::analysis {

SelectionPdf estimate_selection_pdf(const policy::PolicyParams& params, const env::Episode& ep,
                                    int T_sel, int n_runs, std::uint64_t seed) {
    if (n_runs < 1) throw std::invalid_argument("estimate_selection_pdf: n_runs must be >= 1");
    const policy::FrameEmbeddings emb = policy::frame_embeddings(params, ep);
    Eigen::VectorXd accum = Eigen::VectorXd::Zero(ep.T);
    const std::uint64_t base = stream_seed(seed, hash_str(ep.id), 0x504446ull);
    for (int j = 0; j < n_runs; ++j) {
        Rng rng(stream_seed(base, static_cast<std::uint64_t>(j)));
        policy::sample_one(params, emb, ep, T_sel, rng, &accum);
    }
    SelectionPdf pdf;
    pdf.p = accum / (static_cast<double>(T_sel) * static_cast<double>(n_runs));
    pdf.n_runs = n_runs;
    pdf.episode_id = ep.id;
    return pdf;
}

namespace {

double kl_div(const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
    double d = 0.0;
    for (int t = 0; t < p.size(); ++t)
        if (p[t] > 0.0) d += p[t] * std::log(p[t] / q[t]);
    return d;
}

}  // namespace

DistanceTriple distribution_distances(const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
    if (p.size() != q.size())
        throw std::invalid_argument("distribution_distances: length mismatch");
    const int T = static_cast<int>(p.size());
    DistanceTriple d;

    // JS on the raw inputs (finite by construction)
    Eigen::VectorXd m = 0.5 * (p + q);
    d.js = 0.5 * kl_div(p, m) + 0.5 * kl_div(q, m);

    // symmetric KL needs positive support: mix with uniform
    const double lam = kKlSmoothing;
    Eigen::VectorXd ps = (1.0 - lam) * p + Eigen::VectorXd::Constant(T, lam / T);
    Eigen::VectorXd qs = (1.0 - lam) * q + Eigen::VectorXd::Constant(T, lam / T);
    d.sym_kl = kl_div(ps, qs) + kl_div(qs, ps);

    double cp = 0.0, cq = 0.0;
    for (int t = 0; t < T; ++t) {
        cp += p[t];
        cq += q[t];
        d.w1 += std::abs(cp - cq);
    }
    return d;
}

DistanceTriple pairwise_diversity(std::span<const SelectionPdf> pdfs) {
    const std::size_t n = pdfs.size();
    if (n < 2) throw std::invalid_argument("pairwise_diversity: need at least 2 pdfs");
    DistanceTriple mean;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const DistanceTriple d = distribution_distances(pdfs[i].p, pdfs[j].p);
            mean.js += d.js;
            mean.sym_kl += d.sym_kl;
            mean.w1 += d.w1;
            ++pairs;
        }
    }
    mean.js /= static_cast<double>(pairs);
    mean.sym_kl /= static_cast<double>(pairs);
    mean.w1 /= static_cast<double>(pairs);
    return mean;
}

namespace {

double digamma(double x) {
    double result = 0.0;
    while (x < 6.0) {
        result -= 1.0 / x;
        x += 1.0;
    }
    const double inv = 1.0 / x;
    const double inv2 = inv * inv;
    result += std::log(x) - 0.5 * inv -
              inv2 * (1.0 / 12.0 - inv2 * (1.0 / 120.0 - inv2 / 252.0));
    return result;
}

}  // namespace

double kl_entropy(std::span<const double> samples, int k) {
    const int n = static_cast<int>(samples.size());
    if (k < 1) throw std::invalid_argument("kl_entropy: k must be >= 1");
    if (n <= k) throw std::invalid_argument("kl_entropy: need more samples than k");

    std::vector<double> x(samples.begin(), samples.end());
    std::sort(x.begin(), x.end());
    bool ties = false;
    for (int i = 1; i < n; ++i)
        if (x[i] == x[i - 1]) ties = true;
    if (ties) {
        // rank-scaled jitter keeps the order and separates exact duplicates
        for (int i = 0; i < n; ++i) x[i] += 1e-9 * static_cast<double>(i);
    }

    double log_eps_sum = 0.0;
    for (int i = 0; i < n; ++i) {
        // k-th nearest neighbor distance via two-pointer merge on the sorted
        // array
        int lo = i - 1, hi = i + 1;
        double eps = 0.0;
        for (int c = 0; c < k; ++c) {
            const double dl = lo >= 0 ? x[i] - x[lo] : std::numeric_limits<double>::infinity();
            const double dr = hi < n ? x[hi] - x[i] : std::numeric_limits<double>::infinity();
            if (dl <= dr) {
                eps = dl;
                --lo;
            } else {
                eps = dr;
                ++hi;
            }
        }
        log_eps_sum += std::log(eps);
    }
    return digamma(n) - digamma(k) + std::log(2.0) + log_eps_sum / static_cast<double>(n);
}

NiahGrid vniah_sweep(const policy::PolicyParams& params, const EnvFactory& factory,
                     std::span<const int> frame_counts, std::span<const double> positions,
                     int T_sel, int n_runs, std::uint64_t seed) {
    NiahGrid grid;
    grid.frame_counts.assign(frame_counts.begin(), frame_counts.end());
    grid.positions.assign(positions.begin(), positions.end());
    grid.cells.resize(frame_counts.size(), positions.size());
    for (std::size_t r = 0; r < frame_counts.size(); ++r) {
        for (std::size_t c = 0; c < positions.size(); ++c) {
            const env::Episode ep = factory(frame_counts[r], positions[c]);
            if (ep.needles.size() != 1)
                throw std::invalid_argument("vniah_sweep: episodes must carry a single needle");
            const SelectionPdf pdf = estimate_selection_pdf(params, ep, T_sel, n_runs, seed);
            grid.cells(r, c) = pdf.p[ep.needles[0]];
        }
    }
    return grid;
}

std::string niah_grid_csv(const NiahGrid& grid) {
    std::ostringstream oss;
    oss << "frames";
    for (double pos : grid.positions) oss << ",pos_" << pos;
    oss << "\n";
    for (std::size_t r = 0; r < grid.frame_counts.size(); ++r) {
        oss << grid.frame_counts[r];
        for (std::size_t c = 0; c < grid.positions.size(); ++c) oss << "," << grid.cells(r, c);
        oss << "\n";
    }
    return oss.str();
}

namespace {

// minimal prefix of the likelihood ranking whose mass reaches k percent
std::vector<int> top_mass_set(const std::vector<int>& ranked, const Eigen::VectorXd& p, int k) {
    std::vector<int> out;
    if (k <= 0) return out;
    double mass = 0.0;
    const double target = static_cast<double>(k) / 100.0;
    for (int f : ranked) {
        out.push_back(f);
        mass += p[f];
        if (mass >= target - 1e-12) break;
    }
    return out;
}

std::vector<int> sample_pool(const std::vector<int>& pool, int T_sel, Rng& rng, bool& exhausted) {
    if (static_cast<int>(pool.size()) <= T_sel) {
        exhausted = true;
        return pool;
    }
    std::vector<int> tmp = pool;
    std::vector<int> out;
    for (int i = 0; i < T_sel; ++i) {
        const std::size_t j = i + rng.uniform_index(tmp.size() - i);
        std::swap(tmp[i], tmp[j]);
        out.push_back(tmp[i]);
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

BinTable likelihood_bins_eval(const policy::PolicyParams& params,
                              std::span<const env::Episode> episodes,
                              const filter::OracleFn& oracle, std::span<const int> ks, int T_sel,
                              int subsets_per_bin, int pdf_runs, std::uint64_t seed) {
    BinTable table;
    table.ks.assign(ks.begin(), ks.end());
    table.over_accuracy.assign(ks.size(), 0.0);
    table.under_accuracy.assign(ks.size(), 0.0);
    table.exhaustion_flags.assign(ks.size(), 0);
    std::vector<long> over_hits(ks.size(), 0), over_total(ks.size(), 0);
    std::vector<long> under_hits(ks.size(), 0), under_total(ks.size(), 0);

    for (const env::Episode& ep : episodes) {
        const SelectionPdf pdf = estimate_selection_pdf(params, ep, T_sel, pdf_runs, seed);
        std::vector<int> ranked(ep.T);
        std::iota(ranked.begin(), ranked.end(), 0);
        std::stable_sort(ranked.begin(), ranked.end(),
                         [&](int a, int b) { return pdf.p[a] > pdf.p[b]; });

        for (std::size_t bi = 0; bi < ks.size(); ++bi) {
            const int k = ks[bi];
            const std::vector<int> over = top_mass_set(ranked, pdf.p, k);
            const std::vector<int> upper = top_mass_set(ranked, pdf.p, 100 - k);
            std::vector<std::uint8_t> in_upper(ep.T, 0);
            for (int f : upper) in_upper[f] = 1;
            std::vector<int> under;
            for (int f : ranked)
                if (!in_upper[f]) under.push_back(f);

            for (int side = 0; side < 2; ++side) {
                const std::vector<int>& pool = side == 0 ? over : under;
                if (pool.empty()) {
                    table.exhaustion_flags[bi] = 1;
                    continue;
                }
                Rng rng(stream_seed(seed, hash_str(ep.id), static_cast<std::uint64_t>(k),
                                    static_cast<std::uint64_t>(side)));
                for (int rep = 0; rep < subsets_per_bin; ++rep) {
                    bool exhausted = false;
                    const std::vector<int> subset = sample_pool(pool, T_sel, rng, exhausted);
                    if (exhausted) table.exhaustion_flags[bi] = 1;
                    const Eigen::VectorXd z = oracle(ep, subset);
                    Eigen::Index argmax;
                    z.maxCoeff(&argmax);
                    const bool hit = static_cast<int>(argmax) == ep.correct;
                    if (side == 0) {
                        over_hits[bi] += hit;
                        ++over_total[bi];
                    } else {
                        under_hits[bi] += hit;
                        ++under_total[bi];
                    }
                }
            }
        }
    }

    for (std::size_t bi = 0; bi < ks.size(); ++bi) {
        if (over_total[bi] > 0)
            table.over_accuracy[bi] =
                static_cast<double>(over_hits[bi]) / static_cast<double>(over_total[bi]);
        if (under_total[bi] > 0)
            table.under_accuracy[bi] =
                static_cast<double>(under_hits[bi]) / static_cast<double>(under_total[bi]);
    }
    return table;
}

std::string bin_table_csv(const BinTable& table) {
    std::ostringstream oss;
    oss << "k,over_accuracy,under_accuracy,exhausted\n";
    for (std::size_t i = 0; i < table.ks.size(); ++i) {
        oss << table.ks[i] << "," << table.over_accuracy[i] << "," << table.under_accuracy[i]
            << "," << table.exhaustion_flags[i] << "\n";
    }
    return oss.str();
}

}  // namespace refocus::analysis
