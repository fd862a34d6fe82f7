#include "refocus/episode.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <nlohmann/json.hpp>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "refocus/rng.hpp"

namespace refocus::env {

using nlohmann::json;

Eigen::VectorXd needle_signature(int d_in) {
    Rng rng(stream_seed(0xf00dull, static_cast<std::uint64_t>(d_in)));
    Eigen::VectorXd u(d_in);
    for (int i = 0; i < d_in; ++i) u[i] = rng.normal();
    u.normalize();
    return u;
}

namespace {

Episode gen_episode_impl(const EnvConfig& cfg, std::uint64_t seed,
                         const std::vector<int>* fixed_needles) {
    if (cfg.T < 2) throw std::invalid_argument("gen_episode: T must be >= 2");
    if (cfg.n_needle < 1 || cfg.n_needle > cfg.T)
        throw std::invalid_argument("gen_episode: need 1 <= n_needle <= T");
    if (cfg.L < 1 || cfg.d_in < 1 || cfg.d_q < 1 || cfg.M < 2)
        throw std::invalid_argument("gen_episode: bad dimensions");

    Rng rng(stream_seed(seed, 0x45505349ull));
    Episode ep;
    {
        std::ostringstream oss;
        oss << "ep-" << cfg.T << "x" << cfg.L << "-" << seed;
        if (fixed_needles) oss << "-pinned";
        ep.id = oss.str();
    }
    ep.T = cfg.T;
    ep.L = cfg.L;
    ep.d_in = cfg.d_in;

    // needle set: distinct frame indices
    std::set<int> needles;
    if (fixed_needles) {
        for (int f : *fixed_needles) {
            if (f < 0 || f >= cfg.T)
                throw std::invalid_argument("gen_episode: pinned needle out of range");
            needles.insert(f);
        }
        if (needles.empty()) throw std::invalid_argument("gen_episode: empty pinned needle set");
    } else {
        while (static_cast<int>(needles.size()) < cfg.n_needle)
            needles.insert(static_cast<int>(rng.uniform_index(cfg.T)));
    }
    ep.needles.assign(needles.begin(), needles.end());

    const Eigen::VectorXd sig = needle_signature(cfg.d_in);
    ep.frames.reserve(cfg.T);
    for (int t = 0; t < cfg.T; ++t) {
        Eigen::MatrixXd f(cfg.d_in, cfg.L);
        for (int l = 0; l < cfg.L; ++l)
            for (int i = 0; i < cfg.d_in; ++i) f(i, l) = rng.normal();
        if (needles.count(t)) f.colwise() += cfg.signal_strength * sig;
        ep.frames.push_back(std::move(f));
    }

    ep.query.resize(cfg.d_q);
    for (int i = 0; i < cfg.d_q; ++i) ep.query[i] = rng.normal();

    ep.options.reserve(cfg.M);
    for (int m = 0; m < cfg.M; ++m) ep.options.push_back(std::string(1, static_cast<char>('A' + m)));
    ep.correct = static_cast<int>(rng.uniform_index(cfg.M));
    return ep;
}

}  // namespace

Episode gen_episode(const EnvConfig& cfg, std::uint64_t seed) {
    return gen_episode_impl(cfg, seed, nullptr);
}

Episode gen_episode_with_needles(const EnvConfig& cfg, std::uint64_t seed,
                                 std::vector<int> needles) {
    return gen_episode_impl(cfg, seed, &needles);
}

double needle_coverage(const Episode& ep, std::span<const int> subset) {
    if (ep.needles.empty()) return 0.0;
    int hit = 0;
    for (int f : subset)
        if (std::binary_search(ep.needles.begin(), ep.needles.end(), f)) ++hit;
    return static_cast<double>(hit) / static_cast<double>(ep.needles.size());
}

Eigen::VectorXd oracle_logits(const Episode& ep, std::span<const int> subset,
                              const OracleConfig& oc) {
    if (oc.gain_a <= 0.0) throw std::invalid_argument("oracle_logits: gain_a must be > 0");
    std::vector<int> sorted(subset.begin(), subset.end());
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        if (sorted[i] < 0 || sorted[i] >= ep.T)
            throw std::invalid_argument("oracle_logits: frame index out of range");
        if (i > 0 && sorted[i] == sorted[i - 1])
            throw std::invalid_argument("oracle_logits: duplicate frame index");
    }

    const int M = static_cast<int>(ep.options.size());
    Eigen::VectorXd z = Eigen::VectorXd::Zero(M);
    z[ep.correct] = oc.gain_a * needle_coverage(ep, subset) + oc.bias_b;
    for (int f : sorted) {
        auto it = oc.decoys.find(f);
        if (it != oc.decoys.end()) {
            const auto& [opt, boost] = it->second;
            if (opt >= 0 && opt < M && opt != ep.correct) z[opt] += boost;
        }
    }
    if (oc.noise_std > 0.0) {
        // hash-seeded from (episode id, sorted subset): reward stays a pure
        // function of the action set
        std::uint64_t s = hash_str(ep.id);
        for (int f : sorted) s = stream_seed(s, static_cast<std::uint64_t>(f));
        Rng rng(s);
        for (int m = 0; m < M; ++m) z[m] += oc.noise_std * rng.normal();
    }
    return z;
}

void write_jsonl(std::ostream& os, std::span<const Episode> eps) {
    for (const Episode& ep : eps) {
        json j;
        j["id"] = ep.id;
        j["T"] = ep.T;
        j["L"] = ep.L;
        j["d_in"] = ep.d_in;
        json frames = json::array();
        for (const auto& f : ep.frames) {
            json tokens = json::array();
            for (int l = 0; l < f.cols(); ++l) {
                json tok = json::array();
                for (int i = 0; i < f.rows(); ++i) tok.push_back(f(i, l));
                tokens.push_back(std::move(tok));
            }
            frames.push_back(std::move(tokens));
        }
        j["frames"] = std::move(frames);
        j["needles"] = ep.needles;
        json q = json::array();
        for (int i = 0; i < ep.query.size(); ++i) q.push_back(ep.query[i]);
        j["query"] = std::move(q);
        j["options"] = ep.options;
        j["correct"] = ep.correct;
        os << j.dump() << "\n";
    }
}

std::vector<Episode> read_jsonl(std::istream& is) {
    std::vector<Episode> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        Episode ep;
        ep.id = j.at("id").get<std::string>();
        ep.T = j.at("T").get<int>();
        ep.L = j.at("L").get<int>();
        ep.d_in = j.at("d_in").get<int>();
        const json& frames = j.at("frames");
        if (static_cast<int>(frames.size()) != ep.T)
            throw std::runtime_error("read_jsonl: frame count mismatch for " + ep.id);
        ep.frames.reserve(ep.T);
        for (const json& tokens : frames) {
            Eigen::MatrixXd f(ep.d_in, ep.L);
            if (static_cast<int>(tokens.size()) != ep.L)
                throw std::runtime_error("read_jsonl: token count mismatch for " + ep.id);
            for (int l = 0; l < ep.L; ++l)
                for (int i = 0; i < ep.d_in; ++i) f(i, l) = tokens[l][i].get<double>();
            ep.frames.push_back(std::move(f));
        }
        ep.needles = j.at("needles").get<std::vector<int>>();
        std::sort(ep.needles.begin(), ep.needles.end());
        const json& q = j.at("query");
        ep.query.resize(q.size());
        for (std::size_t i = 0; i < q.size(); ++i) ep.query[i] = q[i].get<double>();
        ep.options = j.at("options").get<std::vector<std::string>>();
        ep.correct = j.at("correct").get<int>();
        out.push_back(std::move(ep));
    }
    return out;
}

}  // namespace refocus::env
