#include "refocus/policy.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <stdexcept>

namespace refocus::policy {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_dims(const Dims& d) {
    if (d.d_in < 1 || d.d_e < 1 || d.d_model < 1 || d.d_g < 1 || d.d_q < 1)
        throw std::invalid_argument("policy: all dims must be >= 1");
}

// softmax over unmasked entries; masked entries exactly 0
Eigen::VectorXd masked_softmax(const Eigen::VectorXd& logits,
                               const std::vector<std::uint8_t>& masked) {
    const int T = static_cast<int>(logits.size());
    double mx = kNegInf;
    for (int t = 0; t < T; ++t)
        if (!masked[t]) mx = std::max(mx, logits[t]);
    if (mx == kNegInf) throw std::invalid_argument("step_distribution: all frames masked");
    Eigen::VectorXd p = Eigen::VectorXd::Zero(T);
    double sum = 0.0;
    for (int t = 0; t < T; ++t) {
        if (masked[t]) continue;
        p[t] = std::exp(logits[t] - mx);
        sum += p[t];
    }
    p /= sum;
    return p;
}

double entropy_of(const Eigen::VectorXd& p) {
    double h = 0.0;
    for (int t = 0; t < p.size(); ++t)
        if (p[t] > 0.0) h -= p[t] * std::log(p[t]);
    return h;
}

int draw_categorical(const Eigen::VectorXd& p, Rng& rng) {
    const double u = rng.uniform();
    double acc = 0.0;
    int last = -1;
    for (int t = 0; t < p.size(); ++t) {
        if (p[t] <= 0.0) continue;
        acc += p[t];
        last = t;
        if (u < acc) return t;
    }
    return last;  // rounding slack lands on the last positive entry
}

}  // namespace

PolicyParams PolicyParams::zeros(const Dims& d) {
    check_dims(d);
    PolicyParams p;
    p.dims = d;
    p.token_in = Eigen::MatrixXd::Zero(d.d_e, d.d_in);
    p.token_rec = Eigen::MatrixXd::Zero(d.d_e, d.d_e);
    p.W_k = Eigen::MatrixXd::Zero(d.d_model, d.d_e);
    p.W_q = Eigen::MatrixXd::Zero(d.d_model, d.d_g);
    p.W_v = Eigen::MatrixXd::Zero(d.d_model, d.d_e);
    p.b_v = Eigen::VectorXd::Zero(d.d_model);
    p.W_g = Eigen::MatrixXd::Zero(d.d_g, d.d_g);
    p.W_u = Eigen::MatrixXd::Zero(d.d_g, d.d_model);
    p.W_c = Eigen::MatrixXd::Zero(d.d_g, d.d_q);
    p.u0 = Eigen::VectorXd::Zero(d.d_g);
    p.s = 0.0;
    return p;
}

std::vector<BlockRef> blocks(PolicyParams& p) {
    return {
        {"token_in", p.token_in.data(), p.token_in.rows(), p.token_in.cols()},
        {"token_rec", p.token_rec.data(), p.token_rec.rows(), p.token_rec.cols()},
        {"W_k", p.W_k.data(), p.W_k.rows(), p.W_k.cols()},
        {"W_q", p.W_q.data(), p.W_q.rows(), p.W_q.cols()},
        {"W_v", p.W_v.data(), p.W_v.rows(), p.W_v.cols()},
        {"b_v", p.b_v.data(), p.b_v.rows(), 1},
        {"W_g", p.W_g.data(), p.W_g.rows(), p.W_g.cols()},
        {"W_u", p.W_u.data(), p.W_u.rows(), p.W_u.cols()},
        {"W_c", p.W_c.data(), p.W_c.rows(), p.W_c.cols()},
        {"u0", p.u0.data(), p.u0.rows(), 1},
        {"s", &p.s, 1, 1},
    };
}

std::vector<BlockRef> blocks(const PolicyParams& p) {
    return blocks(const_cast<PolicyParams&>(p));
}

Eigen::MatrixXd orthogonal_matrix(int rows, int cols, double gain, Rng& rng) {
    const bool flip = rows < cols;
    const int r = flip ? cols : rows;
    const int c = flip ? rows : cols;
    Eigen::MatrixXd g(r, c);
    for (int j = 0; j < c; ++j)
        for (int i = 0; i < r; ++i) g(i, j) = rng.normal();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(r, c);
    Eigen::MatrixXd rm = qr.matrixQR().topRows(c).triangularView<Eigen::Upper>();
    for (int j = 0; j < c; ++j)
        if (rm(j, j) < 0.0) q.col(j) = -q.col(j);
    q *= gain;
    if (flip) return q.transpose();
    return q;
}

PolicyParams init_params(const Dims& d, std::uint64_t seed) {
    check_dims(d);
    Rng rng(stream_seed(seed, 0x504f4c49ull));
    PolicyParams p = PolicyParams::zeros(d);
    p.token_in = orthogonal_matrix(d.d_e, d.d_in, 1.0, rng);
    p.token_rec = orthogonal_matrix(d.d_e, d.d_e, 1.0, rng);
    p.W_k = orthogonal_matrix(d.d_model, d.d_e, 1.0, rng);
    p.W_q = orthogonal_matrix(d.d_model, d.d_g, 1.0, rng);
    p.W_v = orthogonal_matrix(d.d_model, d.d_e, 0.1, rng);
    p.b_v.setZero();
    p.W_g = orthogonal_matrix(d.d_g, d.d_g, 1.0, rng);
    p.W_u = orthogonal_matrix(d.d_g, d.d_model, 1.0, rng);
    p.W_c = orthogonal_matrix(d.d_g, d.d_q, 1.0, rng);
    for (int i = 0; i < d.d_g; ++i) p.u0[i] = 0.02 * rng.normal();
    p.s = 1.0;
    return p;
}

FrameEmbeddings frame_embeddings(const PolicyParams& p, const env::Episode& ep) {
    const Dims& d = p.dims;
    if (ep.d_in != d.d_in)
        throw std::invalid_argument("frame_embeddings: episode d_in does not match policy dims");
    FrameEmbeddings emb;
    emb.E.resize(ep.T, d.d_e);
    emb.hidden.reserve(ep.T);
    for (int t = 0; t < ep.T; ++t) {
        const Eigen::MatrixXd& x = ep.frames[t];  // d_in x L
        Eigen::MatrixXd h(d.d_e, ep.L);
        Eigen::VectorXd prev = Eigen::VectorXd::Zero(d.d_e);
        for (int l = 0; l < ep.L; ++l) {
            h.col(l) = (p.token_in * x.col(l) + p.token_rec * prev).array().tanh();
            prev = h.col(l);
        }
        emb.E.row(t) = prev.transpose();
        emb.hidden.push_back(std::move(h));
    }
    emb.K = emb.E * p.W_k.transpose();
    emb.V = (emb.E * p.W_v.transpose()).rowwise() + p.b_v.transpose();
    return emb;
}

Eigen::VectorXd step_distribution(const PolicyParams& p, const Eigen::MatrixXd& K,
                                  const Eigen::VectorXd& g,
                                  const std::vector<std::uint8_t>& masked) {
    const Eigen::VectorXd qvec = p.W_q * g;
    const double scale = p.s / std::sqrt(static_cast<double>(p.dims.d_model));
    Eigen::VectorXd logits = scale * (K * qvec);
    return masked_softmax(logits, masked);
}

double CandidateSubset::logp() const {
    double sum = 0.0;
    for (double lp : step_logps) sum += lp;
    return sum;
}

CandidateSubset sample_one(const PolicyParams& p, const FrameEmbeddings& emb,
                           const env::Episode& ep, int T_sel, Rng& rng,
                           Eigen::VectorXd* pdf_accum) {
    if (T_sel < 1 || T_sel > ep.T) throw std::invalid_argument("sample_one: need 1 <= T' <= T");
    const Dims& d = p.dims;
    CandidateSubset cand;
    cand.indices.reserve(T_sel);
    std::vector<std::uint8_t> masked(ep.T, 0);
    Eigen::VectorXd g = (p.W_c * ep.query + p.u0).array().tanh();
    for (int i = 0; i < T_sel; ++i) {
        const Eigen::VectorXd prob = step_distribution(p, emb.K, g, masked);
        if (pdf_accum) *pdf_accum += prob;
        const int f = draw_categorical(prob, rng);
        cand.indices.push_back(f);
        cand.step_logps.push_back(std::log(prob[f]));
        cand.step_entropies.push_back(entropy_of(prob));
        masked[f] = 1;
        g = (p.W_g * g + p.W_u * emb.V.row(f).transpose()).array().tanh();
        (void)d;
    }
    cand.time_sorted = cand.indices;
    std::sort(cand.time_sorted.begin(), cand.time_sorted.end());
    return cand;
}

std::vector<CandidateSubset> sample_subsets(const PolicyParams& p, const env::Episode& ep,
                                            int T_sel, int N, std::uint64_t seed) {
    if (N < 1) throw std::invalid_argument("sample_subsets: N must be >= 1");
    if (T_sel > ep.T) throw std::invalid_argument("sample_subsets: T' exceeds episode length");
    const FrameEmbeddings emb = frame_embeddings(p, ep);
    std::vector<CandidateSubset> out;
    out.reserve(N);
    const std::uint64_t base = stream_seed(seed, hash_str(ep.id));
    for (int j = 0; j < N; ++j) {
        Rng rng(stream_seed(base, static_cast<std::uint64_t>(j)));
        out.push_back(sample_one(p, emb, ep, T_sel, rng));
    }
    return out;
}

LogprobResult subset_logprob(const PolicyParams& p, const env::Episode& ep,
                             std::span<const int> indices) {
    if (indices.size() > static_cast<std::size_t>(ep.T))
        throw std::invalid_argument("subset_logprob: subset longer than episode");
    std::vector<std::uint8_t> seen(ep.T, 0);
    for (int f : indices) {
        if (f < 0 || f >= ep.T) throw std::invalid_argument("subset_logprob: index out of range");
        if (seen[f]) throw std::invalid_argument("subset_logprob: duplicate index");
        seen[f] = 1;
    }
    const FrameEmbeddings emb = frame_embeddings(p, ep);
    std::vector<std::uint8_t> masked(ep.T, 0);
    Eigen::VectorXd g = (p.W_c * ep.query + p.u0).array().tanh();
    LogprobResult res;
    for (int f : indices) {
        const Eigen::VectorXd prob = step_distribution(p, emb.K, g, masked);
        res.step_logps.push_back(std::log(prob[f]));
        res.step_entropies.push_back(entropy_of(prob));
        res.logp += res.step_logps.back();
        masked[f] = 1;
        g = (p.W_g * g + p.W_u * emb.V.row(f).transpose()).array().tanh();
    }
    return res;
}

namespace {

struct ItemResult {
    PolicyParams grad;
    double obj = 0.0;
    double ent_sum = 0.0;
    std::vector<double> ratios;
};

// Forward + exact reverse pass for one episode's candidate group. w_ent is
// the weight applied to every per-step entropy, w_pg_scale to each
// ratio * advantage term.
ItemResult backward_item(const PolicyParams& p, const BatchItem& item, double w_pg_scale,
                         double w_ent, bool want_grad) {
    const env::Episode& ep = *item.episode;
    const Dims& d = p.dims;
    const double inv_sqrt_dm = 1.0 / std::sqrt(static_cast<double>(d.d_model));

    ItemResult res;
    res.grad = PolicyParams::zeros(d);

    const FrameEmbeddings emb = frame_embeddings(p, ep);
    Eigen::MatrixXd dK = Eigen::MatrixXd::Zero(ep.T, d.d_model);
    Eigen::MatrixXd dV = Eigen::MatrixXd::Zero(ep.T, d.d_model);

    const Eigen::VectorXd c0 = p.W_c * ep.query + p.u0;
    const Eigen::VectorXd g0 = c0.array().tanh();

    for (std::size_t j = 0; j < item.subsets.size(); ++j) {
        const CandidateSubset& cand = item.subsets[j];
        const int Ts = static_cast<int>(cand.indices.size());

        // forward with caches
        std::vector<Eigen::VectorXd> gs(Ts + 1);
        std::vector<Eigen::VectorXd> ps(Ts), qvecs(Ts);
        std::vector<double> Hs(Ts);
        gs[0] = g0;
        std::vector<std::uint8_t> masked(ep.T, 0);
        double logp_new = 0.0;
        for (int i = 0; i < Ts; ++i) {
            qvecs[i] = p.W_q * gs[i];
            Eigen::VectorXd logits = (p.s * inv_sqrt_dm) * (emb.K * qvecs[i]);
            ps[i] = masked_softmax(logits, masked);
            Hs[i] = entropy_of(ps[i]);
            const int f = cand.indices[i];
            if (masked[f] || ps[i][f] <= 0.0)
                throw std::invalid_argument("objective_and_gradient: invalid subset for episode");
            logp_new += std::log(ps[i][f]);
            masked[f] = 1;
            gs[i + 1] = (p.W_g * gs[i] + p.W_u * emb.V.row(f).transpose()).array().tanh();
        }

        const double ratio = std::exp(logp_new - item.old_logps[j]);
        res.ratios.push_back(ratio);
        const double w_pg = w_pg_scale * item.advantages[j] * ratio;
        res.obj += w_pg_scale * item.advantages[j] * ratio;
        for (double h : Hs) {
            res.obj += w_ent * h;
            res.ent_sum += h;
        }
        if (!want_grad) continue;

        // reverse pass
        Eigen::VectorXd dg = Eigen::VectorXd::Zero(d.d_g);
        for (int i = Ts - 1; i >= 0; --i) {
            const int f = cand.indices[i];
            // state update g_{i+1} = tanh(W_g g_i + W_u V_f)
            Eigen::VectorXd da =
                (dg.array() * (1.0 - gs[i + 1].array().square())).matrix();
            res.grad.W_g.noalias() += da * gs[i].transpose();
            res.grad.W_u.noalias() += da * emb.V.row(f);
            dV.row(f).noalias() += (p.W_u.transpose() * da).transpose();
            dg.noalias() = p.W_g.transpose() * da;

            // step-i distribution
            const Eigen::VectorXd& prob = ps[i];
            Eigen::VectorXd dl = Eigen::VectorXd::Zero(ep.T);
            for (int t = 0; t < ep.T; ++t) {
                if (prob[t] <= 0.0) continue;
                double v = -w_pg * prob[t];
                v += -w_ent * prob[t] * (std::log(prob[t]) + Hs[i]);
                dl[t] = v;
            }
            dl[f] += w_pg;

            const Eigen::VectorXd Kq = emb.K * qvecs[i];
            res.grad.s += inv_sqrt_dm * dl.dot(Kq);
            const double scale = p.s * inv_sqrt_dm;
            const Eigen::VectorXd dq = scale * (emb.K.transpose() * dl);
            dK.noalias() += scale * dl * qvecs[i].transpose();
            res.grad.W_q.noalias() += dq * gs[i].transpose();
            dg.noalias() += p.W_q.transpose() * dq;
        }
        // g_0 = tanh(W_c q + u0)
        Eigen::VectorXd dc0 = (dg.array() * (1.0 - g0.array().square())).matrix();
        res.grad.W_c.noalias() += dc0 * ep.query.transpose();
        res.grad.u0 += dc0;
    }

    if (want_grad) {
        // keys/values back into embeddings and heads
        Eigen::MatrixXd dE = dK * p.W_k + dV * p.W_v;
        res.grad.W_k.noalias() += dK.transpose() * emb.E;
        res.grad.W_v.noalias() += dV.transpose() * emb.E;
        res.grad.b_v += dV.colwise().sum().transpose();
        // token recurrence
        for (int t = 0; t < ep.T; ++t) {
            Eigen::VectorXd dh = dE.row(t).transpose();
            const Eigen::MatrixXd& h = emb.hidden[t];
            for (int l = ep.L - 1; l >= 0; --l) {
                Eigen::VectorXd dz = (dh.array() * (1.0 - h.col(l).array().square())).matrix();
                res.grad.token_in.noalias() += dz * ep.frames[t].col(l).transpose();
                if (l > 0) {
                    res.grad.token_rec.noalias() += dz * h.col(l - 1).transpose();
                    dh.noalias() = p.token_rec.transpose() * dz;
                }
            }
        }
    }
    return res;
}

}  // namespace

ObjectiveResult objective_and_gradient(const PolicyParams& p, std::span<const BatchItem> batch,
                                       double beta, EntropyMode mode, PolicyParams* grads_out,
                                       int workers) {
    std::size_t n_cand = 0, n_steps = 0;
    for (const BatchItem& item : batch) {
        if (!item.episode) throw std::invalid_argument("objective_and_gradient: null episode");
        if (item.subsets.size() != item.old_logps.size() ||
            item.subsets.size() != item.advantages.size())
            throw std::invalid_argument("objective_and_gradient: mismatched batch shapes");
        n_cand += item.subsets.size();
        for (const auto& c : item.subsets) n_steps += c.indices.size();
    }
    if (n_cand == 0) throw std::invalid_argument("objective_and_gradient: empty batch");

    const double w_pg_scale = 1.0 / static_cast<double>(n_cand);
    const double w_ent = mode == EntropyMode::kMeanOverSteps
                             ? beta / static_cast<double>(n_steps)
                             : beta / static_cast<double>(n_cand);
    const bool want_grad = grads_out != nullptr;

    std::vector<ItemResult> results(batch.size());
    if (workers <= 1 || batch.size() <= 1) {
        for (std::size_t i = 0; i < batch.size(); ++i)
            results[i] = backward_item(p, batch[i], w_pg_scale, w_ent, want_grad);
    } else {
        std::vector<std::future<ItemResult>> futs;
        futs.reserve(batch.size());
        for (std::size_t i = 0; i < batch.size(); ++i)
            futs.push_back(std::async(std::launch::async, [&, i] {
                return backward_item(p, batch[i], w_pg_scale, w_ent, want_grad);
            }));
        for (std::size_t i = 0; i < batch.size(); ++i) results[i] = futs[i].get();
    }

    ObjectiveResult out;
    if (want_grad) *grads_out = PolicyParams::zeros(p.dims);
    double ent_sum = 0.0;
    // ordered reduction: bit-identical regardless of worker count
    for (ItemResult& r : results) {
        out.objective += r.obj;
        ent_sum += r.ent_sum;
        out.ratios.insert(out.ratios.end(), r.ratios.begin(), r.ratios.end());
        if (want_grad) {
            auto dst = blocks(*grads_out);
            auto src = blocks(r.grad);
            for (std::size_t b = 0; b < dst.size(); ++b)
                for (std::size_t k = 0; k < dst[b].size(); ++k) dst[b].data[k] += src[b].data[k];
        }
    }
    out.mean_entropy = ent_sum / static_cast<double>(n_steps);
    return out;
}

}  // namespace refocus::policy
