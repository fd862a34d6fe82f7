// refocus: reproducible frame-selection experiments from the command line.
//
// Subcommands: gen, filter, train, analyze, niah, bins. Every command writes
// resolved-config.json and manifest.json into its output directory so any
// artifact can be regenerated from the config alone.

#include <CLI11.hpp>
#include <Eigen/Dense>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "refocus/analysis.hpp"
#include "refocus/checkpoint.hpp"
#include "refocus/episode.hpp"
#include "refocus/filterpipe.hpp"
#include "refocus/policy.hpp"
#include "refocus/rewardsvc.hpp"
#include "refocus/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace refocus;

namespace {

void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + path.string());
    os << text;
}

void write_run_metadata(const fs::path& outdir, const json& resolved,
                        const std::vector<std::string>& outputs) {
    fs::create_directories(outdir);
    write_text(outdir / "resolved-config.json", resolved.dump(2) + "\n");
    write_text(outdir / "manifest.json", json{{"outputs", outputs}}.dump(2) + "\n");
}

struct EnvFlags {
    env::EnvConfig cfg;

    void attach(CLI::App* cmd) {
        cmd->add_option("--T", cfg.T, "Frames per episode");
        cmd->add_option("--L", cfg.L, "Tokens per frame");
        cmd->add_option("--d-in", cfg.d_in, "Token feature dimension");
        cmd->add_option("--d-q", cfg.d_q, "Query dimension");
        cmd->add_option("--M", cfg.M, "Answer options");
        cmd->add_option("--n-needle", cfg.n_needle, "Needle frames per episode");
        cmd->add_option("--signal", cfg.signal_strength, "Needle signature strength");
    }

    json resolved() const {
        return {{"T", cfg.T},       {"L", cfg.L},
                {"d_in", cfg.d_in}, {"d_q", cfg.d_q},
                {"M", cfg.M},       {"n_needle", cfg.n_needle},
                {"signal_strength", cfg.signal_strength}};
    }
};

struct OracleFlags {
    env::OracleConfig cfg;

    void attach(CLI::App* cmd) {
        cmd->add_option("--gain-a", cfg.gain_a, "Needle-coverage slope");
        cmd->add_option("--bias-b", cfg.bias_b, "No-coverage logit");
        cmd->add_option("--noise-std", cfg.noise_std, "Deterministic oracle noise");
    }

    json resolved() const {
        return {{"gain_a", cfg.gain_a}, {"bias_b", cfg.bias_b}, {"noise_std", cfg.noise_std}};
    }
};

std::vector<env::Episode> load_dataset(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open dataset " + path);
    auto eps = env::read_jsonl(is);
    if (eps.empty()) throw std::runtime_error("empty dataset " + path);
    return eps;
}

policy::Dims dims_for(const env::Episode& ep, int d_e, int d_model, int d_g) {
    policy::Dims d;
    d.d_in = ep.d_in;
    d.d_q = static_cast<int>(ep.query.size());
    d.d_e = d_e;
    d.d_model = d_model;
    d.d_g = d_g;
    return d;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"refocus: frame-selection policy laboratory"};
    app.require_subcommand(1);
    app.set_config("--config", "", "TOML config file; flags override file values");

    // ---- gen ----
    auto* gen = app.add_subcommand("gen", "Generate an episode dataset (JSONL)");
    EnvFlags gen_env;
    gen_env.attach(gen);
    int gen_count = 100;
    std::uint64_t gen_seed = 0;
    std::string gen_out = "episodes.jsonl", gen_outdir = ".";
    gen->add_option("--n", gen_count, "Episode count");
    gen->add_option("--seed", gen_seed, "Base seed");
    gen->add_option("--out", gen_out, "Output JSONL path")->required();
    gen->add_option("--outdir", gen_outdir, "Directory for config and manifest");

    // ---- filter ----
    auto* fil = app.add_subcommand("filter", "Reward-variance filtering");
    OracleFlags fil_oracle;
    fil_oracle.attach(fil);
    std::string fil_in, fil_out = "retained.jsonl", fil_report = "filter-report.json";
    std::string fil_outdir = ".";
    double fil_tau = 0.21;
    int fil_k = 32;
    fil->add_option("--in", fil_in, "Input JSONL")->required();
    fil->add_option("--out", fil_out, "Retained JSONL");
    fil->add_option("--tau", fil_tau, "Variance threshold");
    fil->add_option("--report", fil_report, "Report JSON path");
    fil->add_option("--k", fil_k, "Probe sample count per region");
    fil->add_option("--outdir", fil_outdir, "Directory for config and manifest");

    // ---- train ----
    auto* tr = app.add_subcommand("train", "Policy optimization");
    OracleFlags tr_oracle;
    tr_oracle.attach(tr);
    train::TrainConfig tcfg;
    tcfg.batch_size = 8;
    tcfg.total_steps = 200;
    std::string tr_data, tr_outdir = "run";
    std::string tr_endpoint;
    int tr_de = 32, tr_dmodel = 32, tr_dg = 32;
    bool tr_entropy_sum = false;
    tr->add_option("--data", tr_data, "Episode JSONL")->required();
    tr->add_option("--outdir", tr_outdir, "Run directory");
    tr->add_option("--steps", tcfg.total_steps, "Outer steps");
    tr->add_option("--batch", tcfg.batch_size, "Episodes per step");
    tr->add_option("--N", tcfg.N, "Candidates per episode");
    tr->add_option("--T-sel", tcfg.T_sel, "Frames per subset");
    tr->add_option("--K", tcfg.K, "Inner updates per snapshot");
    tr->add_option("--beta", tcfg.beta, "Entropy coefficient");
    tr->add_option("--lr-heads", tcfg.lr_heads, "Head learning rate");
    tr->add_option("--lr-backbone", tcfg.lr_backbone, "Backbone learning rate");
    tr->add_option("--warmup", tcfg.warmup_ratio, "Warmup ratio");
    tr->add_option("--wd", tcfg.weight_decay, "Weight decay");
    tr->add_option("--clip", tcfg.grad_clip, "Global gradient clip");
    tr->add_option("--eps-adv", tcfg.eps_adv, "Advantage epsilon");
    tr->add_option("--seed", tcfg.seed, "Seed");
    tr->add_option("--workers", tcfg.workers, "Worker pool size (1 = bit-reproducible)");
    tr->add_option("--checkpoint-every", tcfg.checkpoint_every, "Checkpoint period (0: final only)");
    tr->add_option("--d-e", tr_de, "Frame embedding dimension");
    tr->add_option("--d-model", tr_dmodel, "Key/query dimension");
    tr->add_option("--d-g", tr_dg, "Selection state dimension");
    tr->add_flag("--entropy-sum", tr_entropy_sum, "Sum step entropies instead of averaging");
    tr->add_option("--endpoint", tr_endpoint, "Remote scoring endpoint (default: local oracle)");

    // ---- analyze ----
    auto* an = app.add_subcommand("analyze", "Selection PDFs and pairwise diversity");
    std::string an_data, an_ckpt, an_outdir = "analysis";
    int an_tsel = 8, an_runs = 64;
    std::uint64_t an_seed = 0;
    an->add_option("--data", an_data, "Episode JSONL")->required();
    an->add_option("--ckpt", an_ckpt, "Checkpoint prefix")->required();
    an->add_option("--T-sel", an_tsel, "Frames per subset");
    an->add_option("--runs", an_runs, "Sampling runs per episode");
    an->add_option("--seed", an_seed, "Seed");
    an->add_option("--outdir", an_outdir, "Output directory");

    // ---- niah ----
    auto* ni = app.add_subcommand("niah", "Needle-in-a-haystack sweep");
    EnvFlags ni_env;
    ni_env.attach(ni);
    std::string ni_ckpt, ni_outdir = "niah";
    std::vector<int> ni_T = {64, 128, 192, 256, 384, 512};
    std::vector<double> ni_pos = {0.1, 0.26, 0.42, 0.58, 0.74, 0.9};
    int ni_tsel = 8, ni_runs = 64;
    std::uint64_t ni_seed = 0;
    bool ni_plot = false;
    ni->add_option("--ckpt", ni_ckpt, "Checkpoint prefix")->required();
    ni->add_option("--T-list", ni_T, "Total frame counts")->delimiter(',');
    ni->add_option("--pos-list", ni_pos, "Relative needle positions")->delimiter(',');
    ni->add_option("--T-sel", ni_tsel, "Frames per subset");
    ni->add_option("--runs", ni_runs, "Sampling runs per cell");
    ni->add_option("--seed", ni_seed, "Seed");
    ni->add_option("--outdir", ni_outdir, "Output directory");
    ni->add_flag("--plot-data", ni_plot, "Also write gnuplot-ready columns");

    // ---- bins ----
    auto* bi = app.add_subcommand("bins", "Cumulative likelihood-bin evaluation");
    OracleFlags bi_oracle;
    bi_oracle.attach(bi);
    std::string bi_data, bi_ckpt, bi_outdir = "bins";
    std::vector<int> bi_ks = {20, 40, 60, 80};
    int bi_tsel = 8, bi_subsets = 32, bi_runs = 64;
    std::uint64_t bi_seed = 0;
    bool bi_plot = false;
    bi->add_option("--data", bi_data, "Episode JSONL")->required();
    bi->add_option("--ckpt", bi_ckpt, "Checkpoint prefix")->required();
    bi->add_option("--ks", bi_ks, "Cumulative bin percentages")->delimiter(',');
    bi->add_option("--T-sel", bi_tsel, "Frames per subset");
    bi->add_option("--subsets-per-bin", bi_subsets, "Subsets sampled per bin side");
    bi->add_option("--runs", bi_runs, "PDF sampling runs per episode");
    bi->add_option("--seed", bi_seed, "Seed");
    bi->add_option("--outdir", bi_outdir, "Output directory");
    bi->add_flag("--plot-data", bi_plot, "Also write gnuplot-ready columns");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*gen) {
            std::vector<env::Episode> eps;
            eps.reserve(gen_count);
            for (int i = 0; i < gen_count; ++i)
                eps.push_back(env::gen_episode(
                    gen_env.cfg, stream_seed(gen_seed, static_cast<std::uint64_t>(i))));
            std::ostringstream body;
            env::write_jsonl(body, eps);
            write_text(gen_out, body.str());
            json resolved = gen_env.resolved();
            resolved["n"] = gen_count;
            resolved["seed"] = gen_seed;
            resolved["out"] = gen_out;
            write_run_metadata(gen_outdir, {{"command", "gen"}, {"params", resolved}}, {gen_out});
        } else if (*fil) {
            const auto dataset = load_dataset(fil_in);
            const env::OracleConfig oc = fil_oracle.cfg;
            filter::OracleFn oracle = [&](const env::Episode& ep, std::span<const int> subset) {
                return env::oracle_logits(ep, subset, oc);
            };
            auto [retained, report] = filter::score_and_filter(dataset, oracle, fil_tau);
            std::ostringstream body;
            env::write_jsonl(body, retained);
            write_text(fil_out, body.str());
            write_text(fil_report, filter::report_to_json(report) + "\n");
            json resolved = {{"in", fil_in},     {"out", fil_out},
                             {"tau", fil_tau},   {"report", fil_report},
                             {"k", fil_k},       {"oracle", fil_oracle.resolved()}};
            write_run_metadata(fil_outdir, {{"command", "filter"}, {"params", resolved}},
                               {fil_out, fil_report});
        } else if (*tr) {
            const auto dataset = load_dataset(tr_data);
            tcfg.entropy_mode = tr_entropy_sum ? policy::EntropyMode::kSumOverSteps
                                               : policy::EntropyMode::kMeanOverSteps;
            tcfg.validate();
            const policy::Dims dims = dims_for(dataset.front(), tr_de, tr_dmodel, tr_dg);

            json resolved = {{"data", tr_data},
                             {"steps", tcfg.total_steps},
                             {"batch", tcfg.batch_size},
                             {"N", tcfg.N},
                             {"T_sel", tcfg.T_sel},
                             {"K", tcfg.K},
                             {"beta", tcfg.beta},
                             {"lr_heads", tcfg.lr_heads},
                             {"lr_backbone", tcfg.lr_backbone},
                             {"warmup_ratio", tcfg.warmup_ratio},
                             {"weight_decay", tcfg.weight_decay},
                             {"grad_clip", tcfg.grad_clip},
                             {"eps_adv", tcfg.eps_adv},
                             {"seed", tcfg.seed},
                             {"workers", tcfg.workers},
                             {"checkpoint_every", tcfg.checkpoint_every},
                             {"d_e", tr_de},
                             {"d_model", tr_dmodel},
                             {"d_g", tr_dg},
                             {"entropy_mode", tr_entropy_sum ? "sum" : "mean"},
                             {"endpoint", tr_endpoint},
                             {"oracle", tr_oracle.resolved()}};
            const fs::path outdir(tr_outdir);
            fs::create_directories(outdir / "checkpoints");
            // resolved config lands on disk before any work starts
            write_run_metadata(outdir, {{"command", "train"}, {"params", resolved}},
                               {(outdir / "metrics.jsonl").string(),
                                (outdir / "checkpoints").string()});

            std::ofstream metrics(outdir / "metrics.jsonl", std::ios::trunc);
            train::MetricSink sink = [&](const train::StepMetrics& m) {
                metrics << json{{"step", m.step},
                                {"mean_reward", m.mean_reward},
                                {"mean_entropy", m.mean_entropy},
                                {"grad_norm", m.grad_norm},
                                {"lr", m.lr},
                                {"needle_recall", m.needle_recall}}
                               .dump()
                        << "\n";
            };

            std::unique_ptr<train::RewardBackend> backend;
            if (tr_endpoint.empty())
                backend = std::make_unique<train::LocalOracleBackend>(tr_oracle.cfg);
            else
                backend = std::make_unique<svc::RemoteOracleBackend>(tr_endpoint);
            train::run_training(tcfg, dims, dataset, *backend, sink,
                                (outdir / "checkpoints").string());
        } else if (*an) {
            const auto dataset = load_dataset(an_data);
            const policy::PolicyParams params = ckpt::load_checkpoint(an_ckpt);
            std::vector<analysis::SelectionPdf> pdfs;
            std::ostringstream csv;
            csv << "episode,frame,p\n";
            for (const auto& ep : dataset) {
                pdfs.push_back(
                    analysis::estimate_selection_pdf(params, ep, an_tsel, an_runs, an_seed));
                for (int t = 0; t < ep.T; ++t)
                    csv << ep.id << "," << t << "," << pdfs.back().p[t] << "\n";
            }
            const fs::path outdir(an_outdir);
            fs::create_directories(outdir);
            write_text(outdir / "pdfs.csv", csv.str());
            json div;
            if (pdfs.size() >= 2) {
                const auto d = analysis::pairwise_diversity(pdfs);
                div = {{"js", d.js}, {"sym_kl", d.sym_kl}, {"w1", d.w1},
                       {"kl_smoothing", analysis::kKlSmoothing}};
            }
            write_text(outdir / "diversity.json", div.dump(2) + "\n");
            json resolved = {{"data", an_data}, {"ckpt", an_ckpt},   {"T_sel", an_tsel},
                             {"runs", an_runs}, {"seed", an_seed}};
            write_run_metadata(outdir, {{"command", "analyze"}, {"params", resolved}},
                               {(outdir / "pdfs.csv").string(),
                                (outdir / "diversity.json").string()});
        } else if (*ni) {
            const policy::PolicyParams params = ckpt::load_checkpoint(ni_ckpt);
            env::EnvConfig base = ni_env.cfg;
            base.n_needle = 1;
            const std::uint64_t seed = ni_seed;
            analysis::EnvFactory factory = [&](int T, double pos) {
                env::EnvConfig cfg = base;
                cfg.T = T;
                const int needle = std::min(T - 1, static_cast<int>(pos * T));
                return env::gen_episode_with_needles(
                    cfg, stream_seed(seed, static_cast<std::uint64_t>(T), hash_str("niah")),
                    {needle});
            };
            const auto grid = analysis::vniah_sweep(params, factory, ni_T, ni_pos, ni_tsel,
                                                    ni_runs, ni_seed);
            const fs::path outdir(ni_outdir);
            fs::create_directories(outdir);
            write_text(outdir / "niah.csv", analysis::niah_grid_csv(grid));
            std::vector<std::string> outputs = {(outdir / "niah.csv").string()};
            if (ni_plot) {
                std::ostringstream plot;
                plot << "# frames position needle_mass uniform_mass\n";
                for (std::size_t r = 0; r < grid.frame_counts.size(); ++r)
                    for (std::size_t c = 0; c < grid.positions.size(); ++c)
                        plot << grid.frame_counts[r] << " " << grid.positions[c] << " "
                             << grid.cells(r, c) << " " << 1.0 / grid.frame_counts[r] << "\n";
                write_text(outdir / "niah.dat", plot.str());
                outputs.push_back((outdir / "niah.dat").string());
            }
            json resolved = {{"ckpt", ni_ckpt},   {"T_list", ni_T},  {"pos_list", ni_pos},
                             {"T_sel", ni_tsel},  {"runs", ni_runs}, {"seed", ni_seed},
                             {"env", ni_env.resolved()}};
            write_run_metadata(outdir, {{"command", "niah"}, {"params", resolved}}, outputs);
        } else if (*bi) {
            const auto dataset = load_dataset(bi_data);
            const policy::PolicyParams params = ckpt::load_checkpoint(bi_ckpt);
            const env::OracleConfig oc = bi_oracle.cfg;
            filter::OracleFn oracle = [&](const env::Episode& ep, std::span<const int> subset) {
                return env::oracle_logits(ep, subset, oc);
            };
            const auto table = analysis::likelihood_bins_eval(params, dataset, oracle, bi_ks,
                                                              bi_tsel, bi_subsets, bi_runs,
                                                              bi_seed);
            const fs::path outdir(bi_outdir);
            fs::create_directories(outdir);
            write_text(outdir / "bins.csv", analysis::bin_table_csv(table));
            std::vector<std::string> outputs = {(outdir / "bins.csv").string()};
            if (bi_plot) {
                std::ostringstream plot;
                plot << "# k over_accuracy under_accuracy\n";
                for (std::size_t i = 0; i < table.ks.size(); ++i)
                    plot << table.ks[i] << " " << table.over_accuracy[i] << " "
                         << table.under_accuracy[i] << "\n";
                write_text(outdir / "bins.dat", plot.str());
                outputs.push_back((outdir / "bins.dat").string());
            }
            json resolved = {{"data", bi_data},     {"ckpt", bi_ckpt},
                             {"ks", bi_ks},         {"T_sel", bi_tsel},
                             {"subsets_per_bin", bi_subsets},
                             {"runs", bi_runs},     {"seed", bi_seed},
                             {"oracle", bi_oracle.resolved()}};
            write_run_metadata(outdir, {{"command", "bins"}, {"params", resolved}}, outputs);
        }
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
