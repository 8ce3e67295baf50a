// Command-line front end: reproducible experiment pipelines over the library
// modules, emitting CSV/JSON plot data plus a manifest per invocation.

#include "creditrbm/copula.hpp"
#include "creditrbm/errors.hpp"
#include "creditrbm/importance.hpp"
#include "creditrbm/manifest.hpp"
#include "creditrbm/merton.hpp"
#include "creditrbm/panel.hpp"
#include "creditrbm/rbm.hpp"
#include "creditrbm/sectors.hpp"
#include "creditrbm/stats.hpp"
#include "creditrbm/stress.hpp"
#include "creditrbm/tail.hpp"
#include "creditrbm/training.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace creditrbm;
using nlohmann::json;

namespace {

struct CommonOpts {
    std::string out_dir;
    int threads = 1;
};

std::string default_out_dir() {
    const char* env = std::getenv("CREDIT_RBM_OUT");
    return env && *env ? env : ".";
}

void add_common(CLI::App* cmd, CommonOpts& opts) {
    opts.out_dir = default_out_dir();
    cmd->add_option("--out-dir", opts.out_dir, "Output directory (env CREDIT_RBM_OUT)")
        ->capture_default_str();
    cmd->add_option("--threads", opts.threads, "Worker cap for parallel sections")
        ->check(CLI::Range(1, 256))
        ->capture_default_str();
}

std::string out_path(const CommonOpts& opts, const std::string& name) {
    fs::create_directories(opts.out_dir);
    return (fs::path(opts.out_dir) / name).string();
}

void write_json(const json& j, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    CRBM_REQUIRE(out.good(), "cannot open " + path);
    out << j.dump(2) << "\n";
}

// Stream ids per pipeline phase so substreams never collide across commands.
constexpr std::uint64_t kStreamGenerate = 1;
constexpr std::uint64_t kStreamSample = 2;
constexpr std::uint64_t kStreamTilt = 3;
constexpr std::uint64_t kStreamAis = 4;
constexpr std::uint64_t kStreamEval = 5;

struct PendingManifest {
    RunManifest manifest;
    std::string path;
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

    void finish() {
        manifest.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        manifest.save(path);
    }
};

PendingManifest start_manifest(const CommonOpts& opts, const std::string& command,
                               const std::vector<std::string>& argv) {
    PendingManifest pm;
    pm.manifest.command = command;
    pm.manifest.argv = argv;
    pm.path = out_path(opts, "manifest.json");
    return pm;
}

json ratio_to_json(const RatioEstimate& r, double tstar) {
    return json{{"log_ratio", r.log_ratio},
                {"std_dev", r.std_dev},
                {"relative_std", r.relative_std()},
                {"temperatures", r.temperatures},
                {"runs", r.runs},
                {"tstar", tstar}};
}

RatioEstimate ratio_from_json_file(const std::string& path) {
    std::ifstream in(path);
    CRBM_REQUIRE(in.good(), "cannot open ratio file " + path);
    try {
        json j;
        in >> j;
        RatioEstimate r;
        r.log_ratio = j.at("log_ratio").get<double>();
        r.std_dev = j.at("std_dev").get<double>();
        r.temperatures = j.at("temperatures").get<int>();
        r.runs = j.at("runs").get<int>();
        r.validate();
        return r;
    } catch (const json::exception& e) {
        throw DataError("malformed ratio file " + path + ": " + e.what());
    }
}

void write_var_csv(const std::vector<StressedVarRow>& rows, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    CRBM_REQUIRE(out.good(), "cannot open " + path);
    out << "alpha,var,ci_low,ci_high,method\n" << std::setprecision(17);
    for (const auto& row : rows) {
        out << row.alpha << ',' << row.var.value << ',' << row.var.ci_low << ','
            << row.var.ci_high << ',' << to_string(row.method) << "\n";
    }
}

int run_all(int argc, char** argv) {
    CLI::App app{"Credit portfolio risk engine built on a binary restricted Boltzmann machine"};
    app.require_subcommand(1);

    std::vector<std::string> raw_args;
    for (int i = 1; i < argc; ++i) raw_args.emplace_back(argv[i]);

    // ---- gen-one-factor ----
    auto* gen1 = app.add_subcommand("gen-one-factor",
                                    "Synthetic one-factor Gaussian copula PD panel");
    CommonOpts gen1_opts;
    int g1_n = 250, g1_days = 5000;
    double g1_pd_min = 0.02, g1_pd_max = 0.10, g1_rho = 0.2;
    std::uint64_t g1_seed = 0;
    std::string g1_mode = "conditional";
    gen1->add_option("--n", g1_n, "Obligor count")->required();
    gen1->add_option("--pd-min", g1_pd_min, "Lower mean-PD bound")->required();
    gen1->add_option("--pd-max", g1_pd_max, "Upper mean-PD bound")->required();
    gen1->add_option("--rho", g1_rho, "Equicorrelation coefficient")->required();
    gen1->add_option("--days", g1_days, "Panel length")->required();
    gen1->add_option("--seed", g1_seed, "RNG seed")->required();
    gen1->add_option("--mode", g1_mode, "conditional | latent")
        ->check(CLI::IsMember({"conditional", "latent"}))
        ->capture_default_str();
    add_common(gen1, gen1_opts);
    gen1->callback([&]() {
        auto pm = start_manifest(gen1_opts, "gen-one-factor", raw_args);
        const PanelMode mode =
            g1_mode == "latent" ? PanelMode::LatentPd : PanelMode::ConditionalPd;
        const PortfolioPanel panel =
            gen_one_factor_panel(g1_n, g1_pd_min, g1_pd_max, g1_rho, g1_days,
                                 Rng(g1_seed, kStreamGenerate), mode, gen1_opts.threads);
        const std::string path = out_path(gen1_opts, "panel.csv");
        save_panel(panel, path);
        pm.manifest.add_artifact("panel", path);
        pm.finish();
    });

    // ---- gen-sector ----
    auto* gens = app.add_subcommand("gen-sector",
                                    "Synthetic multi-factor sector PD panel (shuffled)");
    CommonOpts gens_opts;
    std::string gens_spec_file;
    int gens_days = 4000;
    std::uint64_t gens_seed = 0;
    gens->add_option("--spec", gens_spec_file, "Sector spec file (default: 5 sectors of 20)");
    gens->add_option("--days", gens_days, "Panel length")->required();
    gens->add_option("--seed", gens_seed, "RNG seed")->required();
    add_common(gens, gens_opts);
    gens->callback([&]() {
        auto pm = start_manifest(gens_opts, "gen-sector", raw_args);
        SectorCopulaSpec spec;
        if (gens_spec_file.empty()) {
            spec = SectorCopulaSpec::default_spec();
        } else {
            spec = SectorCopulaSpec::load(gens_spec_file);
            pm.manifest.add_input("spec", gens_spec_file);
        }
        const SectorPanelResult res =
            gen_sector_panel(spec, gens_days, Rng(gens_seed, kStreamGenerate),
                             gens_opts.threads);
        const std::string panel_path = out_path(gens_opts, "panel.csv");
        save_panel(res.panel, panel_path);
        const std::string truth_path = out_path(gens_opts, "ground_truth.csv");
        {
            std::ofstream out(truth_path, std::ios::trunc);
            out << "obligor,true_sector,original_index\n";
            for (std::size_t j = 0; j < res.true_sector.size(); ++j) {
                out << res.panel.obligor_ids[j] << ',' << res.true_sector[j] << ','
                    << res.permutation[j] << "\n";
            }
        }
        const std::string spec_path = out_path(gens_opts, "spec.txt");
        spec.save(spec_path);
        pm.manifest.add_artifact("panel", panel_path);
        pm.manifest.add_artifact("ground_truth", truth_path);
        pm.manifest.add_artifact("spec", spec_path);
        pm.finish();
    });

    // ---- merton ----
    auto* mert = app.add_subcommand("merton", "Structural PDs from market inputs");
    CommonOpts mert_opts;
    std::string mert_inputs;
    int mert_window = 252;
    double mert_horizon = 1.0, mert_lt_weight = 1.0;
    mert->add_option("--inputs", mert_inputs, "CSV date,equity_value,lctq,lltq,rate")
        ->required()
        ->check(CLI::ExistingFile);
    mert->add_option("--window", mert_window, "Equity-vol window (trading days)")
        ->capture_default_str();
    mert->add_option("--horizon", mert_horizon, "Horizon in years")->capture_default_str();
    mert->add_option("--lt-weight", mert_lt_weight,
                     "Weight on non-current liabilities in the barrier")
        ->capture_default_str();
    add_common(mert, mert_opts);
    mert->callback([&]() {
        auto pm = start_manifest(mert_opts, "merton", raw_args);
        pm.manifest.add_input("inputs", mert_inputs);
        MertonInputs inputs = load_merton_inputs(mert_inputs);
        inputs.vol_window = mert_window;
        inputs.horizon_years = mert_horizon;
        inputs.long_term_weight = mert_lt_weight;
        const MertonResult res = merton_pd(inputs, mert_opts.threads);
        const std::string path = out_path(mert_opts, "pd.csv");
        res.write_csv(path);
        if (res.zero_liability_dates > 0) {
            std::cerr << "note: " << res.zero_liability_dates
                      << " dates had zero liabilities; PD reported as 0\n";
        }
        pm.manifest.add_artifact("pd", path);
        pm.finish();
    });

    // ---- split ----
    auto* split = app.add_subcommand("split", "Chronological train/test split");
    CommonOpts split_opts;
    std::string split_panel_file;
    double split_fraction = 0.8;
    split->add_option("--panel", split_panel_file, "Panel CSV")->required()
        ->check(CLI::ExistingFile);
    split->add_option("--fraction", split_fraction, "Train fraction")->capture_default_str();
    add_common(split, split_opts);
    split->callback([&]() {
        auto pm = start_manifest(split_opts, "split", raw_args);
        pm.manifest.add_input("panel", split_panel_file);
        const PortfolioPanel panel = load_panel(split_panel_file);
        const auto [train, test] = split_panel(panel, split_fraction);
        const std::string train_path = out_path(split_opts, "train.csv");
        const std::string test_path = out_path(split_opts, "test.csv");
        save_panel(train, train_path);
        save_panel(test, test_path);
        pm.manifest.add_artifact("train", train_path);
        pm.manifest.add_artifact("test", test_path);
        pm.finish();
    });

    // ---- train ----
    auto* train = app.add_subcommand("train", "Persistent contrastive divergence training");
    CommonOpts train_opts;
    std::string train_panel_file, train_macro_file, train_schedule = "linear";
    TrainConfig tcfg;
    train->add_option("--panel", train_panel_file, "Panel CSV")->required()
        ->check(CLI::ExistingFile);
    train->add_option("--macro", train_macro_file,
                      "Macro series CSV; trains a joint model when given")
        ->check(CLI::ExistingFile);
    train->add_option("--hidden", tcfg.hidden_units, "Hidden units")->capture_default_str();
    train->add_option("--k", tcfg.gibbs_steps_k, "Gibbs steps per update")
        ->capture_default_str();
    train->add_option("--epochs", tcfg.epochs, "Training epochs")->capture_default_str();
    train->add_option("--lr", tcfg.initial_learning_rate, "Initial learning rate")
        ->capture_default_str();
    train->add_option("--batch", tcfg.minibatch_size, "Minibatch size")->capture_default_str();
    train->add_option("--schedule", train_schedule, "linear | constant")
        ->check(CLI::IsMember({"linear", "constant"}))
        ->capture_default_str();
    train->add_option("--seed", tcfg.seed, "RNG seed")->required();
    add_common(train, train_opts);
    train->callback([&]() {
        auto pm = start_manifest(train_opts, "train", raw_args);
        pm.manifest.add_input("panel", train_panel_file);
        tcfg.schedule = train_schedule == "constant" ? LrSchedule::Constant
                                                     : LrSchedule::LinearDecayToZero;
        const PortfolioPanel panel = load_panel(train_panel_file);
        Matrix data;
        JointMeta meta;
        if (train_macro_file.empty()) {
            data = panel.pd;
            meta.obligor_ids = panel.obligor_ids;
        } else {
            pm.manifest.add_input("macro", train_macro_file);
            const MacroSeries macro = load_macro_series(train_macro_file);
            AlignmentReport rep;
            const JointPanel joint = assemble_joint(panel, macro, &rep);
            data = joint.values;
            meta = JointMeta::from_panel(joint);
            if (rep.rows_dropped > 0 || rep.forward_fills > 0) {
                std::cerr << "note: alignment dropped " << rep.rows_dropped
                          << " rows, forward-filled " << rep.forward_fills << " values\n";
            }
        }
        const TrainResult res = train_pcd(data, tcfg, train_opts.threads);

        const std::string model_path = out_path(train_opts, "model.bin");
        save_model(res.params, VisibleMode::Probability, model_path);
        const std::string report_path = out_path(train_opts, "report.csv");
        res.report.write_csv(report_path);
        const std::string cfg_path = out_path(train_opts, "train_config.txt");
        save_train_config(tcfg, cfg_path);
        const std::string meta_path = out_path(train_opts, "meta.json");
        meta.save(meta_path);
        pm.manifest.add_artifact("model", model_path);
        pm.manifest.add_artifact("report", report_path);
        pm.manifest.add_artifact("train_config", cfg_path);
        pm.manifest.add_artifact("meta", meta_path);
        pm.finish();
    });

    // ---- eval ----
    auto* eval = app.add_subcommand("eval", "Reconstruction error and MMD against a panel");
    CommonOpts eval_opts;
    std::string eval_model, eval_panel_file;
    int eval_samples = 1000, eval_burnin = 1000;
    double eval_bandwidth = 0.0;
    std::uint64_t eval_seed = 0;
    eval->add_option("--model", eval_model, "Model file")->required()->check(CLI::ExistingFile);
    eval->add_option("--panel", eval_panel_file, "Panel CSV")->required()
        ->check(CLI::ExistingFile);
    eval->add_option("--samples", eval_samples, "Model samples for MMD")->capture_default_str();
    eval->add_option("--burnin", eval_burnin, "Gibbs burn-in per sample")->capture_default_str();
    eval->add_option("--bandwidth", eval_bandwidth,
                     "Gaussian kernel bandwidth (0 = median heuristic)")
        ->capture_default_str();
    eval->add_option("--seed", eval_seed, "RNG seed")->required();
    add_common(eval, eval_opts);
    eval->callback([&]() {
        auto pm = start_manifest(eval_opts, "eval", raw_args);
        pm.manifest.add_input("model", eval_model);
        pm.manifest.add_input("panel", eval_panel_file);
        const LoadedModel model = load_model(eval_model);
        const PortfolioPanel panel = load_panel(eval_panel_file);
        CRBM_REQUIRE(panel.n_obligors() == model.params.n_visible(),
                     "eval: panel obligor count does not match the model");
        const double recon = reconstruction_error(model.params, panel.pd);
        const Matrix generated = sample_pd_batch(model.params, eval_samples, eval_burnin,
                                                 Rng(eval_seed, kStreamEval),
                                                 eval_opts.threads)
                                     .transpose();
        const double bw =
            eval_bandwidth > 0.0 ? eval_bandwidth : median_heuristic_bandwidth(panel.pd);
        const double mmd2 = mmd(panel.pd, generated, bw);
        const std::string path = out_path(eval_opts, "metrics.json");
        write_json(json{{"reconstruction_error", recon},
                        {"mmd_squared", mmd2},
                        {"bandwidth", bw},
                        {"samples", eval_samples}},
                   path);
        pm.manifest.add_artifact("metrics", path);
        pm.finish();
    });

    // ---- mc-tail ----
    auto* mc = app.add_subcommand("mc-tail", "Plain Monte Carlo loss tail");
    CommonOpts mc_opts;
    std::string mc_model, mc_recoveries = "none";
    int mc_samples = 10000, mc_burnin = 1000;
    std::uint64_t mc_seed = 0;
    mc->add_option("--model", mc_model, "Model file")->required()->check(CLI::ExistingFile);
    mc->add_option("--samples", mc_samples, "Monte Carlo samples")->capture_default_str();
    mc->add_option("--burnin", mc_burnin, "Gibbs burn-in per sample")->capture_default_str();
    mc->add_option("--recoveries", mc_recoveries,
                   "none: losses are default counts; beta: Beta(1/2,1/2) recovery haircuts")
        ->check(CLI::IsMember({"none", "beta"}))
        ->capture_default_str();
    mc->add_option("--seed", mc_seed, "RNG seed")->required();
    add_common(mc, mc_opts);
    mc->callback([&]() {
        auto pm = start_manifest(mc_opts, "mc-tail", raw_args);
        pm.manifest.add_input("model", mc_model);
        const LoadedModel model = load_model(mc_model);
        const RecoveryModel rec = mc_recoveries == "beta" ? RecoveryModel::BetaHalfHalf
                                                          : RecoveryModel::None;
        const TailCurve curve =
            mc_tail_rbm(model.params, default_threshold_grid(model.params.n_visible()),
                        mc_samples, mc_burnin, Rng(mc_seed, kStreamSample), rec,
                        mc_opts.threads);
        const std::string path = out_path(mc_opts, "tail.csv");
        curve.write_csv(path);
        pm.manifest.add_artifact("tail", path);
        pm.finish();
    });

    // ---- tilt-find ----
    auto* tf = app.add_subcommand("tilt-find", "Bisect the tilt hitting a target mean loss");
    CommonOpts tf_opts;
    std::string tf_model;
    double tf_target = 0.0, tf_tol = 0.005, tf_tmax = 10.0;
    int tf_budget = 4000, tf_burnin = 500;
    std::uint64_t tf_seed = 0;
    tf->add_option("--model", tf_model, "Model file")->required()->check(CLI::ExistingFile);
    tf->add_option("--target-mean", tf_target, "Target mean relative loss in (0,1)")
        ->required();
    tf->add_option("--tol", tf_tol, "Tolerance on the mean relative loss")
        ->capture_default_str();
    tf->add_option("--budget", tf_budget, "Monte Carlo samples per bisection step")
        ->capture_default_str();
    tf->add_option("--tmax", tf_tmax, "Upper end of the tilt bracket")->capture_default_str();
    tf->add_option("--burnin", tf_burnin, "Gibbs burn-in per sample")->capture_default_str();
    tf->add_option("--seed", tf_seed, "RNG seed")->required();
    add_common(tf, tf_opts);
    tf->callback([&]() {
        auto pm = start_manifest(tf_opts, "tilt-find", raw_args);
        pm.manifest.add_input("model", tf_model);
        const LoadedModel model = load_model(tf_model);
        const double n = static_cast<double>(model.params.n_visible());
        const TstarResult res =
            find_tstar(model.params, tf_target * n, tf_tol * n, tf_budget,
                       Rng(tf_seed, kStreamTilt), tf_tmax, tf_burnin, tf_opts.threads);
        const std::string path = out_path(tf_opts, "tstar.json");
        write_json(json{{"tstar", res.tstar},
                        {"achieved_mean_loss", res.achieved_mean_loss},
                        {"achieved_mean_relative", res.achieved_mean_loss / n},
                        {"target_mean_relative", tf_target}},
                   path);
        pm.manifest.add_artifact("tstar", path);
        pm.finish();
    });

    // ---- ais ----
    auto* ais = app.add_subcommand("ais", "Annealed IS estimate of the partition ratio");
    CommonOpts ais_opts;
    std::string ais_model;
    double ais_tstar = 0.0;
    int ais_temps = 20000, ais_runs = 100, ais_burnin = 1000;
    std::uint64_t ais_seed = 0;
    ais->add_option("--model", ais_model, "Model file")->required()->check(CLI::ExistingFile);
    ais->add_option("--tstar", ais_tstar, "Tilt parameter")->required();
    ais->add_option("--temps", ais_temps, "Temperature count")->capture_default_str();
    ais->add_option("--runs", ais_runs, "Annealing runs")->capture_default_str();
    ais->add_option("--burnin", ais_burnin, "Base-model burn-in")->capture_default_str();
    ais->add_option("--seed", ais_seed, "RNG seed")->required();
    add_common(ais, ais_opts);
    ais->callback([&]() {
        auto pm = start_manifest(ais_opts, "ais", raw_args);
        pm.manifest.add_input("model", ais_model);
        const LoadedModel model = load_model(ais_model);
        const RatioEstimate r = ais_ratio(model.params, ais_tstar, ais_temps, ais_runs,
                                          Rng(ais_seed, kStreamAis), ais_burnin,
                                          ais_opts.threads);
        const std::string path = out_path(ais_opts, "ratio.json");
        write_json(ratio_to_json(r, ais_tstar), path);
        pm.manifest.add_artifact("ratio", path);
        pm.finish();
    });

    // ---- is-tail ----
    auto* ist = app.add_subcommand("is-tail", "Importance-sampling loss tail");
    CommonOpts ist_opts;
    std::string ist_model, ist_ratio_file;
    double ist_tstar = 0.0;
    int ist_samples = 10000, ist_burnin = 1000;
    std::uint64_t ist_seed = 0;
    ist->add_option("--model", ist_model, "Model file")->required()->check(CLI::ExistingFile);
    ist->add_option("--tstar", ist_tstar, "Tilt parameter")->required();
    ist->add_option("--ratio-file", ist_ratio_file, "ratio.json from the ais command")
        ->required()
        ->check(CLI::ExistingFile);
    ist->add_option("--samples", ist_samples, "Tilted-model samples")->capture_default_str();
    ist->add_option("--burnin", ist_burnin, "Gibbs burn-in per sample")->capture_default_str();
    ist->add_option("--seed", ist_seed, "RNG seed")->required();
    add_common(ist, ist_opts);
    ist->callback([&]() {
        auto pm = start_manifest(ist_opts, "is-tail", raw_args);
        pm.manifest.add_input("model", ist_model);
        pm.manifest.add_input("ratio", ist_ratio_file);
        const LoadedModel model = load_model(ist_model);
        const RatioEstimate ratio = ratio_from_json_file(ist_ratio_file);
        const auto grid = default_threshold_grid(model.params.n_visible());
        TailCurve curve = is_tail(model.params, ist_tstar, ratio, grid, ist_samples,
                                  Rng(ist_seed, kStreamSample), ist_burnin, ist_opts.threads);

        // A single tilt covers the whole curve, but thresholds far beyond the
        // tilted mean are poorly served; flag them.
        const LossMoments tilted = tilted_mean_loss_mc(
            model.params, ist_tstar, 2000, ist_burnin, Rng(ist_seed, kStreamTilt),
            ist_opts.threads);
        const double n = static_cast<double>(model.params.n_visible());
        const double reach = (tilted.mean + 3.0 * tilted.std_dev) / n;
        if (grid.back() > reach) {
            curve.warnings.push_back(
                "thresholds beyond tilted mean + 3 sd (relative " + std::to_string(reach) +
                "); consider a larger tilt");
        }
        for (const auto& w : curve.warnings) std::cerr << "warning: " << w << "\n";

        const std::string path = out_path(ist_opts, "tail.csv");
        curve.write_csv(path);
        const std::string prov_path = out_path(ist_opts, "provenance.json");
        json prov = ratio_to_json(ratio, ist_tstar);
        prov["seed"] = ist_seed;
        prov["samples"] = ist_samples;
        prov["burnin"] = ist_burnin;
        prov["tilted_mean_relative"] = tilted.mean / n;
        prov["tilted_std"] = tilted.std_dev;
        prov["warnings"] = curve.warnings;
        write_json(prov, prov_path);
        pm.manifest.add_artifact("tail", path);
        pm.manifest.add_artifact("provenance", prov_path);
        pm.finish();
    });

    // ---- var ----
    auto* var = app.add_subcommand("var", "Value at risk from a tail-curve CSV");
    CommonOpts var_opts;
    std::string var_tail_file;
    std::vector<double> var_alphas;
    var->add_option("--tail", var_tail_file, "TailCurve CSV")->required()
        ->check(CLI::ExistingFile);
    var->add_option("--alpha", var_alphas, "Confidence levels")->required()->expected(-1);
    add_common(var, var_opts);
    var->callback([&]() {
        auto pm = start_manifest(var_opts, "var", raw_args);
        pm.manifest.add_input("tail", var_tail_file);
        const TailCurve curve = TailCurve::read_csv(var_tail_file);
        std::vector<StressedVarRow> rows;
        for (double alpha : var_alphas) {
            StressedVarRow row;
            row.alpha = alpha;
            row.var = var_from_tail(curve, alpha);
            row.method = curve.method;
            rows.push_back(row);
        }
        const std::string path = out_path(var_opts, "var.csv");
        write_var_csv(rows, path);
        pm.manifest.add_artifact("var", path);
        pm.finish();
    });

    // ---- fit-copula ----
    auto* fitc = app.add_subcommand("fit-copula", "Factor-copula maximum likelihood");
    CommonOpts fitc_opts;
    std::string fitc_panel_file;
    std::vector<double> fitc_t_grid;
    fitc->add_option("--panel", fitc_panel_file, "Panel CSV")->required()
        ->check(CLI::ExistingFile);
    fitc->add_option("--t-grid", fitc_t_grid,
                     "Degrees-of-freedom grid; fits a t copula when given")
        ->expected(-1);
    add_common(fitc, fitc_opts);
    fitc->callback([&]() {
        auto pm = start_manifest(fitc_opts, "fit-copula", raw_args);
        pm.manifest.add_input("panel", fitc_panel_file);
        const PortfolioPanel panel = load_panel(fitc_panel_file);

        Vector loadings;
        json info;
        if (fitc_t_grid.empty()) {
            loadings = fit_gaussian_copula(panel);
            info["model"] = "gaussian";
        } else {
            const TCopulaFit fit = fit_t_copula(panel, fitc_t_grid);
            loadings = fit.loadings;
            info["model"] = "t";
            info["nu"] = fit.nu;
            info["log_likelihood"] = fit.log_likelihood;
        }
        const std::string load_path = out_path(fitc_opts, "loadings.csv");
        {
            std::ofstream out(load_path, std::ios::trunc);
            out << "obligor,loading\n" << std::setprecision(17);
            for (Eigen::Index i = 0; i < loadings.size(); ++i) {
                out << panel.obligor_ids[static_cast<std::size_t>(i)] << ',' << loadings[i]
                    << "\n";
            }
        }
        const std::string info_path = out_path(fitc_opts, "fit.json");
        write_json(info, info_path);
        pm.manifest.add_artifact("loadings", load_path);
        pm.manifest.add_artifact("fit", info_path);
        pm.finish();
    });

    // ---- sectors ----
    auto* sect = app.add_subcommand("sectors", "Receptive-field sector extraction");
    CommonOpts sect_opts;
    std::string sect_model;
    double sect_epsilon = 0.0;
    sect->add_option("--model", sect_model, "Model file")->required()
        ->check(CLI::ExistingFile);
    sect->add_option("--epsilon", sect_epsilon,
                     "Fixed threshold; 0 sweeps the default grid and keeps the best");
    add_common(sect, sect_opts);
    sect->callback([&]() {
        auto pm = start_manifest(sect_opts, "sectors", raw_args);
        pm.manifest.add_input("model", sect_model);
        const LoadedModel model = load_model(sect_model);

        double chosen_epsilon = sect_epsilon;
        Partition partition;
        std::vector<EpsilonSweepRow> table;
        if (sect_epsilon > 0.0) {
            const SectorGraph g =
                build_graph(receptive_fields(model.params), sect_epsilon);
            partition = detect_communities(g);
            table.push_back(
                EpsilonSweepRow{sect_epsilon, partition.n_blocks(), partition.modularity});
        } else {
            const EpsilonSweepResult sweep =
                sweep_epsilon(model.params, default_epsilon_grid(), sect_opts.threads);
            chosen_epsilon = sweep.selected_epsilon;
            partition = sweep.selected_partition;
            table = sweep.table;
        }

        const SectorGraph graph =
            build_graph(receptive_fields(model.params), chosen_epsilon);
        const std::string edges_path = out_path(sect_opts, "edges.txt");
        write_edge_list(graph, edges_path);
        std::vector<std::string> ids;
        for (Eigen::Index i = 0; i < model.params.n_visible(); ++i)
            ids.push_back("obl_" + std::to_string(i));
        const std::string part_path = out_path(sect_opts, "partition.csv");
        write_partition_csv(partition, ids, part_path);
        const std::string sweep_path = out_path(sect_opts, "sweep.csv");
        {
            std::ofstream out(sweep_path, std::ios::trunc);
            out << "epsilon,communities,modularity\n" << std::setprecision(17);
            for (const auto& row : table) {
                out << row.epsilon << ',' << row.communities << ',' << row.modularity << "\n";
            }
        }
        write_json(json{{"selected_epsilon", chosen_epsilon},
                        {"communities", partition.n_blocks()},
                        {"modularity", partition.modularity}},
                   out_path(sect_opts, "selection.json"));
        pm.manifest.add_artifact("edges", edges_path);
        pm.manifest.add_artifact("partition", part_path);
        pm.manifest.add_artifact("sweep", sweep_path);
        pm.manifest.add_artifact("selection", out_path(sect_opts, "selection.json"));
        pm.finish();
    });

    // ---- stress ----
    auto* stress = app.add_subcommand("stress", "Scenario-conditional tail and VaR");
    CommonOpts stress_opts;
    std::string stress_model, stress_meta_file, stress_scenario_file;
    std::vector<double> stress_alphas;
    int stress_steps = 1000, stress_samples = 10000, stress_bins = 30;
    bool stress_restarts = false;
    std::uint64_t stress_seed = 0;
    stress->add_option("--model", stress_model, "Joint model file")->required()
        ->check(CLI::ExistingFile);
    stress->add_option("--meta", stress_meta_file, "meta.json from joint training")
        ->required()
        ->check(CLI::ExistingFile);
    stress->add_option("--scenario", stress_scenario_file,
                       "Scenario file of 'variable = value' lines")
        ->required()
        ->check(CLI::ExistingFile);
    stress->add_option("--alpha", stress_alphas, "VaR confidence levels")->required()
        ->expected(-1);
    stress->add_option("--steps", stress_steps, "Burn-in Gibbs steps")->capture_default_str();
    stress->add_option("--samples", stress_samples, "Conditional samples")
        ->capture_default_str();
    stress->add_flag("--restarts", stress_restarts,
                     "Independent restart chains instead of one persistent chain");
    stress->add_option("--bins", stress_bins, "Histogram bins")->capture_default_str();
    stress->add_option("--seed", stress_seed, "RNG seed")->required();
    add_common(stress, stress_opts);
    stress->callback([&]() {
        auto pm = start_manifest(stress_opts, "stress", raw_args);
        pm.manifest.add_input("model", stress_model);
        pm.manifest.add_input("meta", stress_meta_file);
        pm.manifest.add_input("scenario", stress_scenario_file);
        const LoadedModel model = load_model(stress_model);
        const JointMeta meta = JointMeta::load(stress_meta_file);
        const auto n_obl = static_cast<Eigen::Index>(meta.obligor_ids.size());
        CRBM_REQUIRE(model.params.n_visible() ==
                         n_obl + static_cast<Eigen::Index>(meta.macro_names.size()),
                     "stress: model size does not match the metadata");

        const Scenario scenario =
            normalize_scenario(load_scenario(stress_scenario_file), meta);
        for (std::size_t i = 0; i < scenario.clipped.size(); ++i) {
            if (scenario.clipped[i]) {
                std::cerr << "warning: scenario value for " << scenario.variables[i]
                          << " clipped into the trained [0,1] range\n";
            }
        }
        const auto clamp = scenario_clamp_map(scenario, meta);

        Rng rng(stress_seed, kStreamSample);
        const auto obligors = unclamped_obligors(n_obl, clamp);
        const auto grid = default_threshold_grid(static_cast<Eigen::Index>(obligors.size()));
        const TailCurve curve =
            stressed_tail(model.params, clamp, n_obl, grid, stress_steps, stress_samples,
                          rng.substream(10), scenario.name, stress_restarts,
                          stress_opts.threads);
        const std::string tail_path = out_path(stress_opts, "tail.csv");
        curve.write_csv(tail_path);

        const auto rows = stressed_var(model.params, clamp, n_obl, stress_alphas,
                                       stress_steps, stress_samples, rng.substream(11),
                                       stress_opts.threads);
        const std::string var_path = out_path(stress_opts, "var.csv");
        write_var_csv(rows, var_path);

        // Fig.-style histogram of the conditional relative losses.
        const Matrix cond = conditional_gibbs(model.params, clamp, stress_steps,
                                              stress_samples, rng.substream(10),
                                              stress_restarts, stress_opts.threads);
        std::vector<Eigen::Index> free_idx;
        for (Eigen::Index i = 0; i < model.params.n_visible(); ++i)
            if (!clamp.count(i)) free_idx.push_back(i);
        std::vector<double> losses(static_cast<std::size_t>(cond.cols()), 0.0);
        int obl_rows = 0;
        for (std::size_t k = 0; k < free_idx.size(); ++k)
            if (free_idx[k] < n_obl) ++obl_rows;
        for (Eigen::Index c = 0; c < cond.cols(); ++c) {
            double sum = 0.0;
            for (std::size_t k = 0; k < free_idx.size(); ++k)
                if (free_idx[k] < n_obl) sum += cond(static_cast<Eigen::Index>(k), c);
            losses[static_cast<std::size_t>(c)] = sum / obl_rows;
        }
        const Histogram hist = histogram_counts(losses, stress_bins, 0.0, 1.0);
        const std::string hist_path = out_path(stress_opts, "histogram.csv");
        {
            std::ofstream out(hist_path, std::ios::trunc);
            out << "bin_low,bin_high,count\n" << std::setprecision(17);
            for (std::size_t b = 0; b < hist.counts.size(); ++b) {
                out << hist.edges[b] << ',' << hist.edges[b + 1] << ',' << hist.counts[b]
                    << "\n";
            }
        }
        write_json(json{{"scenario", scenario.name},
                        {"variables", scenario.variables},
                        {"normalized",
                         std::vector<double>(scenario.normalized.data(),
                                             scenario.normalized.data() +
                                                 scenario.normalized.size())},
                        {"clipped", scenario.clipped}},
                   out_path(stress_opts, "scenario_applied.json"));
        pm.manifest.add_artifact("tail", tail_path);
        pm.manifest.add_artifact("var", var_path);
        pm.manifest.add_artifact("histogram", hist_path);
        pm.manifest.add_artifact("scenario_applied", out_path(stress_opts, "scenario_applied.json"));
        pm.finish();
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << json{{"error", {{"type", "usage"}, {"message", e.what()}}}}.dump() << "\n";
        return 2;
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run_all(argc, argv);
    } catch (const NumericalError& e) {
        std::cerr << json{{"error", {{"type", "numerical"}, {"message", e.what()}}}}.dump()
                  << "\n";
        return 4;
    } catch (const DataError& e) {
        std::cerr << json{{"error", {{"type", "data"}, {"message", e.what()}}}}.dump() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << json{{"error", {{"type", "internal"}, {"message", e.what()}}}}.dump()
                  << "\n";
        return 4;
    }
}
