#include "creditrbm/training.hpp"

#include "creditrbm/errors.hpp"
#include "creditrbm/stats.hpp"
#include "creditrbm/threading.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>

namespace creditrbm {

namespace {

// Stream ids inside a training run; chains get 16 + chain index.
constexpr std::uint64_t kInitStream = 0;
constexpr std::uint64_t kShuffleStream = 1;
constexpr std::uint64_t kChainStreamBase = 16;

Matrix sigmoid_matrix(Matrix act) {
    for (Eigen::Index c = 0; c < act.cols(); ++c)
        for (Eigen::Index r = 0; r < act.rows(); ++r) act(r, c) = stats::sigmoid(act(r, c));
    return act;
}

Vector normalized_weights(const std::optional<Vector>& weights, Eigen::Index rows,
                          const char* op) {
    if (!weights) return Vector::Constant(rows, 1.0 / static_cast<double>(rows));
    CRBM_REQUIRE(weights->size() == rows, std::string(op) + ": weight length mismatch");
    const double total = weights->sum();
    CRBM_REQUIRE(total > 0.0, std::string(op) + ": weights must have positive mass");
    return *weights / total;
}

void advance_chains(const RbmParameters& p, Matrix& v, Matrix& h, std::vector<Rng>& rngs,
                    int steps, int threads) {
    const int chains = static_cast<int>(v.cols());
    constexpr int kBlock = 64;
    const int blocks = (chains + kBlock - 1) / kBlock;
    if (threads <= 1 || blocks == 1) {
        for (int s = 0; s < steps; ++s) gibbs_step_batch(p, v, h, rngs);
        return;
    }
    parallel_for(blocks, threads, [&](int blk) {
        const int lo = blk * kBlock;
        const int width = std::min(chains, lo + kBlock) - lo;
        Matrix vb = v.middleCols(lo, width);
        Matrix hb = h.middleCols(lo, width);
        std::vector<Rng> sub(rngs.begin() + lo, rngs.begin() + lo + width);
        for (int s = 0; s < steps; ++s) gibbs_step_batch(p, vb, hb, sub);
        v.middleCols(lo, width) = vb;
        h.middleCols(lo, width) = hb;
        std::copy(sub.begin(), sub.end(), rngs.begin() + lo);
    });
}

} // namespace

void TrainConfig::validate(Eigen::Index dataset_rows) const {
    CRBM_REQUIRE(hidden_units >= 1, "TrainConfig: hidden_units must be >= 1");
    CRBM_REQUIRE(gibbs_steps_k >= 1, "TrainConfig: gibbs_steps_k must be >= 1");
    CRBM_REQUIRE(epochs >= 0, "TrainConfig: epochs must be >= 0");
    CRBM_REQUIRE(initial_learning_rate > 0.0, "TrainConfig: learning rate must be positive");
    CRBM_REQUIRE(minibatch_size >= 1, "TrainConfig: minibatch_size must be >= 1");
    CRBM_REQUIRE(minibatch_size <= dataset_rows,
                 "TrainConfig: minibatch_size exceeds dataset size");
}

void save_train_config(const TrainConfig& cfg, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    CRBM_REQUIRE(out.good(), "save_train_config: cannot open " + path);
    out << "hidden_units = " << cfg.hidden_units << "\n"
        << "gibbs_steps_k = " << cfg.gibbs_steps_k << "\n"
        << "epochs = " << cfg.epochs << "\n"
        << "initial_learning_rate = " << std::setprecision(17) << cfg.initial_learning_rate
        << "\n"
        << "schedule = "
        << (cfg.schedule == LrSchedule::Constant ? "constant" : "linear-decay-to-zero") << "\n"
        << "minibatch_size = " << cfg.minibatch_size << "\n"
        << "seed = " << cfg.seed << "\n";
}

TrainConfig load_train_config(const std::string& path) {
    std::ifstream in(path);
    CRBM_REQUIRE(in.good(), "load_train_config: cannot open " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        CRBM_REQUIRE(eq != std::string::npos,
                     "load_train_config: line " + std::to_string(lineno) + " has no '='");
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t");
            const auto b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    TrainConfig cfg;
    try {
        if (kv.count("hidden_units")) cfg.hidden_units = std::stoi(kv["hidden_units"]);
        if (kv.count("gibbs_steps_k")) cfg.gibbs_steps_k = std::stoi(kv["gibbs_steps_k"]);
        if (kv.count("epochs")) cfg.epochs = std::stoi(kv["epochs"]);
        if (kv.count("initial_learning_rate"))
            cfg.initial_learning_rate = std::stod(kv["initial_learning_rate"]);
        if (kv.count("minibatch_size")) cfg.minibatch_size = std::stoi(kv["minibatch_size"]);
        if (kv.count("seed")) cfg.seed = std::stoull(kv["seed"]);
    } catch (const std::exception& e) {
        throw DataError("load_train_config: bad numeric value in " + path + ": " + e.what());
    }
    if (kv.count("schedule")) {
        const std::string& s = kv["schedule"];
        if (s == "constant") {
            cfg.schedule = LrSchedule::Constant;
        } else if (s == "linear-decay-to-zero") {
            cfg.schedule = LrSchedule::LinearDecayToZero;
        } else {
            throw DataError("load_train_config: unknown schedule '" + s + "'");
        }
    }
    return cfg;
}

void TrainReport::write_csv(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    CRBM_REQUIRE(out.good(), "TrainReport: cannot open " + path);
    out << "epoch,reconstruction_error,learning_rate\n";
    for (std::size_t t = 0; t < reconstruction_errors.size(); ++t) {
        out << (t + 1) << ',' << std::setprecision(17) << reconstruction_errors[t] << ','
            << learning_rate(config, static_cast<int>(t + 1)) << "\n";
    }
}

double learning_rate(const TrainConfig& cfg, int epoch) {
    CRBM_REQUIRE(epoch >= 1 && epoch <= cfg.epochs, "learning_rate: epoch out of range");
    if (cfg.schedule == LrSchedule::Constant) return cfg.initial_learning_rate;
    return cfg.initial_learning_rate *
           (1.0 - static_cast<double>(epoch) / static_cast<double>(cfg.epochs));
}

GradientTriple loglik_gradient_exact(const RbmParameters& p, const Matrix& batch,
                                     const std::optional<Vector>& weights) {
    p.validate();
    CRBM_REQUIRE(batch.cols() == p.n_visible(), "loglik_gradient_exact: column mismatch");
    CRBM_REQUIRE(batch.rows() >= 1, "loglik_gradient_exact: empty batch");
    CRBM_REQUIRE(p.n_visible() + p.n_hidden() <= kEnumerationGuard,
                 "loglik_gradient_exact: oracle too large");
    const Vector w = normalized_weights(weights, batch.rows(), "loglik_gradient_exact");

    const Eigen::Index n = p.n_visible();
    const Eigen::Index m = p.n_hidden();

    // Data term: E_{H|V}[ -dE/dtheta ] averaged over the batch.
    Matrix dw = Matrix::Zero(m, n);
    Vector db = Vector::Zero(n);
    Vector dc = Vector::Zero(m);
    for (Eigen::Index r = 0; r < batch.rows(); ++r) {
        const Vector v = batch.row(r).transpose();
        const Vector hp = cond_hidden(p, v);
        dw += w[r] * hp * v.transpose();
        db += w[r] * v;
        dc += w[r] * hp;
    }

    // Model term under the exact visible marginal.
    const std::vector<double> marg = exact_visible_marginal(p);
    for (std::uint32_t mask = 0; mask < marg.size(); ++mask) {
        const Vector v = bitmask_to_vector(mask, n);
        const Vector hp = cond_hidden(p, v);
        dw -= marg[mask] * hp * v.transpose();
        db -= marg[mask] * v;
        dc -= marg[mask] * hp;
    }
    return GradientTriple{std::move(dw), std::move(db), std::move(dc)};
}

double exact_log_likelihood(const RbmParameters& p, const Matrix& batch,
                            const std::optional<Vector>& weights) {
    p.validate();
    CRBM_REQUIRE(batch.cols() == p.n_visible(), "exact_log_likelihood: column mismatch");
    CRBM_REQUIRE(p.n_visible() + p.n_hidden() <= kEnumerationGuard,
                 "exact_log_likelihood: oracle too large");
    const Vector w = normalized_weights(weights, batch.rows(), "exact_log_likelihood");
    const double log_z = exact_partition(p);
    double ll = 0.0;
    for (Eigen::Index r = 0; r < batch.rows(); ++r) {
        const Vector v = batch.row(r).transpose();
        const Vector act = p.weights * v + p.hidden_bias;
        double s = p.visible_bias.dot(v) - log_z;
        for (Eigen::Index j = 0; j < act.size(); ++j) s += stats::log1pexp(act[j]);
        ll += w[r] * s;
    }
    return ll;
}

GradientTriple pcd_positive_stats(const RbmParameters& p, const Matrix& batch) {
    const double inv = 1.0 / static_cast<double>(batch.rows());
    const Matrix vt = batch.transpose(); // n x B
    const Matrix hp = sigmoid_matrix((p.weights * vt).colwise() + p.hidden_bias); // m x B
    return GradientTriple{inv * (hp * vt.transpose()), inv * vt.rowwise().sum(),
                          inv * hp.rowwise().sum()};
}

GradientTriple pcd_negative_stats(const RbmParameters& p, const Matrix& chain_visible) {
    const double inv = 1.0 / static_cast<double>(chain_visible.cols());
    const Matrix hp =
        sigmoid_matrix((p.weights * chain_visible).colwise() + p.hidden_bias); // m x B
    return GradientTriple{inv * (hp * chain_visible.transpose()),
                          inv * chain_visible.rowwise().sum(), inv * hp.rowwise().sum()};
}

TrainResult train_pcd(const Matrix& data, const TrainConfig& cfg, int threads) {
    cfg.validate(data.rows());
    CRBM_REQUIRE(data.minCoeff() >= 0.0 && data.maxCoeff() <= 1.0,
                 "train_pcd: data entries must lie in [0,1]");
    const auto t0 = std::chrono::steady_clock::now();

    const Eigen::Index n = data.cols();
    const Eigen::Index m = cfg.hidden_units;
    const Eigen::Index rows = data.rows();
    const int batch_size = cfg.minibatch_size;

    Rng root(cfg.seed, 0);
    Rng init_rng = root.substream(kInitStream);
    RbmParameters p = RbmParameters::zeros(m, n);
    for (Eigen::Index j = 0; j < m; ++j)
        for (Eigen::Index i = 0; i < n; ++i) p.weights(j, i) = 0.01 * init_rng.normal();

    TrainReport report;
    report.config = cfg;
    if (cfg.epochs == 0) {
        report.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return TrainResult{std::move(p), std::move(report)};
    }

    // Persistent fantasy chains, one per minibatch slot, started at the data.
    Matrix chain_v(n, batch_size), chain_h(m, batch_size);
    for (int c = 0; c < batch_size; ++c) chain_v.col(c) = data.row(c % rows).transpose();
    chain_h.setZero();
    std::vector<Rng> chain_rngs;
    chain_rngs.reserve(batch_size);
    for (int c = 0; c < batch_size; ++c)
        chain_rngs.push_back(root.substream(kChainStreamBase + static_cast<std::uint64_t>(c)));

    Rng shuffle_rng = root.substream(kShuffleStream);
    std::vector<Eigen::Index> order(rows);
    std::iota(order.begin(), order.end(), Eigen::Index{0});

    report.reconstruction_errors.reserve(cfg.epochs);
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const double eta = learning_rate(cfg, epoch);
        for (Eigen::Index i = rows - 1; i > 0; --i) {
            const auto j = static_cast<Eigen::Index>(
                shuffle_rng.uniform_below(static_cast<std::uint64_t>(i + 1)));
            std::swap(order[i], order[j]);
        }

        for (Eigen::Index start = 0; start < rows; start += batch_size) {
            const Eigen::Index len = std::min<Eigen::Index>(batch_size, rows - start);
            Matrix batch(len, n);
            for (Eigen::Index r = 0; r < len; ++r) batch.row(r) = data.row(order[start + r]);

            const GradientTriple pos = pcd_positive_stats(p, batch);
            advance_chains(p, chain_v, chain_h, chain_rngs, cfg.gibbs_steps_k, threads);
            const GradientTriple neg = pcd_negative_stats(p, chain_v);

            p.weights += eta * (pos.d_weights - neg.d_weights);
            p.visible_bias += eta * (pos.d_visible_bias - neg.d_visible_bias);
            p.hidden_bias += eta * (pos.d_hidden_bias - neg.d_hidden_bias);
        }

        if (!(p.weights.allFinite() && p.visible_bias.allFinite() && p.hidden_bias.allFinite())) {
            throw NumericalError("train_pcd: parameters diverged at epoch " +
                                 std::to_string(epoch));
        }
        report.reconstruction_errors.push_back(reconstruction_error(p, data));
    }

    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return TrainResult{std::move(p), std::move(report)};
}

double reconstruction_error(const RbmParameters& p, const Matrix& batch) {
    CRBM_REQUIRE(batch.rows() >= 1, "reconstruction_error: empty batch");
    CRBM_REQUIRE(batch.cols() == p.n_visible(), "reconstruction_error: column mismatch");
    const Matrix vt = batch.transpose(); // n x B
    const Matrix hp = sigmoid_matrix((p.weights * vt).colwise() + p.hidden_bias);
    const Matrix recon = sigmoid_matrix((p.weights.transpose() * hp).colwise() + p.visible_bias);
    return (vt - recon).colwise().squaredNorm().mean();
}

double mmd(const Matrix& sample_a, const Matrix& sample_b, double bandwidth) {
    CRBM_REQUIRE(sample_a.cols() == sample_b.cols(), "mmd: column count mismatch");
    CRBM_REQUIRE(sample_a.rows() >= 2 && sample_b.rows() >= 2,
                 "mmd: need at least two rows per sample");
    CRBM_REQUIRE(bandwidth > 0.0, "mmd: bandwidth must be positive");
    const double gamma = 1.0 / (2.0 * bandwidth * bandwidth);

    const auto na = sample_a.rows();
    const auto nb = sample_b.rows();
    const Vector sq_a = sample_a.rowwise().squaredNorm();
    const Vector sq_b = sample_b.rowwise().squaredNorm();

    const Matrix gaa = sample_a * sample_a.transpose();
    const Matrix gbb = sample_b * sample_b.transpose();
    const Matrix gab = sample_a * sample_b.transpose();

    double kaa = 0.0;
    for (Eigen::Index i = 0; i < na; ++i)
        for (Eigen::Index j = 0; j < na; ++j)
            if (i != j) kaa += std::exp(-gamma * (sq_a[i] + sq_a[j] - 2.0 * gaa(i, j)));
    double kbb = 0.0;
    for (Eigen::Index i = 0; i < nb; ++i)
        for (Eigen::Index j = 0; j < nb; ++j)
            if (i != j) kbb += std::exp(-gamma * (sq_b[i] + sq_b[j] - 2.0 * gbb(i, j)));
    double kab = 0.0;
    for (Eigen::Index i = 0; i < na; ++i)
        for (Eigen::Index j = 0; j < nb; ++j)
            kab += std::exp(-gamma * (sq_a[i] + sq_b[j] - 2.0 * gab(i, j)));

    return kaa / (static_cast<double>(na) * (na - 1)) +
           kbb / (static_cast<double>(nb) * (nb - 1)) -
           2.0 * kab / (static_cast<double>(na) * nb);
}

double median_heuristic_bandwidth(const Matrix& sample, int max_rows) {
    CRBM_REQUIRE(sample.rows() >= 2, "median_heuristic_bandwidth: need >= 2 rows");
    const Eigen::Index rows = std::min<Eigen::Index>(sample.rows(), max_rows);
    std::vector<double> d;
    d.reserve(static_cast<std::size_t>(rows) * (rows - 1) / 2);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = i + 1; j < rows; ++j)
            d.push_back((sample.row(i) - sample.row(j)).norm());
    std::nth_element(d.begin(), d.begin() + d.size() / 2, d.end());
    const double med = d[d.size() / 2];
    return med > 0.0 ? med : 1.0;
}

CrossValidationResult cross_validate(const Matrix& data, const std::vector<int>& hidden_grid,
                                     int folds, const TrainConfig& cfg_template, int threads) {
    CRBM_REQUIRE(!hidden_grid.empty(), "cross_validate: empty hidden-unit grid");
    CRBM_REQUIRE(folds >= 2, "cross_validate: need folds >= 2");
    CRBM_REQUIRE(data.rows() >= folds, "cross_validate: more folds than rows");

    std::vector<int> grid = hidden_grid;
    std::sort(grid.begin(), grid.end());

    CrossValidationResult result;
    double best_score = std::numeric_limits<double>::infinity();
    int best_hidden = grid.front();

    const Eigen::Index rows = data.rows();
    for (std::size_t g = 0; g < grid.size(); ++g) {
        double mean_mmd = 0.0;
        for (int f = 0; f < folds; ++f) {
            const Eigen::Index lo = rows * f / folds;
            const Eigen::Index hi = rows * (f + 1) / folds;
            const Eigen::Index held = hi - lo;
            Matrix train(rows - held, data.cols());
            if (lo > 0) train.topRows(lo) = data.topRows(lo);
            if (hi < rows) train.bottomRows(rows - hi) = data.bottomRows(rows - hi);
            const Matrix test = data.middleRows(lo, held);

            TrainConfig cfg = cfg_template;
            cfg.hidden_units = grid[g];
            cfg.minibatch_size = std::min<int>(cfg.minibatch_size,
                                               static_cast<int>(train.rows()));
            cfg.seed = cfg_template.seed + 1000003ULL * static_cast<std::uint64_t>(f) +
                       static_cast<std::uint64_t>(g);
            const TrainResult trained = train_pcd(train, cfg, threads);

            Rng sample_rng(cfg.seed, 0xCF01);
            const Matrix generated =
                sample_pd_batch(trained.params, static_cast<int>(std::max<Eigen::Index>(held, 2)),
                                200, sample_rng, threads)
                    .transpose();
            const double bw = median_heuristic_bandwidth(held >= 2 ? test : train);
            double score;
            if (held >= 2) {
                score = mmd(test, generated, bw);
            } else {
                // Leave-one-out folds cannot support the unbiased estimator;
                // fall back to the V-statistic with diagonals included.
                const double gamma = 1.0 / (2.0 * bw * bw);
                double kbb = 0.0, kab = 0.0;
                for (Eigen::Index i = 0; i < generated.rows(); ++i) {
                    kab += std::exp(-gamma * (test.row(0) - generated.row(i)).squaredNorm());
                    for (Eigen::Index j = 0; j < generated.rows(); ++j)
                        kbb += std::exp(-gamma * (generated.row(i) - generated.row(j)).squaredNorm());
                }
                const double ng = static_cast<double>(generated.rows());
                score = 1.0 + kbb / (ng * ng) - 2.0 * kab / ng;
            }
            mean_mmd += score / folds;
            result.table.push_back(CrossValidationCell{
                grid[g], f, score, reconstruction_error(trained.params, test)});
        }
        if (mean_mmd < best_score) {
            best_score = mean_mmd;
            best_hidden = grid[g];
        }
    }
    result.selected_hidden_units = best_hidden;
    return result;
}

} // namespace creditrbm
