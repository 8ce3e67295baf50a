#include "creditrbm/training.hpp"

#include "creditrbm/errors.hpp"
#include "creditrbm/stats.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <vector>

using namespace creditrbm;

namespace {

RbmParameters random_params(Eigen::Index m, Eigen::Index n, Rng& rng, double scale = 1.0) {
    RbmParameters p = RbmParameters::zeros(m, n);
    for (Eigen::Index j = 0; j < m; ++j)
        for (Eigen::Index i = 0; i < n; ++i) p.weights(j, i) = scale * (2.0 * rng.uniform01() - 1.0);
    for (Eigen::Index i = 0; i < n; ++i) p.visible_bias[i] = scale * (2.0 * rng.uniform01() - 1.0);
    for (Eigen::Index j = 0; j < m; ++j) p.hidden_bias[j] = scale * (2.0 * rng.uniform01() - 1.0);
    return p;
}

Matrix random_binary_batch(Eigen::Index rows, Eigen::Index n, Rng& rng) {
    Matrix b(rows, n);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index i = 0; i < n; ++i) b(r, i) = rng.bernoulli(0.5) ? 1.0 : 0.0;
    return b;
}

// Central finite differences of the exact batch log-likelihood.
GradientTriple fd_gradient(const RbmParameters& p, const Matrix& batch, double eps) {
    GradientTriple g{Matrix::Zero(p.n_hidden(), p.n_visible()), Vector::Zero(p.n_visible()),
                     Vector::Zero(p.n_hidden())};
    RbmParameters q = p;
    for (Eigen::Index j = 0; j < p.n_hidden(); ++j) {
        for (Eigen::Index i = 0; i < p.n_visible(); ++i) {
            q.weights(j, i) = p.weights(j, i) + eps;
            const double up = exact_log_likelihood(q, batch);
            q.weights(j, i) = p.weights(j, i) - eps;
            const double dn = exact_log_likelihood(q, batch);
            q.weights(j, i) = p.weights(j, i);
            g.d_weights(j, i) = (up - dn) / (2.0 * eps);
        }
    }
    for (Eigen::Index i = 0; i < p.n_visible(); ++i) {
        q.visible_bias[i] = p.visible_bias[i] + eps;
        const double up = exact_log_likelihood(q, batch);
        q.visible_bias[i] = p.visible_bias[i] - eps;
        const double dn = exact_log_likelihood(q, batch);
        q.visible_bias[i] = p.visible_bias[i];
        g.d_visible_bias[i] = (up - dn) / (2.0 * eps);
    }
    for (Eigen::Index j = 0; j < p.n_hidden(); ++j) {
        q.hidden_bias[j] = p.hidden_bias[j] + eps;
        const double up = exact_log_likelihood(q, batch);
        q.hidden_bias[j] = p.hidden_bias[j] - eps;
        const double dn = exact_log_likelihood(q, batch);
        q.hidden_bias[j] = p.hidden_bias[j];
        g.d_hidden_bias[j] = (up - dn) / (2.0 * eps);
    }
    return g;
}

double max_abs(const GradientTriple& g) {
    return std::max({g.d_weights.cwiseAbs().maxCoeff(), g.d_visible_bias.cwiseAbs().maxCoeff(),
                     g.d_hidden_bias.cwiseAbs().maxCoeff()});
}

} // namespace

TEST_CASE("exact gradient vanishes at the data-generating parameters") {
    Rng rng(41, 0);
    const RbmParameters p = random_params(2, 3, rng, 0.8);
    const auto marg = exact_visible_marginal(p);
    Matrix batch(marg.size(), 3);
    Vector w(marg.size());
    for (std::uint32_t mask = 0; mask < marg.size(); ++mask) {
        batch.row(mask) = bitmask_to_vector(mask, 3).transpose();
        w[mask] = marg[mask];
    }
    const GradientTriple g = loglik_gradient_exact(p, batch, w);
    CHECK(max_abs(g) < 1e-10);
}

TEST_CASE("zero parameters, all-ones batch: visible-bias gradient is 1/2") {
    const RbmParameters p = RbmParameters::zeros(2, 3);
    const Matrix batch = Matrix::Ones(4, 3);
    const GradientTriple g = loglik_gradient_exact(p, batch);
    for (Eigen::Index i = 0; i < 3; ++i) {
        CHECK(g.d_visible_bias[i] == doctest::Approx(0.5).epsilon(1e-12));
    }
}

TEST_CASE("exact gradient matches central finite differences over 10 seeds") {
    for (int seed = 0; seed < 10; ++seed) {
        Rng rng(static_cast<std::uint64_t>(seed), 100);
        const RbmParameters p = random_params(3, 3, rng, 0.9);
        const Matrix batch = random_binary_batch(6, 3, rng);
        const GradientTriple g = loglik_gradient_exact(p, batch);
        const GradientTriple fd = fd_gradient(p, batch, 1e-5);
        const GradientTriple diff{g.d_weights - fd.d_weights,
                                  g.d_visible_bias - fd.d_visible_bias,
                                  g.d_hidden_bias - fd.d_hidden_bias};
        CHECK(max_abs(diff) <= 1e-6);
    }
}

TEST_CASE("PCD update with exact negative statistics equals the exact gradient") {
    Rng rng(7, 0);
    const RbmParameters p = random_params(2, 3, rng, 0.7);
    const Matrix batch = random_binary_batch(5, 3, rng);

    const GradientTriple pos = pcd_positive_stats(p, batch);
    // Replace the fantasy chains by the full enumeration of the model.
    const auto marg = exact_visible_marginal(p);
    GradientTriple neg{Matrix::Zero(2, 3), Vector::Zero(3), Vector::Zero(2)};
    for (std::uint32_t mask = 0; mask < marg.size(); ++mask) {
        const Vector v = bitmask_to_vector(mask, 3);
        const Vector hp = cond_hidden(p, v);
        neg.d_weights += marg[mask] * hp * v.transpose();
        neg.d_visible_bias += marg[mask] * v;
        neg.d_hidden_bias += marg[mask] * hp;
    }
    const GradientTriple exact = loglik_gradient_exact(p, batch);
    CHECK((pos.d_weights - neg.d_weights - exact.d_weights).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((pos.d_visible_bias - neg.d_visible_bias - exact.d_visible_bias).cwiseAbs().maxCoeff() <
          1e-12);
    CHECK((pos.d_hidden_bias - neg.d_hidden_bias - exact.d_hidden_bias).cwiseAbs().maxCoeff() <
          1e-12);
}

TEST_CASE("linear decay reaches exactly zero at the final epoch") {
    TrainConfig cfg;
    cfg.epochs = 137;
    cfg.initial_learning_rate = 2e-3;
    cfg.schedule = LrSchedule::LinearDecayToZero;
    for (int t = 1; t <= cfg.epochs; ++t) {
        CHECK(learning_rate(cfg, t) ==
              doctest::Approx(2e-3 * (1.0 - static_cast<double>(t) / cfg.epochs)).epsilon(1e-15));
    }
    CHECK(learning_rate(cfg, cfg.epochs) == 0.0);
    cfg.schedule = LrSchedule::Constant;
    CHECK(learning_rate(cfg, 1) == 2e-3);
    CHECK(learning_rate(cfg, cfg.epochs) == 2e-3);
}

TEST_CASE("zero epochs returns the seeded initial parameters unchanged") {
    Matrix data = Matrix::Constant(20, 4, 0.3);
    TrainConfig cfg;
    cfg.hidden_units = 3;
    cfg.epochs = 0;
    cfg.minibatch_size = 10;
    cfg.seed = 99;
    const TrainResult a = train_pcd(data, cfg);
    const TrainResult b = train_pcd(data, cfg);
    CHECK(a.params.weights == b.params.weights);
    CHECK(a.params.visible_bias == Vector::Zero(4));
    CHECK(a.params.hidden_bias == Vector::Zero(3));
    CHECK(a.report.reconstruction_errors.empty());
}

TEST_CASE("train_pcd learns independent Bernoulli marginals") {
    // Independent Bernoulli(p_i) columns; trained model visible means must
    // come within 0.02 of the data column means.
    const Eigen::Index n = 5;
    Vector probs(n);
    probs << 0.15, 0.35, 0.5, 0.7, 0.85;
    Rng data_rng(2025, 0);
    Matrix data(2000, n);
    for (Eigen::Index r = 0; r < data.rows(); ++r)
        for (Eigen::Index i = 0; i < n; ++i) data(r, i) = data_rng.bernoulli(probs[i]) ? 1.0 : 0.0;
    const Vector col_means = data.colwise().mean().transpose();

    TrainConfig cfg;
    cfg.hidden_units = 3;
    cfg.gibbs_steps_k = 5;
    cfg.epochs = 300;
    cfg.initial_learning_rate = 0.05;
    cfg.minibatch_size = 200;
    cfg.seed = 11;
    const TrainResult res = train_pcd(data, cfg);

    Rng srng(77, 0);
    const Matrix samples = sample_visible_batch(res.params, 20000, 50, srng);
    const Vector model_means = samples.rowwise().mean();
    for (Eigen::Index i = 0; i < n; ++i) {
        CHECK(std::abs(model_means[i] - col_means[i]) < 0.02);
    }
}

TEST_CASE("teacher-student: total variation within 0.05, error trend decreasing") {
    Rng trng(314, 0);
    RbmParameters teacher = random_params(2, 4, trng, 1.2);
    const auto tmarg = exact_visible_marginal(teacher);

    Rng srng(15, 0);
    const Matrix tdata = sample_visible_batch(teacher, 4000, 100, srng).transpose();

    TrainConfig cfg;
    cfg.hidden_units = 2;
    cfg.gibbs_steps_k = 5;
    cfg.epochs = 400;
    cfg.initial_learning_rate = 0.05;
    cfg.minibatch_size = 250;
    cfg.seed = 4;
    const TrainResult res = train_pcd(tdata, cfg);

    const auto smarg = exact_visible_marginal(res.params);
    double tv = 0.0;
    for (std::size_t k = 0; k < tmarg.size(); ++k) tv += std::abs(tmarg[k] - smarg[k]);
    tv /= 2.0;
    CHECK(tv < 0.05);

    // Window-10 median smoothing of the per-epoch reconstruction error.
    const auto& errs = res.report.reconstruction_errors;
    REQUIRE(errs.size() == static_cast<std::size_t>(cfg.epochs));
    std::vector<double> smooth;
    for (std::size_t t = 0; t + 10 <= errs.size(); t += 10) {
        std::vector<double> win(errs.begin() + t, errs.begin() + t + 10);
        std::nth_element(win.begin(), win.begin() + 5, win.end());
        smooth.push_back(win[5]);
    }
    // Non-increasing up to 0.1% of the error scale; the PCD gradient noise
    // leaves wobble of order 1e-4 on this run, a real regression moves more.
    const double slack = 1e-3 * smooth.front();
    for (std::size_t t = 1; t < smooth.size(); ++t) {
        CHECK(smooth[t] <= smooth[t - 1] + slack);
    }
    CHECK(errs.back() < errs.front());
}

TEST_CASE("train_pcd rejects out-of-range data and oversized minibatch") {
    Matrix bad = Matrix::Constant(10, 2, 1.5);
    TrainConfig cfg;
    cfg.minibatch_size = 5;
    CHECK_THROWS_AS(train_pcd(bad, cfg), DataError);

    Matrix ok = Matrix::Constant(10, 2, 0.5);
    cfg.minibatch_size = 11;
    CHECK_THROWS_AS(train_pcd(ok, cfg), DataError);
}

TEST_CASE("reconstruction_error closed forms") {
    // Zero parameters reconstruct everything to 1/2.
    RbmParameters zero = RbmParameters::zeros(2, 4);
    Matrix half = Matrix::Constant(6, 4, 0.5);
    CHECK(reconstruction_error(zero, half) == doctest::Approx(0.0).epsilon(1e-15));

    Rng rng(3, 0);
    Matrix binary(6, 4);
    for (Eigen::Index r = 0; r < 6; ++r)
        for (Eigen::Index i = 0; i < 4; ++i) binary(r, i) = rng.bernoulli(0.5) ? 1.0 : 0.0;
    CHECK(reconstruction_error(zero, binary) == doctest::Approx(0.25 * 4).epsilon(1e-12));

    // Saturating parameters memorize a single pattern almost exactly.
    const Eigen::Index n = 4;
    Vector pattern(n);
    pattern << 1, 0, 1, 1;
    const double kappa = 50.0;
    RbmParameters mem = RbmParameters::zeros(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        mem.weights(i, i) = kappa * (2.0 * pattern[i] - 1.0);
        mem.hidden_bias[i] = -kappa / 2.0;
        mem.visible_bias[i] = -kappa / 2.0;
    }
    Matrix one_row = pattern.transpose();
    CHECK(reconstruction_error(mem, one_row) < 1e-4);
}

TEST_CASE("mmd: identical samples, separated point masses, permutation null") {
    Rng rng(8, 0);
    Matrix a(20, 3);
    for (Eigen::Index r = 0; r < 20; ++r)
        for (Eigen::Index i = 0; i < 3; ++i) a(r, i) = rng.uniform01();
    CHECK(mmd(a, a, 0.7) <= 1e-12);

    // Two point masses far apart compared to the bandwidth: MMD^2 -> 2.
    Matrix pa = Matrix::Zero(10, 2);
    Matrix pb = Matrix::Constant(10, 2, 50.0);
    const double d2 = (pa.row(0) - pb.row(0)).squaredNorm();
    const double sigma = 1.0;
    const double expect = 2.0 - 2.0 * std::exp(-d2 / (2.0 * sigma * sigma));
    CHECK(mmd(pa, pb, sigma) == doctest::Approx(expect).epsilon(1e-6));

    CHECK_THROWS_AS(mmd(Matrix::Zero(1, 2), Matrix::Zero(5, 2), 1.0), DataError);
    CHECK_THROWS_AS(mmd(Matrix::Zero(4, 2), Matrix::Zero(4, 3), 1.0), DataError);

    // Same-distribution samples: observed MMD below the 95th percentile of
    // its permutation null in >= 18 of 20 trials (fixed seeds).
    Rng prng(123, 0);
    RbmParameters p = RbmParameters::zeros(2, 4);
    p.visible_bias << 0.4, -0.2, 0.1, -0.5;
    int below = 0;
    const int trials = 20, perms = 100, rows = 60;
    for (int trial = 0; trial < trials; ++trial) {
        Rng trial_rng = prng.substream(static_cast<std::uint64_t>(trial));
        const Matrix s1 = sample_visible_batch(p, rows, 20, trial_rng.substream(0)).transpose();
        const Matrix s2 = sample_visible_batch(p, rows, 20, trial_rng.substream(1)).transpose();
        const double bw = median_heuristic_bandwidth(s1);
        const double observed = mmd(s1, s2, bw);

        Matrix pooled(2 * rows, 4);
        pooled << s1, s2;
        std::vector<int> idx(2 * rows);
        std::iota(idx.begin(), idx.end(), 0);
        Rng perm_rng = trial_rng.substream(2);
        int exceed = 0;
        for (int q = 0; q < perms; ++q) {
            for (int i = 2 * rows - 1; i > 0; --i) {
                const int j = static_cast<int>(perm_rng.uniform_below(i + 1));
                std::swap(idx[i], idx[j]);
            }
            Matrix pa2(rows, 4), pb2(rows, 4);
            for (int r = 0; r < rows; ++r) {
                pa2.row(r) = pooled.row(idx[r]);
                pb2.row(r) = pooled.row(idx[rows + r]);
            }
            if (mmd(pa2, pb2, bw) >= observed) ++exceed;
        }
        if (exceed > perms / 20) ++below; // observed under the 95th percentile
    }
    CHECK(below >= 18);
}

TEST_CASE("cross_validate: single grid entry, leave-one-out totality") {
    Rng rng(5, 0);
    Matrix data(12, 3);
    for (Eigen::Index r = 0; r < 12; ++r)
        for (Eigen::Index i = 0; i < 3; ++i) data(r, i) = rng.bernoulli(0.4) ? 1.0 : 0.0;
    TrainConfig cfg;
    cfg.hidden_units = 2;
    cfg.gibbs_steps_k = 2;
    cfg.epochs = 10;
    cfg.initial_learning_rate = 0.05;
    cfg.minibatch_size = 4;
    cfg.seed = 1;

    const auto single = cross_validate(data, {3}, 3, cfg);
    CHECK(single.selected_hidden_units == 3);
    CHECK(single.table.size() == 3);

    const auto loo = cross_validate(data, {1, 2}, static_cast<int>(data.rows()), cfg);
    CHECK((loo.selected_hidden_units == 1 || loo.selected_hidden_units == 2));

    CHECK_THROWS_AS(cross_validate(data, {}, 3, cfg), DataError);
    CHECK_THROWS_AS(cross_validate(data, {2}, 1, cfg), DataError);
}

TEST_CASE("cross_validate never selects an under-capacity model") {
    // Teacher whose visible distribution is a two-mode mixture needing two
    // hidden units; the one-unit model must lose on every seed.
    const Eigen::Index n = 6;
    RbmParameters teacher = RbmParameters::zeros(2, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        teacher.weights(0, i) = i < n / 2 ? 6.0 : -6.0;
        teacher.weights(1, i) = i % 2 == 0 ? 6.0 : -6.0;
        teacher.visible_bias[i] = -3.0;
    }
    teacher.hidden_bias << -1.0, -1.0;

    int never_one = 0;
    for (int seed = 0; seed < 10; ++seed) {
        Rng srng(static_cast<std::uint64_t>(900 + seed), 0);
        const Matrix data = sample_visible_batch(teacher, 600, 50, srng).transpose();
        TrainConfig cfg;
        cfg.gibbs_steps_k = 5;
        cfg.epochs = 120;
        cfg.initial_learning_rate = 0.08;
        cfg.minibatch_size = 150;
        cfg.seed = static_cast<std::uint64_t>(seed);
        const auto cv = cross_validate(data, {1, 2, 8}, 5, cfg);
        if (cv.selected_hidden_units != 1) ++never_one;
    }
    CHECK(never_one == 10);
}

TEST_CASE("train config round trip and report csv") {
    TrainConfig cfg;
    cfg.hidden_units = 42;
    cfg.gibbs_steps_k = 7;
    cfg.epochs = 55;
    cfg.initial_learning_rate = 3.5e-4;
    cfg.schedule = LrSchedule::Constant;
    cfg.minibatch_size = 17;
    cfg.seed = 123456789;
    const auto dir = std::filesystem::temp_directory_path();
    const std::string path = (dir / "crbm_traincfg_test.txt").string();
    save_train_config(cfg, path);
    const TrainConfig back = load_train_config(path);
    CHECK(back.hidden_units == cfg.hidden_units);
    CHECK(back.gibbs_steps_k == cfg.gibbs_steps_k);
    CHECK(back.epochs == cfg.epochs);
    CHECK(back.initial_learning_rate == cfg.initial_learning_rate);
    CHECK(back.schedule == cfg.schedule);
    CHECK(back.minibatch_size == cfg.minibatch_size);
    CHECK(back.seed == cfg.seed);
    std::filesystem::remove(path);

    TrainReport report;
    report.config = cfg;
    report.config.epochs = 2;
    report.reconstruction_errors = {0.5, 0.25};
    const std::string rpath = (dir / "crbm_report_test.csv").string();
    report.write_csv(rpath);
    std::ifstream in(rpath);
    std::string header;
    std::getline(in, header);
    CHECK(header == "epoch,reconstruction_error,learning_rate");
    std::filesystem::remove(rpath);
}
