#include "creditrbm/importance.hpp"

#include "creditrbm/errors.hpp"
#include "creditrbm/stats.hpp"
#include "creditrbm/threading.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace creditrbm {

RbmParameters TiltedRbm::params() const {
    RbmParameters p = base;
    p.visible_bias.array() += t;
    return p;
}

TiltedRbm tilt(const RbmParameters& p, double t) {
    p.validate();
    CRBM_REQUIRE(t >= 0.0, "tilt: the family is indexed by t >= 0");
    return TiltedRbm{p, t};
}

double mgf_exact(const RbmParameters& p, double t) {
    return exact_partition(tilt(p, t).params()) - exact_partition(p);
}

LossMoments tilted_mean_loss_mc(const RbmParameters& p, double t, int budget, int burnin,
                                const Rng& rng, int threads) {
    CRBM_REQUIRE(budget >= 2, "tilted_mean_loss_mc: budget must be >= 2");
    const Matrix v = sample_visible_batch(tilt(p, t).params(), budget, burnin, rng, threads);
    const Vector losses = v.colwise().sum().transpose();
    const double mean = losses.mean();
    const double var =
        (losses.array() - mean).square().sum() / static_cast<double>(budget - 1);
    return LossMoments{mean, std::sqrt(var)};
}

TstarResult find_tstar(const RbmParameters& p, double target_mean_loss, double tolerance,
                       int mc_budget, const Rng& rng, double t_max, int burnin, int threads) {
    p.validate();
    CRBM_REQUIRE(tolerance > 0.0, "find_tstar: tolerance must be positive");
    CRBM_REQUIRE(mc_budget >= 100, "find_tstar: mc_budget must be >= 100");
    CRBM_REQUIRE(target_mean_loss < static_cast<double>(p.n_visible()),
                 "find_tstar: target mean loss must be below n");

    // Common random numbers: every evaluation reuses the same stream so the
    // estimated mean is monotone in t and bisection is stable.
    auto mean_at = [&](double t) {
        return tilted_mean_loss_mc(p, t, mc_budget, burnin, rng, threads).mean;
    };

    const double mean0 = mean_at(0.0);
    CRBM_REQUIRE(target_mean_loss > mean0,
                 "find_tstar: target mean loss " + std::to_string(target_mean_loss) +
                     " does not exceed the untilted mean " + std::to_string(mean0));
    if (std::abs(mean0 - target_mean_loss) <= tolerance) return TstarResult{0.0, mean0};

    const double mean_hi = mean_at(t_max);
    if (mean_hi < target_mean_loss - tolerance) {
        std::ostringstream msg;
        msg << "find_tstar: target unreachable; mean loss at t_max=" << t_max << " is "
            << mean_hi << " < " << target_mean_loss;
        throw NumericalError(msg.str());
    }

    double lo = 0.0, hi = t_max;
    double t_mid = 0.5 * (lo + hi), mean_mid = mean_at(t_mid);
    while (hi - lo >= 1e-4 && std::abs(mean_mid - target_mean_loss) > tolerance) {
        if (mean_mid < target_mean_loss) {
            lo = t_mid;
        } else {
            hi = t_mid;
        }
        t_mid = 0.5 * (lo + hi);
        mean_mid = mean_at(t_mid);
    }
    return TstarResult{t_mid, mean_mid};
}

double RatioEstimate::ratio() const {
    return std::exp(log_ratio);
}

double RatioEstimate::relative_std() const {
    return std_dev / ratio();
}

void RatioEstimate::validate() const {
    CRBM_REQUIRE(std::isfinite(log_ratio), "RatioEstimate: non-finite log ratio");
    CRBM_REQUIRE(std::isfinite(std_dev) && std_dev >= 0.0,
                 "RatioEstimate: non-finite standard deviation");
    CRBM_REQUIRE(temperatures >= 2, "RatioEstimate: need at least two temperatures");
    CRBM_REQUIRE(runs >= 2, "RatioEstimate: need at least two runs");
}

namespace {

// Point estimate and jackknife stderr of log mean(exp(log_w)).
void log_mean_and_jackknife(const std::vector<double>& log_w, double& log_mean,
                            double& sigma_log) {
    const std::size_t m = log_w.size();
    const double mx = *std::max_element(log_w.begin(), log_w.end());
    double s = 0.0;
    std::vector<double> a(m);
    for (std::size_t j = 0; j < m; ++j) {
        a[j] = std::exp(log_w[j] - mx);
        s += a[j];
    }
    log_mean = mx + std::log(s / static_cast<double>(m));

    std::vector<double> loo(m);
    double loo_bar = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
        loo[j] = mx + std::log((s - a[j]) / static_cast<double>(m - 1));
        loo_bar += loo[j];
    }
    loo_bar /= static_cast<double>(m);
    double var = 0.0;
    for (std::size_t j = 0; j < m; ++j) var += (loo[j] - loo_bar) * (loo[j] - loo_bar);
    var *= static_cast<double>(m - 1) / static_cast<double>(m);
    sigma_log = std::sqrt(var);
}

} // namespace

RatioEstimate ais_ratio(const RbmParameters& p, double tstar, int temperatures, int runs,
                        const Rng& rng, int base_burnin, int threads) {
    p.validate();
    CRBM_REQUIRE(tstar >= 0.0, "ais_ratio: t* must be >= 0");
    CRBM_REQUIRE(temperatures >= 2, "ais_ratio: need at least two temperatures");
    CRBM_REQUIRE(runs >= 2, "ais_ratio: need at least two runs");
    CRBM_REQUIRE(base_burnin >= 1, "ais_ratio: base burn-in must be >= 1");

    if (tstar == 0.0) {
        RatioEstimate out{0.0, 0.0, temperatures, runs};
        out.validate();
        return out;
    }

    const Eigen::Index n = p.n_visible();
    const Eigen::Index m = p.n_hidden();
    std::vector<double> log_w(static_cast<std::size_t>(runs), 0.0);

    constexpr int kBlock = 128;
    const int blocks = (runs + kBlock - 1) / kBlock;
    parallel_for(blocks, threads, [&](int blk) {
        const int lo = blk * kBlock;
        const int hi = std::min(runs, lo + kBlock);
        const int width = hi - lo;
        std::vector<Rng> rngs;
        rngs.reserve(width);
        for (int j = lo; j < hi; ++j) rngs.push_back(rng.substream(static_cast<std::uint64_t>(j)));

        // Burned-in base-model draw plays the role of the exact base sample.
        Matrix v(n, width), h(m, width);
        for (int c = 0; c < width; ++c)
            for (Eigen::Index i = 0; i < n; ++i) v(i, c) = rngs[c].bernoulli(0.5) ? 1.0 : 0.0;
        RbmParameters work = p;
        for (int s = 0; s < base_burnin; ++s) gibbs_step_batch(work, v, h, rngs);

        // Temperature ladder t_k = (k-1) t*/(T-1); the k = 1 state is the base
        // sample itself and contributes weight zero since t_1 = t_0 = 0.
        double t_prev = 0.0;
        for (int k = 2; k <= temperatures; ++k) {
            const double t_k = tstar * static_cast<double>(k - 1) /
                               static_cast<double>(temperatures - 1);
            work.visible_bias.array() = p.visible_bias.array() + t_k;
            gibbs_step_batch(work, v, h, rngs);
            for (int c = 0; c < width; ++c) {
                log_w[static_cast<std::size_t>(lo + c)] += (t_k - t_prev) * v.col(c).sum();
            }
            t_prev = t_k;
        }
    });

    for (std::size_t j = 0; j < log_w.size(); ++j) {
        if (!std::isfinite(log_w[j])) {
            throw NumericalError("ais_ratio: non-finite weight in run " + std::to_string(j));
        }
    }

    RatioEstimate out;
    out.temperatures = temperatures;
    out.runs = runs;
    double sigma_log = 0.0;
    log_mean_and_jackknife(log_w, out.log_ratio, sigma_log);
    out.std_dev = sigma_log * std::exp(out.log_ratio);
    out.validate();
    return out;
}

RatioEstimate naive_ratio(const RbmParameters& p, double tstar, int runs, const Rng& rng,
                          int burnin, int threads) {
    p.validate();
    CRBM_REQUIRE(tstar >= 0.0, "naive_ratio: t* must be >= 0");
    CRBM_REQUIRE(runs >= 2, "naive_ratio: need at least two runs");

    const Matrix v = sample_visible_batch(p, runs, burnin, rng, threads);
    std::vector<double> log_w(static_cast<std::size_t>(runs));
    for (int j = 0; j < runs; ++j) log_w[static_cast<std::size_t>(j)] = tstar * v.col(j).sum();

    RatioEstimate out;
    out.temperatures = 2; // endpoints only: no intermediate anneal
    out.runs = runs;

    // Plain mean and stderr of the weights, in shifted exponentials.
    const double mx = *std::max_element(log_w.begin(), log_w.end());
    double s1 = 0.0, s2 = 0.0;
    for (double lw : log_w) {
        const double a = std::exp(lw - mx);
        s1 += a;
        s2 += a * a;
    }
    const double mean_a = s1 / runs;
    const double var_a = std::max(0.0, (s2 - runs * mean_a * mean_a) / (runs - 1));
    out.log_ratio = mx + std::log(mean_a);
    out.std_dev = std::exp(mx) * std::sqrt(var_a / runs);
    out.validate();
    return out;
}

TailCurve is_tail(const RbmParameters& p, double tstar, const RatioEstimate& ratio,
                  const std::vector<double>& thresholds, int M, const Rng& rng, int burnin,
                  int threads) {
    p.validate();
    ratio.validate();
    CRBM_REQUIRE(tstar >= 0.0, "is_tail: t* must be >= 0");
    CRBM_REQUIRE(M >= 100, "is_tail: need at least 100 samples");
    CRBM_REQUIRE(!thresholds.empty(), "is_tail: no thresholds");

    const Matrix v = sample_visible_batch(tilt(p, tstar).params(), M, burnin, rng, threads);
    const double n = static_cast<double>(p.n_visible());
    std::vector<double> loss_counts(static_cast<std::size_t>(M));
    for (int i = 0; i < M; ++i) loss_counts[static_cast<std::size_t>(i)] = v.col(i).sum();

    const double sigma_log_ratio = ratio.relative_std();

    TailCurve curve;
    curve.method = EstimatorTag::ImportanceSampling;
    curve.samples = static_cast<std::size_t>(M);
    curve.thresholds = thresholds;
    if (sigma_log_ratio > 0.5) {
        curve.warnings.push_back("partition-ratio relative stderr above 50%");
    }

    for (double x : thresholds) {
        // Weights w_i = 1{L_i > x n} exp(-t* L_i); estimate = mean(w) * ratio.
        double s1 = 0.0, s2 = 0.0;
        for (double l : loss_counts) {
            if (l > x * n) {
                const double w = std::exp(-tstar * l + ratio.log_ratio);
                s1 += w;
                s2 += w * w;
            }
        }
        const double est = s1 / M;
        if (s1 == 0.0) {
            // Nothing above the threshold: every weight is bounded by
            // exp(-t* x n) * ratio, so the rule of three still applies.
            curve.estimates.push_back(0.0);
            curve.ci_low.push_back(0.0);
            curve.ci_high.push_back(3.0 / M * std::exp(-tstar * x * n + ratio.log_ratio));
            continue;
        }
        const double mean_w = s1 / M;
        const double var_w = std::max(0.0, (s2 - M * mean_w * mean_w) / (M - 1));
        const double rel_w = std::sqrt(var_w / M) / mean_w;
        const double rel = std::sqrt(rel_w * rel_w + sigma_log_ratio * sigma_log_ratio);
        curve.estimates.push_back(est);
        curve.ci_low.push_back(est * std::exp(-1.959963984540054 * rel));
        curve.ci_high.push_back(est * std::exp(1.959963984540054 * rel));
    }
    curve.validate();
    return curve;
}

} // namespace creditrbm
