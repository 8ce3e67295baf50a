#ifndef CREDITRBM_IMPORTANCE_HPP
#define CREDITRBM_IMPORTANCE_HPP

#include "creditrbm/rbm.hpp"
#include "creditrbm/rng.hpp"
#include "creditrbm/tail.hpp"

#include <vector>

namespace creditrbm {

// Exponentially tilted model Q_t: same weights and hidden biases, visible
// bias shifted to b + t * ones. t = 0 is the base model itself.
struct TiltedRbm {
    RbmParameters base;
    double t = 0.0;

    RbmParameters params() const;
};

TiltedRbm tilt(const RbmParameters& p, double t);

// log Gamma(t) = log E[exp(t L_n)] via the partition identity
// Gamma(t) = Z_t / Z. Enumeration-backed, n + m <= 24.
double mgf_exact(const RbmParameters& p, double t);

// Monte Carlo mean and standard deviation of L_n = sum_i V_i under the
// tilted model, from `budget` independent restart chains.
struct LossMoments {
    double mean = 0.0;
    double std_dev = 0.0;
};

LossMoments tilted_mean_loss_mc(const RbmParameters& p, double t, int budget, int burnin,
                                const Rng& rng, int threads = 1);

struct TstarResult {
    double tstar = 0.0;
    double achieved_mean_loss = 0.0; // absolute units (expected defaults)
};

// Bisection for the tilt whose mean loss hits `target_mean_loss` (absolute
// units), using common random numbers across evaluations. Stops when the
// Monte Carlo mean is within `tolerance` or the bracket shrinks below 1e-4.
TstarResult find_tstar(const RbmParameters& p, double target_mean_loss, double tolerance,
                       int mc_budget, const Rng& rng, double t_max = 10.0, int burnin = 500,
                       int threads = 1);

// Annealed importance sampling output for the ratio Z_t / Z.
struct RatioEstimate {
    double log_ratio = 0.0;
    double std_dev = 0.0; // linear domain, delta method from the log estimate
    int temperatures = 2;
    int runs = 2;

    double ratio() const;
    double relative_std() const; // first-order: stderr of the log estimate
    void validate() const;
};

// Algorithm: M annealing runs over `temperatures` uniformly spaced tilts on
// [0, t*]; each run starts from a burned-in base-model sample and advances by
// exactly one blocked Gibbs step per temperature, accumulating
// exp((t_k - t_{k-1}) sum_i v^k_i) in the log domain. Mean and jackknife
// stderr are formed with log-sum-exp.
RatioEstimate ais_ratio(const RbmParameters& p, double tstar, int temperatures, int runs,
                        const Rng& rng, int base_burnin = 1000, int threads = 1);

// The high-variance single-shot estimator (1/M) sum exp(t* L) over base-model
// samples, kept as the baseline AIS improves upon.
RatioEstimate naive_ratio(const RbmParameters& p, double tstar, int runs, const Rng& rng,
                          int burnin = 1000, int threads = 1);

// Deep-tail importance-sampling estimate of P(L_n / n > x): samples from the
// tilted model, weights exp(-t* L) times the partition ratio. Confidence
// bands combine the weight-sample variance with the ratio's relative stderr
// as independent multiplicative errors. Same sampling path as mc_tail_rbm,
// so t* = 0 with unit ratio reproduces it sample for sample.
TailCurve is_tail(const RbmParameters& p, double tstar, const RatioEstimate& ratio,
                  const std::vector<double>& thresholds, int M, const Rng& rng,
                  int burnin = 1000, int threads = 1);

} // namespace creditrbm

#endif
