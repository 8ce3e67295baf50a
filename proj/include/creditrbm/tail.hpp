#ifndef CREDITRBM_TAIL_HPP
#define CREDITRBM_TAIL_HPP

#include "creditrbm/rbm.hpp"
#include "creditrbm/rng.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace creditrbm {

// One portfolio outcome: binary default indicators, optional recovery rates,
// and the realized loss sum_i defaults_i * (1 - recoveries_i) * exposure_i.
struct LossSample {
    Vector defaults;
    std::optional<Vector> recoveries;
    double loss = 0.0;
};

// Unit exposures unless given; recoveries must lie in [0,1].
double portfolio_loss(const Vector& defaults, const std::optional<Vector>& recoveries,
                      const std::optional<Vector>& exposures = std::nullopt);

LossSample make_loss_sample(Vector defaults, std::optional<Vector> recoveries,
                            const std::optional<Vector>& exposures = std::nullopt);

// n i.i.d. Beta(1/2,1/2) recovery rates.
Vector sample_recoveries(Eigen::Index n, Rng& rng);

enum class EstimatorTag : std::uint8_t { Exact = 0, PlainMc = 1, ImportanceSampling = 2 };

std::string to_string(EstimatorTag tag);
EstimatorTag estimator_tag_from_string(const std::string& s);

// Monotone curve of exceedance-probability estimates P(L > x) with pointwise
// 95% confidence bands. Thresholds are in the loss units of the producing
// sampler; the RBM-facing builders use relative loss L_n / n.
struct TailCurve {
    std::vector<double> thresholds;
    std::vector<double> estimates;
    std::vector<double> ci_low;
    std::vector<double> ci_high;
    EstimatorTag method = EstimatorTag::PlainMc;
    std::size_t samples = 0;
    std::string label; // e.g. scenario name; not part of the CSV schema
    std::vector<std::string> warnings;

    void validate() const;
    void write_csv(const std::string& path) const;
    static TailCurve read_csv(const std::string& path);
};

// Draws one loss using the per-sample stream it is handed.
using LossSampler = std::function<double(Rng&)>;

// Empirical exceedance frequencies over M draws, Wilson 95% intervals,
// rule-of-three upper bound at zero counts. Sample i draws from
// rng.substream(i).
TailCurve mc_tail(const LossSampler& sampler, const std::vector<double>& thresholds, int M,
                  const Rng& rng);

// Shared builder used by both the plain MC and enumeration paths.
TailCurve curve_from_losses(const std::vector<double>& losses,
                            const std::vector<double>& thresholds, EstimatorTag method);

enum class RecoveryModel : std::uint8_t { None = 0, BetaHalfHalf = 1 };

// Relative portfolio losses of `M` independent RBM restart chains. With
// recoveries enabled, sample i consumes its recovery draws from
// rng.substream(2^32 + i).
std::vector<double> sample_rbm_relative_losses(const RbmParameters& p, int M, int burnin,
                                               const Rng& rng, RecoveryModel recovery,
                                               int threads = 1);

TailCurve mc_tail_rbm(const RbmParameters& p, const std::vector<double>& thresholds, int M,
                      int burnin, const Rng& rng,
                      RecoveryModel recovery = RecoveryModel::None, int threads = 1);

// Exact P(L_n / n > x) from the enumeration oracle (n + m <= 24).
TailCurve exact_tail_curve(const RbmParameters& p, const std::vector<double>& thresholds);

// The default grid {0, 1/n, ..., 1} in relative-loss units.
std::vector<double> default_threshold_grid(Eigen::Index n);

struct VarEstimate {
    double value = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
};

// Smallest threshold whose exceedance estimate drops to 1 - alpha, with the
// interval obtained by inverting the confidence bands. Throws NumericalError
// when 1 - alpha lies below the curve's resolvable depth (1/M for plain MC,
// the smallest positive estimate for importance sampling).
VarEstimate var_from_tail(const TailCurve& curve, double alpha);

} // namespace creditrbm

#endif
