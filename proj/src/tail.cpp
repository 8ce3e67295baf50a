#include "creditrbm/tail.hpp"

#include "creditrbm/errors.hpp"
#include "creditrbm/stats.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace creditrbm {

namespace {
constexpr std::uint64_t kRecoveryStreamOffset = 1ULL << 32;
}

double portfolio_loss(const Vector& defaults, const std::optional<Vector>& recoveries,
                      const std::optional<Vector>& exposures) {
    const Eigen::Index n = defaults.size();
    CRBM_REQUIRE(n >= 1, "portfolio_loss: empty default vector");
    for (Eigen::Index i = 0; i < n; ++i) {
        CRBM_REQUIRE(defaults[i] == 0.0 || defaults[i] == 1.0,
                     "portfolio_loss: defaults must be binary");
    }
    if (recoveries) {
        CRBM_REQUIRE(recoveries->size() == n, "portfolio_loss: recovery length mismatch");
        for (Eigen::Index i = 0; i < n; ++i) {
            CRBM_REQUIRE((*recoveries)[i] >= 0.0 && (*recoveries)[i] <= 1.0,
                         "portfolio_loss: recovery rate outside [0,1] at index " +
                             std::to_string(i));
        }
    }
    if (exposures) {
        CRBM_REQUIRE(exposures->size() == n, "portfolio_loss: exposure length mismatch");
    }
    double loss = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double lgd = recoveries ? 1.0 - (*recoveries)[i] : 1.0;
        const double exp_i = exposures ? (*exposures)[i] : 1.0;
        loss += defaults[i] * lgd * exp_i;
    }
    return loss;
}

LossSample make_loss_sample(Vector defaults, std::optional<Vector> recoveries,
                            const std::optional<Vector>& exposures) {
    const double loss = portfolio_loss(defaults, recoveries, exposures);
    return LossSample{std::move(defaults), std::move(recoveries), loss};
}

Vector sample_recoveries(Eigen::Index n, Rng& rng) {
    CRBM_REQUIRE(n >= 1, "sample_recoveries: n must be >= 1");
    Vector r(n);
    for (Eigen::Index i = 0; i < n; ++i) r[i] = rng.beta_half_half();
    return r;
}

std::string to_string(EstimatorTag tag) {
    switch (tag) {
        case EstimatorTag::Exact: return "exact";
        case EstimatorTag::PlainMc: return "mc";
        case EstimatorTag::ImportanceSampling: return "is";
    }
    return "mc";
}

EstimatorTag estimator_tag_from_string(const std::string& s) {
    if (s == "exact") return EstimatorTag::Exact;
    if (s == "mc") return EstimatorTag::PlainMc;
    if (s == "is") return EstimatorTag::ImportanceSampling;
    throw DataError("unknown estimator tag '" + s + "'");
}

void TailCurve::validate() const {
    const std::size_t k = thresholds.size();
    CRBM_REQUIRE(k >= 1, "TailCurve: empty curve");
    CRBM_REQUIRE(estimates.size() == k && ci_low.size() == k && ci_high.size() == k,
                 "TailCurve: ragged columns");
    for (std::size_t i = 0; i < k; ++i) {
        CRBM_REQUIRE(ci_low[i] <= estimates[i] + 1e-15 && estimates[i] <= ci_high[i] + 1e-15,
                     "TailCurve: estimate outside its interval at row " + std::to_string(i));
        if (i > 0) {
            CRBM_REQUIRE(thresholds[i] > thresholds[i - 1],
                         "TailCurve: thresholds not increasing at row " + std::to_string(i));
            // Monotone up to CI overlap.
            CRBM_REQUIRE(estimates[i] <= estimates[i - 1] || ci_low[i] <= ci_high[i - 1],
                         "TailCurve: estimate increases beyond CI overlap at row " +
                             std::to_string(i));
        }
    }
}

void TailCurve::write_csv(const std::string& path) const {
    validate();
    std::ofstream out(path, std::ios::trunc);
    CRBM_REQUIRE(out.good(), "TailCurve: cannot open " + path);
    out << "threshold,estimate,ci_low,ci_high,method,samples\n";
    out << std::setprecision(17);
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
        out << thresholds[i] << ',' << estimates[i] << ',' << ci_low[i] << ',' << ci_high[i]
            << ',' << to_string(method) << ',' << samples << "\n";
    }
}

TailCurve TailCurve::read_csv(const std::string& path) {
    std::ifstream in(path);
    CRBM_REQUIRE(in.good(), "TailCurve: cannot open " + path);
    std::string line;
    CRBM_REQUIRE(std::getline(in, line).good(), "TailCurve: empty file " + path);
    TailCurve curve;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        CRBM_REQUIRE(cells.size() == 6,
                     "TailCurve: line " + std::to_string(lineno) + " needs 6 columns");
        try {
            curve.thresholds.push_back(std::stod(cells[0]));
            curve.estimates.push_back(std::stod(cells[1]));
            curve.ci_low.push_back(std::stod(cells[2]));
            curve.ci_high.push_back(std::stod(cells[3]));
            curve.method = estimator_tag_from_string(cells[4]);
            curve.samples = std::stoull(cells[5]);
        } catch (const DataError&) {
            throw;
        } catch (const std::exception&) {
            throw DataError("TailCurve: bad numeric cell at line " + std::to_string(lineno));
        }
    }
    curve.validate();
    return curve;
}

TailCurve curve_from_losses(const std::vector<double>& losses,
                            const std::vector<double>& thresholds, EstimatorTag method) {
    CRBM_REQUIRE(!losses.empty(), "curve_from_losses: no losses");
    CRBM_REQUIRE(!thresholds.empty(), "curve_from_losses: no thresholds");
    const std::size_t m = losses.size();
    TailCurve curve;
    curve.method = method;
    curve.samples = m;
    curve.thresholds = thresholds;
    curve.estimates.resize(thresholds.size());
    curve.ci_low.resize(thresholds.size());
    curve.ci_high.resize(thresholds.size());
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
        std::size_t count = 0;
        for (double l : losses) {
            if (l > thresholds[t]) ++count;
        }
        curve.estimates[t] = static_cast<double>(count) / static_cast<double>(m);
        const auto ci = stats::wilson_interval(count, m);
        curve.ci_low[t] = ci.low;
        curve.ci_high[t] = ci.high;
    }
    curve.validate();
    return curve;
}

TailCurve mc_tail(const LossSampler& sampler, const std::vector<double>& thresholds, int M,
                  const Rng& rng) {
    CRBM_REQUIRE(M >= 100, "mc_tail: need at least 100 samples");
    std::vector<double> losses(static_cast<std::size_t>(M));
    for (int i = 0; i < M; ++i) {
        Rng sub = rng.substream(static_cast<std::uint64_t>(i));
        losses[static_cast<std::size_t>(i)] = sampler(sub);
    }
    return curve_from_losses(losses, thresholds, EstimatorTag::PlainMc);
}

std::vector<double> sample_rbm_relative_losses(const RbmParameters& p, int M, int burnin,
                                               const Rng& rng, RecoveryModel recovery,
                                               int threads) {
    const Matrix defaults = sample_visible_batch(p, M, burnin, rng, threads);
    const double n = static_cast<double>(p.n_visible());
    std::vector<double> losses(static_cast<std::size_t>(M));
    for (int i = 0; i < M; ++i) {
        if (recovery == RecoveryModel::None) {
            losses[static_cast<std::size_t>(i)] = defaults.col(i).sum() / n;
        } else {
            Rng rec_rng = rng.substream(kRecoveryStreamOffset + static_cast<std::uint64_t>(i));
            double loss = 0.0;
            for (Eigen::Index k = 0; k < defaults.rows(); ++k) {
                const double r = rec_rng.beta_half_half();
                loss += defaults(k, i) * (1.0 - r);
            }
            losses[static_cast<std::size_t>(i)] = loss / n;
        }
    }
    return losses;
}

TailCurve mc_tail_rbm(const RbmParameters& p, const std::vector<double>& thresholds, int M,
                      int burnin, const Rng& rng, RecoveryModel recovery, int threads) {
    CRBM_REQUIRE(M >= 100, "mc_tail_rbm: need at least 100 samples");
    const std::vector<double> losses =
        sample_rbm_relative_losses(p, M, burnin, rng, recovery, threads);
    return curve_from_losses(losses, thresholds, EstimatorTag::PlainMc);
}

TailCurve exact_tail_curve(const RbmParameters& p, const std::vector<double>& thresholds) {
    const std::vector<double> marg = exact_visible_marginal(p);
    const double n = static_cast<double>(p.n_visible());

    // P(L_n > k) for k = 0..n by accumulating the popcount distribution.
    std::vector<double> pmf(static_cast<std::size_t>(p.n_visible()) + 1, 0.0);
    for (std::uint32_t mask = 0; mask < marg.size(); ++mask) {
        pmf[static_cast<std::size_t>(std::popcount(mask))] += marg[mask];
    }
    TailCurve curve;
    curve.method = EstimatorTag::Exact;
    curve.samples = 0;
    curve.thresholds = thresholds;
    for (double x : thresholds) {
        double tail = 0.0;
        for (std::size_t k = 0; k < pmf.size(); ++k) {
            if (static_cast<double>(k) / n > x) tail += pmf[k];
        }
        curve.estimates.push_back(tail);
        curve.ci_low.push_back(tail);
        curve.ci_high.push_back(tail);
    }
    curve.validate();
    return curve;
}

std::vector<double> default_threshold_grid(Eigen::Index n) {
    CRBM_REQUIRE(n >= 1, "default_threshold_grid: n must be >= 1");
    std::vector<double> grid;
    grid.reserve(static_cast<std::size_t>(n) + 1);
    for (Eigen::Index k = 0; k <= n; ++k)
        grid.push_back(static_cast<double>(k) / static_cast<double>(n));
    return grid;
}

VarEstimate var_from_tail(const TailCurve& curve, double alpha) {
    curve.validate();
    CRBM_REQUIRE(alpha > 0.0 && alpha < 1.0, "var_from_tail: alpha must lie in (0,1)");
    const double level = 1.0 - alpha;

    // Depth the estimator can actually resolve.
    double floor = 0.0;
    if (curve.method == EstimatorTag::PlainMc) {
        floor = 1.0 / static_cast<double>(std::max<std::size_t>(curve.samples, 1));
    } else if (curve.method == EstimatorTag::ImportanceSampling) {
        floor = std::numeric_limits<double>::infinity();
        for (double e : curve.estimates) {
            if (e > 0.0) floor = std::min(floor, e);
        }
        if (!std::isfinite(floor)) floor = 1.0;
    }
    if (level < floor) {
        std::ostringstream msg;
        msg << "var_from_tail: insufficient tail depth for alpha=" << alpha
            << "; deepest resolvable exceedance probability is " << floor;
        throw NumericalError(msg.str());
    }

    auto first_crossing = [&](const std::vector<double>& values) -> std::optional<double> {
        for (std::size_t i = 0; i < values.size(); ++i) {
            if (values[i] <= level) return curve.thresholds[i];
        }
        return std::nullopt;
    };

    const auto value = first_crossing(curve.estimates);
    if (!value) {
        throw NumericalError(
            "var_from_tail: tail curve never reaches the requested level; extend the "
            "threshold grid");
    }
    VarEstimate out;
    out.value = *value;
    out.ci_low = first_crossing(curve.ci_low).value_or(curve.thresholds.front());
    out.ci_high =
        first_crossing(curve.ci_high).value_or(std::numeric_limits<double>::infinity());
    return out;
}

} // namespace creditrbm
