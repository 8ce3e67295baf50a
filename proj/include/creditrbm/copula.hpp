#ifndef CREDITRBM_COPULA_HPP
#define CREDITRBM_COPULA_HPP

#include "creditrbm/panel.hpp"
#include "creditrbm/rng.hpp"

#include <string>
#include <vector>

namespace creditrbm {

// One-factor Gaussian copula: latent X_i = a_i Z + sqrt(1-a_i^2) eps_i,
// default when X_i <= dbar_i. Requires |a_i| < 1 strictly.
struct GaussianFactorModel {
    Vector loadings;   // a
    Vector thresholds; // dbar

    void validate() const;
};

// p_i(z) = Phi((dbar_i - a_i z) / sqrt(1 - a_i^2)).
Vector conditional_pd(const GaussianFactorModel& model, double z);

// What a generated panel carries per day:
//  - ConditionalPd: the Vasicek conditional PD given the day's common factor
//    (columns are deterministic transforms of one another, the convention for
//    the loss-tail experiments);
//  - LatentPd: Phi(sqrt(2) Phi^{-1}(mean_pd) + X) with the full
//    systematic-plus-idiosyncratic shock left in the panel, so the
//    Phi^{-1}-transformed columns carry exactly the factor correlation (the
//    convention the copula MLE studies need).
enum class PanelMode : std::uint8_t { ConditionalPd = 0, LatentPd = 1 };

PortfolioPanel gen_one_factor_panel(int n, double pd_low, double pd_high, double rho,
                                    int days, const Rng& rng,
                                    PanelMode mode = PanelMode::ConditionalPd,
                                    int threads = 1);

// Per-sector loading triple; squares must sum to one so each latent has unit
// variance.
struct SectorLoading {
    double global = 0.0;
    double sector = 0.0;
    double idiosyncratic = 1.0;
};

struct SectorCopulaSpec {
    std::vector<int> sector_sizes;
    std::vector<SectorLoading> loadings; // one per sector
    double pd_low = 0.02;
    double pd_high = 0.10;

    int n_obligors() const;
    void validate() const;

    // Five sectors of twenty obligors; strong sector factor, mild global one.
    static SectorCopulaSpec default_spec();

    void save(const std::string& path) const;
    static SectorCopulaSpec load(const std::string& path);
};

struct SectorPanelResult {
    PortfolioPanel panel;
    // Ground truth aligned with the (shuffled) panel columns.
    std::vector<int> true_sector;
    // panel column j holds original obligor permutation[j].
    std::vector<int> permutation;
};

// Full-latent panel (PDs carry global + sector + idiosyncratic shocks), with
// the obligor order shuffled and the permutation recorded.
SectorPanelResult gen_sector_panel(const SectorCopulaSpec& spec, int days, const Rng& rng,
                                   int threads = 1);

// ---- Appendix-style closed forms for Sigma = a a^T + (I - diag(a a^T)) ----

// Sigma^{-1} x in O(n) via the rank-one update formula.
Vector sigma_inverse_times(const Vector& a, const Vector& x);

// log|Sigma| in O(n) via the determinant lemma, factored for stability.
double sigma_logdet(const Vector& a);

// -1/2 sum_l x_l^T Sigma^{-1} x_l - (m/2) log|Sigma|; rows of `samples` are
// latent observations.
double copula_loglik(const Vector& a, const Matrix& samples);

// Analytic gradient of copula_loglik (same scale, not per-sample).
Vector copula_loglik_gradient(const Vector& a, const Matrix& samples);

// Phi^{-1} transform followed by per-column standardization: the bridge from
// PD panels to latent samples used by the MLE fitters.
Matrix panel_to_latent(const PortfolioPanel& panel);

struct CopulaFitOptions {
    double box = 0.999;        // |a_i| <= box
    double init = 0.3;
    int max_iterations = 500;
    double gradient_tol = 1e-5; // on the per-sample (mean) objective
};

// Maximum-likelihood loadings by projected gradient ascent with backtracking;
// sign convention: sum of loadings is nonnegative. Needs >= 2n rows.
Vector fit_gaussian_copula(const PortfolioPanel& panel, const CopulaFitOptions& opts = {});

struct TCopulaFit {
    Vector loadings;
    double nu = 0.0;
    double log_likelihood = 0.0; // full t-copula log-likelihood of the winner
};

// Profile fit over a grid of degrees of freedom: rank pseudo-observations,
// t-quantile transform, Gaussian-style loading fit, scored by the full
// t-copula log-likelihood.
TCopulaFit fit_t_copula(const PortfolioPanel& panel, const std::vector<double>& nu_grid,
                        const CopulaFitOptions& opts = {});

} // namespace creditrbm

#endif
