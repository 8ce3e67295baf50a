#include "creditrbm/copula.hpp"

#include "creditrbm/errors.hpp"
#include "creditrbm/stats.hpp"
#include "creditrbm/threading.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

namespace creditrbm {

namespace {

constexpr std::uint64_t kMeanPdStream = 0;
constexpr std::uint64_t kShuffleStream = 1;
constexpr std::uint64_t kDayStreamBase = 1024;

double clamp_pd(double p) {
    return std::min(kPdClampHigh, std::max(kPdClampLow, p));
}

void require_loadings(const Vector& a, const char* op) {
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        if (std::abs(a[i]) >= 1.0) {
            throw DataError(std::string(op) + ": |a_" + std::to_string(i) +
                            "| >= 1 makes Sigma singular");
        }
    }
}

} // namespace

void GaussianFactorModel::validate() const {
    CRBM_REQUIRE(loadings.size() == thresholds.size(),
                 "GaussianFactorModel: loading/threshold length mismatch");
    CRBM_REQUIRE(loadings.size() >= 1, "GaussianFactorModel: empty model");
    require_loadings(loadings, "GaussianFactorModel");
}

Vector conditional_pd(const GaussianFactorModel& model, double z) {
    model.validate();
    const Eigen::Index n = model.loadings.size();
    Vector p(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double a = model.loadings[i];
        p[i] = stats::normal_cdf((model.thresholds[i] - a * z) / std::sqrt(1.0 - a * a));
    }
    return p;
}

PortfolioPanel gen_one_factor_panel(int n, double pd_low, double pd_high, double rho,
                                    int days, const Rng& rng, PanelMode mode, int threads) {
    CRBM_REQUIRE(n >= 1, "gen_one_factor_panel: n must be >= 1");
    CRBM_REQUIRE(days >= 1, "gen_one_factor_panel: days must be >= 1");
    CRBM_REQUIRE(rho >= 0.0 && rho < 1.0, "gen_one_factor_panel: rho must lie in [0,1)");
    CRBM_REQUIRE(pd_low > 0.0 && pd_high < 1.0 && pd_low <= pd_high,
                 "gen_one_factor_panel: pd range must satisfy 0 < low <= high < 1");

    Rng pd_rng = rng.substream(kMeanPdStream);
    Vector mean_pd(n), dbar(n);
    for (int i = 0; i < n; ++i) {
        mean_pd[i] = pd_low + (pd_high - pd_low) * pd_rng.uniform01();
        dbar[i] = stats::normal_quantile(mean_pd[i]);
    }
    const double a = std::sqrt(rho);

    PortfolioPanel panel;
    panel.dates = synthetic_dates(days);
    panel.obligor_ids.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) panel.obligor_ids.push_back("obl_" + std::to_string(i));
    panel.pd.resize(days, n);

    GaussianFactorModel model{Vector::Constant(n, a), dbar};
    parallel_for(days, threads, [&](int day) {
        Rng day_rng = rng.substream(kDayStreamBase + static_cast<std::uint64_t>(day));
        const double z = day_rng.normal();
        if (mode == PanelMode::ConditionalPd) {
            const Vector p = conditional_pd(model, z);
            for (int i = 0; i < n; ++i) panel.pd(day, i) = clamp_pd(p[i]);
        } else {
            const double idio_scale = std::sqrt(1.0 - rho);
            for (int i = 0; i < n; ++i) {
                const double x = a * z + idio_scale * day_rng.normal();
                panel.pd(day, i) = clamp_pd(stats::normal_cdf(M_SQRT2 * dbar[i] + x));
            }
        }
    });
    panel.validate();
    return panel;
}

int SectorCopulaSpec::n_obligors() const {
    return std::accumulate(sector_sizes.begin(), sector_sizes.end(), 0);
}

void SectorCopulaSpec::validate() const {
    CRBM_REQUIRE(!sector_sizes.empty(), "SectorCopulaSpec: no sectors");
    CRBM_REQUIRE(sector_sizes.size() == loadings.size(),
                 "SectorCopulaSpec: one loading triple per sector required");
    for (int s : sector_sizes) CRBM_REQUIRE(s >= 1, "SectorCopulaSpec: empty sector");
    for (std::size_t s = 0; s < loadings.size(); ++s) {
        const auto& l = loadings[s];
        const double sum = l.global * l.global + l.sector * l.sector +
                           l.idiosyncratic * l.idiosyncratic;
        CRBM_REQUIRE(std::abs(sum - 1.0) < 1e-9,
                     "SectorCopulaSpec: squared loadings of sector " + std::to_string(s) +
                         " sum to " + std::to_string(sum) + ", not 1");
    }
    CRBM_REQUIRE(pd_low > 0.0 && pd_high < 1.0 && pd_low <= pd_high,
                 "SectorCopulaSpec: pd range must satisfy 0 < low <= high < 1");
}

SectorCopulaSpec SectorCopulaSpec::default_spec() {
    SectorCopulaSpec spec;
    const double g = 0.3, s = 0.75;
    const double q = std::sqrt(1.0 - g * g - s * s);
    spec.sector_sizes.assign(5, 20);
    spec.loadings.assign(5, SectorLoading{g, s, q});
    return spec;
}

void SectorCopulaSpec::save(const std::string& path) const {
    validate();
    std::ofstream out(path, std::ios::trunc);
    CRBM_REQUIRE(out.good(), "SectorCopulaSpec: cannot open " + path);
    out << std::setprecision(17);
    out << "pd_low = " << pd_low << "\n";
    out << "pd_high = " << pd_high << "\n";
    for (std::size_t s = 0; s < sector_sizes.size(); ++s) {
        out << "sector = " << sector_sizes[s] << ' ' << loadings[s].global << ' '
            << loadings[s].sector << ' ' << loadings[s].idiosyncratic << "\n";
    }
}

SectorCopulaSpec SectorCopulaSpec::load(const std::string& path) {
    std::ifstream in(path);
    CRBM_REQUIRE(in.good(), "SectorCopulaSpec: cannot open " + path);
    SectorCopulaSpec spec;
    spec.sector_sizes.clear();
    spec.loadings.clear();
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        CRBM_REQUIRE(eq != std::string::npos,
                     "SectorCopulaSpec: line " + std::to_string(lineno) + " has no '='");
        std::istringstream key_ss(line.substr(0, eq));
        std::string key;
        key_ss >> key;
        std::istringstream val_ss(line.substr(eq + 1));
        if (key == "pd_low") {
            val_ss >> spec.pd_low;
        } else if (key == "pd_high") {
            val_ss >> spec.pd_high;
        } else if (key == "sector") {
            int size = 0;
            SectorLoading l;
            val_ss >> size >> l.global >> l.sector >> l.idiosyncratic;
            CRBM_REQUIRE(!val_ss.fail(),
                         "SectorCopulaSpec: line " + std::to_string(lineno) +
                             " needs 'sector = size global sector idiosyncratic'");
            spec.sector_sizes.push_back(size);
            spec.loadings.push_back(l);
        } else {
            throw DataError("SectorCopulaSpec: line " + std::to_string(lineno) +
                            ": unknown key '" + key + "'");
        }
    }
    spec.validate();
    return spec;
}

SectorPanelResult gen_sector_panel(const SectorCopulaSpec& spec, int days, const Rng& rng,
                                   int threads) {
    spec.validate();
    CRBM_REQUIRE(days >= 1, "gen_sector_panel: days must be >= 1");
    const int n = spec.n_obligors();
    const int n_sectors = static_cast<int>(spec.sector_sizes.size());

    std::vector<int> sector_of(static_cast<std::size_t>(n));
    {
        int k = 0;
        for (int s = 0; s < n_sectors; ++s)
            for (int j = 0; j < spec.sector_sizes[static_cast<std::size_t>(s)]; ++j)
                sector_of[static_cast<std::size_t>(k++)] = s;
    }

    Rng pd_rng = rng.substream(kMeanPdStream);
    Vector dbar(n);
    for (int i = 0; i < n; ++i) {
        const double mean_pd =
            spec.pd_low + (spec.pd_high - spec.pd_low) * pd_rng.uniform01();
        dbar[i] = M_SQRT2 * stats::normal_quantile(mean_pd);
    }

    Matrix pd(days, n);
    parallel_for(days, threads, [&](int day) {
        Rng day_rng = rng.substream(kDayStreamBase + static_cast<std::uint64_t>(day));
        const double z_global = day_rng.normal();
        std::vector<double> z_sector(static_cast<std::size_t>(n_sectors));
        for (int s = 0; s < n_sectors; ++s) z_sector[static_cast<std::size_t>(s)] = day_rng.normal();
        for (int i = 0; i < n; ++i) {
            const auto& l = spec.loadings[static_cast<std::size_t>(sector_of[i])];
            const double x = l.global * z_global +
                             l.sector * z_sector[static_cast<std::size_t>(sector_of[i])] +
                             l.idiosyncratic * day_rng.normal();
            pd(day, i) = clamp_pd(stats::normal_cdf(dbar[i] + x));
        }
    });

    // Shuffle the obligor order and record it.
    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    Rng shuffle_rng = rng.substream(kShuffleStream);
    for (int i = n - 1; i > 0; --i) {
        const int j = static_cast<int>(shuffle_rng.uniform_below(static_cast<std::uint64_t>(i + 1)));
        std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
    }

    SectorPanelResult out;
    out.permutation = perm;
    out.true_sector.resize(static_cast<std::size_t>(n));
    out.panel.dates = synthetic_dates(days);
    out.panel.pd.resize(days, n);
    out.panel.obligor_ids.resize(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) {
        const int orig = perm[static_cast<std::size_t>(j)];
        out.panel.pd.col(j) = pd.col(orig);
        out.panel.obligor_ids[static_cast<std::size_t>(j)] = "obl_" + std::to_string(orig);
        out.true_sector[static_cast<std::size_t>(j)] = sector_of[static_cast<std::size_t>(orig)];
    }
    out.panel.validate();
    return out;
}

Vector sigma_inverse_times(const Vector& a, const Vector& x) {
    CRBM_REQUIRE(a.size() == x.size(), "sigma_inverse_times: length mismatch");
    require_loadings(a, "sigma_inverse_times");
    const Eigen::Index n = a.size();
    double gamma = 1.0, dot = 0.0;
    Vector u(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double d = 1.0 - a[i] * a[i];
        u[i] = a[i] / d;
        gamma += a[i] * u[i];
        dot += u[i] * x[i];
    }
    Vector y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        y[i] = x[i] / (1.0 - a[i] * a[i]) - dot / gamma * u[i];
    }
    return y;
}

double sigma_logdet(const Vector& a) {
    require_loadings(a, "sigma_logdet");
    double log_prod = 0.0, correction = 0.0;
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        const double d = 1.0 - a[i] * a[i];
        log_prod += std::log(d);
        correction += a[i] * a[i] / d;
    }
    return log_prod + std::log1p(correction);
}

double copula_loglik(const Vector& a, const Matrix& samples) {
    CRBM_REQUIRE(samples.cols() == a.size(), "copula_loglik: column mismatch");
    CRBM_REQUIRE(samples.rows() >= 1, "copula_loglik: empty sample");
    require_loadings(a, "copula_loglik");
    const Eigen::Index n = a.size();
    const Eigen::Index m = samples.rows();

    double gamma = 1.0;
    Vector u(n), inv_d(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double d = 1.0 - a[i] * a[i];
        inv_d[i] = 1.0 / d;
        u[i] = a[i] / d;
        gamma += a[i] * u[i];
    }
    // sum_l q_l = sum_i S2_i / D_i - (1/gamma) sum_l s_l^2
    double quad = 0.0;
    const Vector s = samples * u; // s_l
    for (Eigen::Index i = 0; i < n; ++i) quad += samples.col(i).squaredNorm() * inv_d[i];
    quad -= s.squaredNorm() / gamma;
    return -0.5 * quad - 0.5 * static_cast<double>(m) * sigma_logdet(a);
}

Vector copula_loglik_gradient(const Vector& a, const Matrix& samples) {
    CRBM_REQUIRE(samples.cols() == a.size(), "copula_loglik_gradient: column mismatch");
    require_loadings(a, "copula_loglik_gradient");
    const Eigen::Index n = a.size();
    const double m = static_cast<double>(samples.rows());

    double gamma = 1.0;
    Vector u(n), inv_d(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double d = 1.0 - a[i] * a[i];
        inv_d[i] = 1.0 / d;
        u[i] = a[i] / d;
        gamma += a[i] * u[i];
    }
    const Vector s = samples * u;              // s_l
    const double ss = s.squaredNorm();         // sum_l s_l^2
    const Vector c = samples.transpose() * s;  // C_i = sum_l s_l x_li

    Vector g(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double s2 = samples.col(i).squaredNorm();
        const double inv_d2 = inv_d[i] * inv_d[i];
        const double dquad = 2.0 * a[i] * inv_d2 * s2 + 2.0 * a[i] * inv_d2 * ss / (gamma * gamma) -
                             2.0 * (1.0 + a[i] * a[i]) * inv_d2 * c[i] / gamma;
        const double dlogdet = -2.0 * a[i] * inv_d[i] + 2.0 * a[i] * inv_d2 / gamma;
        g[i] = -0.5 * dquad - 0.5 * m * dlogdet;
    }
    return g;
}

Matrix panel_to_latent(const PortfolioPanel& panel) {
    panel.validate();
    Matrix y(panel.pd.rows(), panel.pd.cols());
    for (Eigen::Index r = 0; r < y.rows(); ++r)
        for (Eigen::Index c = 0; c < y.cols(); ++c)
            y(r, c) = stats::normal_quantile(panel.pd(r, c));
    for (Eigen::Index c = 0; c < y.cols(); ++c) {
        const double mean = y.col(c).mean();
        const double sd = std::sqrt((y.col(c).array() - mean).square().sum() /
                                    static_cast<double>(y.rows() - 1));
        CRBM_REQUIRE(sd > 0.0, "panel_to_latent: column " + std::to_string(c) +
                                   " has zero variance, no factor information");
        y.col(c) = (y.col(c).array() - mean) / sd;
    }
    return y;
}

namespace {

// The log-likelihood and its gradient depend on the data only through the
// Gram matrix X^T X, which makes every optimizer step O(n^2) regardless of
// the sample count.
class GramObjective {
public:
    GramObjective(const Matrix& latent)
        : gram_(latent.transpose() * latent), m_(static_cast<double>(latent.rows())) {}

    double mean_loglik(const Vector& a) const {
        const Eigen::Index n = a.size();
        double gamma = 1.0;
        Vector u(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double d = 1.0 - a[i] * a[i];
            u[i] = a[i] / d;
            gamma += a[i] * u[i];
        }
        double quad = -u.dot(gram_ * u) / gamma;
        for (Eigen::Index i = 0; i < n; ++i) quad += gram_(i, i) / (1.0 - a[i] * a[i]);
        return (-0.5 * quad - 0.5 * m_ * sigma_logdet(a)) / m_;
    }

    Vector mean_gradient(const Vector& a) const {
        const Eigen::Index n = a.size();
        double gamma = 1.0;
        Vector u(n), inv_d(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double d = 1.0 - a[i] * a[i];
            inv_d[i] = 1.0 / d;
            u[i] = a[i] / d;
            gamma += a[i] * u[i];
        }
        const Vector gu = gram_ * u;
        const double ss = u.dot(gu);
        Vector g(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double inv_d2 = inv_d[i] * inv_d[i];
            const double dquad = 2.0 * a[i] * inv_d2 * gram_(i, i) +
                                 2.0 * a[i] * inv_d2 * ss / (gamma * gamma) -
                                 2.0 * (1.0 + a[i] * a[i]) * inv_d2 * gu[i] / gamma;
            const double dlogdet = -2.0 * a[i] * inv_d[i] + 2.0 * a[i] * inv_d2 / gamma;
            g[i] = (-0.5 * dquad - 0.5 * m_ * dlogdet) / m_;
        }
        return g;
    }

private:
    Matrix gram_;
    double m_;
};

// Projected gradient ascent on the mean log-likelihood.
Vector fit_loadings_from_latent(const Matrix& latent, const CopulaFitOptions& opts) {
    const Eigen::Index n = latent.cols();
    if (n == 1) return Vector::Zero(1); // Sigma is identically [1]: flat likelihood
    const GramObjective obj(latent);

    auto project = [&](Vector v) {
        for (Eigen::Index i = 0; i < n; ++i) v[i] = std::clamp(v[i], -opts.box, opts.box);
        return v;
    };

    Vector a = Vector::Constant(n, opts.init);
    double f = obj.mean_loglik(a);
    double step = 1.0;
    int stalled = 0;
    for (int iter = 0; iter < opts.max_iterations; ++iter) {
        const Vector g = obj.mean_gradient(a);

        // Gradient criterion with box-active components masked out.
        double gnorm = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const bool at_hi = a[i] >= opts.box && g[i] > 0.0;
            const bool at_lo = a[i] <= -opts.box && g[i] < 0.0;
            if (!at_hi && !at_lo) gnorm = std::max(gnorm, std::abs(g[i]));
        }
        if (gnorm <= opts.gradient_tol) {
            if (a.sum() < 0.0) a = -a;
            return a;
        }

        // Backtracking line search starting from twice the last good step.
        step = std::min(2.0 * step, 16.0);
        bool moved = false;
        for (int half = 0; half < 60; ++half) {
            const Vector cand = project(a + step * g);
            const double fc = obj.mean_loglik(cand);
            if (fc > f + 1e-6 * step * gnorm * gnorm) {
                // The landscape is quartically flat around a = 0 (Sigma
                // depends on a only to second order), so treat vanishing
                // objective progress as convergence.
                stalled = fc - f < 1e-12 * std::max(1.0, std::abs(f)) ? stalled + 1 : 0;
                a = cand;
                f = fc;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if (!moved || stalled >= 3) {
            if (a.sum() < 0.0) a = -a;
            return a; // ascent exhausted at the numerical optimum
        }
    }
    const Vector g = obj.mean_gradient(a);
    std::ostringstream msg;
    msg << "copula fit did not converge after " << opts.max_iterations
        << " iterations; |grad| = " << g.cwiseAbs().maxCoeff() << ", last iterate = [";
    for (Eigen::Index i = 0; i < n; ++i) msg << (i ? ", " : "") << a[i];
    msg << "]";
    throw NumericalError(msg.str());
}

} // namespace

Vector fit_gaussian_copula(const PortfolioPanel& panel, const CopulaFitOptions& opts) {
    panel.validate();
    CRBM_REQUIRE(panel.n_dates() >= 2 * panel.n_obligors(),
                 "fit_gaussian_copula: need at least 2n rows");
    const Matrix latent = panel_to_latent(panel);
    return fit_loadings_from_latent(latent, opts);
}

TCopulaFit fit_t_copula(const PortfolioPanel& panel, const std::vector<double>& nu_grid,
                        const CopulaFitOptions& opts) {
    panel.validate();
    CRBM_REQUIRE(!nu_grid.empty(), "fit_t_copula: empty degrees-of-freedom grid");
    for (double nu : nu_grid) CRBM_REQUIRE(nu > 2.0, "fit_t_copula: need nu > 2");
    CRBM_REQUIRE(panel.n_dates() >= 2 * panel.n_obligors(),
                 "fit_t_copula: need at least 2n rows");

    const Eigen::Index rows = panel.n_dates();
    const Eigen::Index n = panel.n_obligors();

    // Rank pseudo-observations u in (0,1), robust to any monotone margins.
    Matrix u(rows, n);
    for (Eigen::Index c = 0; c < n; ++c) {
        std::vector<Eigen::Index> idx(static_cast<std::size_t>(rows));
        std::iota(idx.begin(), idx.end(), Eigen::Index{0});
        std::stable_sort(idx.begin(), idx.end(), [&](Eigen::Index i, Eigen::Index j) {
            return panel.pd(i, c) < panel.pd(j, c);
        });
        for (Eigen::Index r = 0; r < rows; ++r) {
            u(idx[static_cast<std::size_t>(r)], c) =
                static_cast<double>(r + 1) / static_cast<double>(rows + 1);
        }
    }

    TCopulaFit best;
    best.log_likelihood = -std::numeric_limits<double>::infinity();
    for (double nu : nu_grid) {
        Matrix y(rows, n);
        for (Eigen::Index r = 0; r < rows; ++r)
            for (Eigen::Index c = 0; c < n; ++c)
                y(r, c) = stats::student_t_quantile(nu, u(r, c));

        Matrix y_std = y;
        for (Eigen::Index c = 0; c < n; ++c) {
            const double mean = y_std.col(c).mean();
            const double sd = std::sqrt((y_std.col(c).array() - mean).square().sum() /
                                        static_cast<double>(rows - 1));
            y_std.col(c) = (y_std.col(c).array() - mean) / sd;
        }
        const Vector a = fit_loadings_from_latent(y_std, opts);

        // Full t-copula log-likelihood at (a, nu) on the t-quantile scale.
        const double logdet = sigma_logdet(a);
        double ll = 0.0;
        const double cn = std::lgamma(0.5 * (nu + n)) - std::lgamma(0.5 * nu) -
                          0.5 * static_cast<double>(n) * std::log(nu * M_PI) - 0.5 * logdet;
        for (Eigen::Index r = 0; r < rows; ++r) {
            const Vector yr = y.row(r).transpose();
            const double q = yr.dot(sigma_inverse_times(a, yr));
            double row_ll = cn - 0.5 * (nu + n) * std::log1p(q / nu);
            for (Eigen::Index c = 0; c < n; ++c)
                row_ll -= stats::student_t_log_pdf(nu, y(r, c));
            ll += row_ll;
        }
        if (ll > best.log_likelihood) {
            best.log_likelihood = ll;
            best.loadings = a;
            best.nu = nu;
        }
    }
    return best;
}

} // namespace creditrbm
