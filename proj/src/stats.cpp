#include "creditrbm/stats.hpp"

#include "creditrbm/errors.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>

namespace creditrbm::stats {

namespace {
const boost::math::normal_distribution<double> kStdNormal(0.0, 1.0);
}

double normal_cdf(double x) {
    return boost::math::cdf(kStdNormal, x);
}

double normal_quantile(double p) {
    CRBM_REQUIRE(p > 0.0 && p < 1.0, "normal_quantile: p must lie in (0,1)");
    return boost::math::quantile(kStdNormal, p);
}

double normal_pdf(double x) {
    return boost::math::pdf(kStdNormal, x);
}

double student_t_cdf(double nu, double x) {
    return boost::math::cdf(boost::math::students_t_distribution<double>(nu), x);
}

double student_t_quantile(double nu, double p) {
    CRBM_REQUIRE(p > 0.0 && p < 1.0, "student_t_quantile: p must lie in (0,1)");
    return boost::math::quantile(boost::math::students_t_distribution<double>(nu), p);
}

double student_t_log_pdf(double nu, double x) {
    using std::lgamma;
    using std::log;
    return lgamma(0.5 * (nu + 1.0)) - lgamma(0.5 * nu) - 0.5 * log(nu * M_PI) -
           0.5 * (nu + 1.0) * std::log1p(x * x / nu);
}

double chi_squared_sf(double df, double x) {
    if (x <= 0.0) return 1.0;
    return boost::math::cdf(boost::math::complement(
        boost::math::chi_squared_distribution<double>(df), x));
}

double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double log1pexp(double x) {
    if (x > 0.0) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

double logsumexp(std::span<const double> v) {
    CRBM_REQUIRE(!v.empty(), "logsumexp: empty input");
    const double m = *std::max_element(v.begin(), v.end());
    if (!std::isfinite(m)) return m; // all -inf, or a NaN/inf poisons the sum
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

Interval wilson_interval(std::size_t k, std::size_t m, double z) {
    CRBM_REQUIRE(m >= 1 && k <= m, "wilson_interval: need 0 <= k <= m, m >= 1");
    if (k == 0) return {0.0, std::min(1.0, 3.0 / static_cast<double>(m))};
    const double n = static_cast<double>(m);
    const double p = static_cast<double>(k) / n;
    const double z2 = z * z;
    const double denom = 1.0 + z2 / n;
    const double center = (p + z2 / (2.0 * n)) / denom;
    const double half = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom;
    return {std::max(0.0, center - half), std::min(1.0, center + half)};
}

double mean(std::span<const double> v) {
    CRBM_REQUIRE(!v.empty(), "mean: empty input");
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double variance(std::span<const double> v) {
    CRBM_REQUIRE(v.size() >= 2, "variance: need at least two elements");
    const double mu = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - mu) * (x - mu);
    return s / static_cast<double>(v.size() - 1);
}

} // namespace creditrbm::stats
