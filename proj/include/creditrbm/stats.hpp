#ifndef CREDITRBM_STATS_HPP
#define CREDITRBM_STATS_HPP

#include <cstddef>
#include <span>

namespace creditrbm::stats {

// Standard normal.
double normal_cdf(double x);
double normal_quantile(double p);
double normal_pdf(double x);

// Student t with nu degrees of freedom.
double student_t_cdf(double nu, double x);
double student_t_quantile(double nu, double p);
double student_t_log_pdf(double nu, double x);

// Upper tail of the chi-squared distribution (p-value of a GOF statistic).
double chi_squared_sf(double df, double x);

// Numerically stable 1/(1+exp(-x)).
double sigmoid(double x);

// log(1 + exp(x)) without overflow.
double log1pexp(double x);

// log(sum(exp(v))) of a possibly large-magnitude vector.
double logsumexp(std::span<const double> v);

struct Interval {
    double low = 0.0;
    double high = 0.0;
};

// Wilson score interval for k successes out of m trials at confidence z.
// k = 0 reports the one-sided rule-of-three bound [0, 3/m].
Interval wilson_interval(std::size_t k, std::size_t m, double z = 1.959963984540054);

double mean(std::span<const double> v);
double variance(std::span<const double> v); // unbiased, needs >= 2 elements

} // namespace creditrbm::stats

#endif
