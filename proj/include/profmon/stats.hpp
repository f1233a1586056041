#pragma once

#include <span>

namespace profmon {

// Regularized incomplete beta I_x(a, b) by continued fraction.
double incomplete_beta(double a, double b, double x);

// P(T <= t) for Student's t with nu degrees of freedom.
double student_t_cdf(double t, double nu);

struct CorrelationResult {
    double r = 0.0;
    double p = 1.0;  // two-tailed, t-distribution with n - 2 degrees of freedom
    int n = 0;
};

// Throws InvalidInput for fewer than 3 pairs or unequal lengths and
// UndefinedCorrelation when either series is constant.
CorrelationResult pearson(std::span<const double> x, std::span<const double> y);

// Mean of the two middle values for even counts. Throws InvalidInput when empty.
double median(std::span<const double> values);

// Exact two-sided acceptance region [lo, hi] for the count of successes in n
// Bernoulli(p) trials: each tail outside the region has probability <= (1 - level) / 2.
struct CountInterval {
    int lo = 0;
    int hi = 0;
};
CountInterval binomial_interval(int n, double p, double level);

}  // namespace profmon
