#include "profmon/errors.hpp"
#include "profmon/stats.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <vector>

using namespace profmon;

namespace {

double binomial_pmf(int n, int k, double p) {
    return std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) + k * std::log(p) +
                    (n - k) * std::log1p(-p));
}

}  // namespace

TEST_CASE("Pearson on anti-monotone linear pairs is -1") {
    std::vector<double> x{1, 2, 3, 4, 5, 6}, y;
    for (double v : x) y.push_back(10 - 3 * v);
    const auto c = pearson(x, y);
    CHECK(c.r == doctest::Approx(-1.0).epsilon(1e-15));
    CHECK(c.p < 1e-6);
    CHECK(c.n == 6);
}

TEST_CASE("Pearson matches the covariance definition") {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n01;
    for (int t = 0; t < 100; ++t) {
        std::vector<double> x(10), y(10);
        for (int i = 0; i < 10; ++i) {
            x[static_cast<std::size_t>(i)] = n01(rng);
            y[static_cast<std::size_t>(i)] = 0.5 * x[static_cast<std::size_t>(i)] + n01(rng);
        }
        const double mx = std::accumulate(x.begin(), x.end(), 0.0) / 10, my = std::accumulate(y.begin(), y.end(), 0.0) / 10;
        double sxy = 0, sxx = 0, syy = 0;
        for (int i = 0; i < 10; ++i) {
            sxy += (x[static_cast<std::size_t>(i)] - mx) * (y[static_cast<std::size_t>(i)] - my);
            sxx += std::pow(x[static_cast<std::size_t>(i)] - mx, 2);
            syy += std::pow(y[static_cast<std::size_t>(i)] - my, 2);
        }
        const double r = sxy / std::sqrt(sxx * syy);
        const auto c = pearson(x, y);
        CHECK(std::abs(c.r - r) < 1e-12);
        // two-tailed p from the t statistic with n - 2 degrees of freedom
        const double tstat = r * std::sqrt(8.0 / (1 - r * r));
        CHECK(c.p == doctest::Approx(2 * (1 - student_t_cdf(std::abs(tstat), 8))).epsilon(1e-10));
        CHECK(c.p >= 0.0);
        CHECK(c.p <= 1.0);
    }
}

TEST_CASE("Pearson errors") {
    const std::vector<double> flat(5, 0.3), x{1, 2, 3, 4, 5};
    CHECK_THROWS_AS(pearson(flat, x), UndefinedCorrelation);
    CHECK_THROWS_AS(pearson(x, flat), UndefinedCorrelation);
    CHECK_THROWS_AS(pearson(std::vector<double>{1, 2}, std::vector<double>{2, 1}), InvalidInput);
    CHECK_THROWS_AS(pearson(x, std::vector<double>{1, 2, 3}), InvalidInput);
}

TEST_CASE("Student t CDF against known values") {
    CHECK(student_t_cdf(0.0, 5) == doctest::Approx(0.5).epsilon(1e-14));
    // nu = 1 is the Cauchy distribution
    for (double t : {-3.0, -0.4, 0.7, 12.0}) CHECK(student_t_cdf(t, 1) == doctest::Approx(0.5 + std::atan(t) / std::numbers::pi).epsilon(1e-12));
    // nu = 2 has a closed form
    for (double t : {-2.0, 0.3, 5.0}) CHECK(student_t_cdf(t, 2) == doctest::Approx(0.5 + t / (2 * std::sqrt(2 + t * t))).epsilon(1e-12));
    // tabulated critical values
    CHECK(student_t_cdf(2.228138851986, 10) == doctest::Approx(0.975).epsilon(1e-9));
    CHECK(student_t_cdf(1.859548037531, 8) == doctest::Approx(0.95).epsilon(1e-9));
    CHECK(student_t_cdf(-2.306004135033, 8) == doctest::Approx(0.025).epsilon(1e-9));
}

TEST_CASE("incomplete beta edge cases and symmetry") {
    CHECK(incomplete_beta(2, 3, 0.0) == 0.0);
    CHECK(incomplete_beta(2, 3, 1.0) == 1.0);
    CHECK(incomplete_beta(1, 1, 0.37) == doctest::Approx(0.37).epsilon(1e-14));
    // I_x(a, 1) = x^a
    CHECK(incomplete_beta(3.5, 1, 0.6) == doctest::Approx(std::pow(0.6, 3.5)).epsilon(1e-12));
    for (double x : {0.1, 0.5, 0.83})
        CHECK(incomplete_beta(2.5, 4, x) + incomplete_beta(4, 2.5, 1 - x) == doctest::Approx(1.0).epsilon(1e-12));
    // binomial tail identity: P(X >= k) = I_p(k, n - k + 1)
    double tail = 0;
    for (int k = 4; k <= 12; ++k) tail += binomial_pmf(12, k, 0.3);
    CHECK(incomplete_beta(4, 9, 0.3) == doctest::Approx(tail).epsilon(1e-12));
    CHECK_THROWS_AS(incomplete_beta(0, 1, 0.5), InvalidInput);
    CHECK_THROWS_AS(incomplete_beta(1, 1, 1.5), InvalidInput);
}

TEST_CASE("median") {
    CHECK(median(std::vector<double>{0.2, 0.9, 0.4}) == 0.4);
    CHECK(median(std::vector<double>{0.7}) == 0.7);
    CHECK(median(std::vector<double>{4, 1, 3, 2}) == 2.5);
    CHECK_THROWS_AS(median(std::vector<double>{}), InvalidInput);
}

TEST_CASE("binomial acceptance interval") {
    const auto iv = binomial_interval(51, 0.05, 0.99);
    CHECK(iv.lo == 0);
    CHECK(iv.hi == 7);
    // tails outside the interval carry at most 0.5% each, and the interval is the tightest such
    for (int n : {20, 51, 100, 256}) {
        for (double p : {0.05, 0.3}) {
            const auto b = binomial_interval(n, p, 0.99);
            double below = 0, above = 0;
            for (int k = 0; k < b.lo; ++k) below += binomial_pmf(n, k, p);
            for (int k = b.hi + 1; k <= n; ++k) above += binomial_pmf(n, k, p);
            CHECK(below <= 0.005 + 1e-12);
            CHECK(above <= 0.005 + 1e-12);
            if (b.lo > 0) CHECK(below + binomial_pmf(n, b.lo, p) > 0.005);
            if (b.hi < n) CHECK(above + binomial_pmf(n, b.hi, p) > 0.005);
        }
    }
}
