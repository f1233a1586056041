#include "profmon/stats.hpp"

#include "profmon/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace profmon {
namespace {

// Lentz evaluation of the continued fraction for I_x(a, b).
double beta_cf(double a, double b, double x) {
    constexpr int kMaxIter = 500;
    constexpr double kEps = 1e-16;
    constexpr double kTiny = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < kEps) break;
    }
    return h;
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
    if (!(a > 0.0) || !(b > 0.0)) throw InvalidInput("incomplete beta needs positive shape parameters");
    if (!(x >= 0.0 && x <= 1.0)) throw InvalidInput("incomplete beta argument must lie in [0, 1]");
    if (x == 0.0 || x == 1.0) return x;
    const double front =
        std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x));
    if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_cf(a, b, x) / a;
    return 1.0 - front * beta_cf(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, double nu) {
    if (!(nu > 0.0)) throw InvalidInput("degrees of freedom must be positive");
    if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
    const double tail = 0.5 * incomplete_beta(0.5 * nu, 0.5, nu / (nu + t * t));
    return t > 0 ? 1.0 - tail : tail;
}

CorrelationResult pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw InvalidInput("correlation series have different lengths");
    if (x.size() < 3) throw InvalidInput("correlation needs at least 3 pairs");
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx == 0.0 || syy == 0.0) throw UndefinedCorrelation("correlation is undefined for a constant series");
    CorrelationResult res;
    res.n = static_cast<int>(x.size());
    res.r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
    const double df = n - 2.0;
    if (std::abs(res.r) >= 1.0) {
        res.p = 0.0;
    } else {
        const double t = res.r * std::sqrt(df / (1.0 - res.r * res.r));
        res.p = incomplete_beta(0.5 * df, 0.5, df / (df + t * t));
    }
    return res;
}

double median(std::span<const double> values) {
    if (values.empty()) throw InvalidInput("median of no values");
    std::vector<double> v(values.begin(), values.end());
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

CountInterval binomial_interval(int n, double p, double level) {
    if (n < 1) throw InvalidInput("binomial interval needs at least one trial");
    if (!(p >= 0.0 && p <= 1.0) || !(level > 0.0 && level < 1.0)) throw InvalidInput("bad binomial parameters");
    const double tail = 0.5 * (1.0 - level);
    std::vector<double> pmf(static_cast<std::size_t>(n) + 1);
    for (int k = 0; k <= n; ++k) {
        const double logc = std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
        const double lp = (p == 0.0) ? (k == 0 ? 0.0 : -std::numeric_limits<double>::infinity())
                        : (p == 1.0) ? (k == n ? 0.0 : -std::numeric_limits<double>::infinity())
                                     : logc + k * std::log(p) + (n - k) * std::log1p(-p);
        pmf[static_cast<std::size_t>(k)] = std::exp(lp);
    }
    CountInterval ci{0, n};
    double below = 0.0;  // P(X < k)
    for (int k = 0; k <= n; ++k) {
        if (below + pmf[static_cast<std::size_t>(k)] > tail) {
            ci.lo = k;
            break;
        }
        below += pmf[static_cast<std::size_t>(k)];
    }
    double above = 0.0;  // P(X > k)
    for (int k = n; k >= 0; --k) {
        if (above + pmf[static_cast<std::size_t>(k)] > tail) {
            ci.hi = k;
            break;
        }
        above += pmf[static_cast<std::size_t>(k)];
    }
    return ci;
}

}  // namespace profmon
