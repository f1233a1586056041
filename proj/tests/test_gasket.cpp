#include "profmon/errors.hpp"
#include "profmon/gasket.hpp"

#include <doctest.h>

#include <cmath>

using namespace profmon;

namespace {

GasketParams noiseless() {
    GasketParams p;
    p.noise_var = 0.0;
    return p;
}

Profile render(const GasketParams& p) {
    Rng rng(0);
    const auto p0 = grid_points(p.width), p1 = grid_points(p.height);
    return render_gasket(p, p0, p1, rng);
}

}  // namespace

TEST_CASE("grid points span the unit interval") {
    const auto g = grid_points(64);
    CHECK(g.front() == 0.0);
    CHECK(g.back() == 1.0);
    CHECK(g[1] == doctest::Approx(1.0 / 63));
    CHECK_THROWS_AS(grid_points(1), InvalidInput);
}

TEST_CASE("noiseless gasket equals sqrt(g) at the centre and zero outside") {
    GasketParams p = noiseless();
    p.width = p.height = 65;  // puts a grid point exactly on (0.5, 0.5)
    const Profile img = render(p);
    CHECK(img.at(32, 32) == 1.0f);
    CHECK(img.at(0, 0) == 0.0f);
    CHECK(img.at(64, 64) == 0.0f);
    const double p0 = 40.0 / 64, u = (p0 - 0.5) / 0.2;
    CHECK(img.at(32, 40) == doctest::Approx(std::sqrt(1 - u * u)).epsilon(1e-6));
}

TEST_CASE("nonzero pixel count matches a brute-force scan of the grid") {
    for (double a : {0.1, 0.2, 0.27}) {
        for (double c0 : {0.3, 0.5, 0.61}) {
            GasketParams p = noiseless();
            p.a = a;
            p.c0 = c0;
            const Profile img = render(p);
            int expected = 0;
            for (int i = 0; i < 64; ++i)
                for (int j = 0; j < 64; ++j) {
                    const double x = j / 63.0, y = i / 63.0;
                    if (std::pow((x - c0) / a, 2) + std::pow((y - 0.5) / 0.2, 2) < 1.0) ++expected;
                }
            int count = 0;
            for (float v : img.values()) count += v > 0.0f;
            CHECK(count == expected);
        }
    }
}

TEST_CASE("row index follows p1 and column index follows p0") {
    GasketParams p = noiseless();
    p.c0 = 0.2;
    p.a = 0.1;
    const Profile img = render(p);
    // column near p0 = 0.2 is lit in the middle row, column near 0.8 is dark
    CHECK(img.at(32, 13) > 0.5f);
    CHECK(img.at(32, 50) == 0.0f);
}

TEST_CASE("noiseless pixels lie in [0,1] and the ellipse is symmetric about its centre") {
    Rng rng(5);
    std::uniform_real_distribution<double> ua(0.05, 0.3);
    for (int t = 0; t < 50; ++t) {
        GasketParams p = noiseless();
        p.c0 = 0.5;
        p.a = ua(rng);
        p.b = ua(rng);
        const Profile img = render(p);
        for (float v : img.values()) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
        // the grid is symmetric about 0.5 on both axes
        for (int i = 0; i < 64; i += 7)
            for (int j = 0; j < 64; j += 5) {
                CHECK(img.at(i, j) == doctest::Approx(img.at(63 - i, 63 - j)).epsilon(1e-5));
            }
    }
}

TEST_CASE("in-control centre draws have the configured mean") {
    Rng rng(11);
    const int n = 400;
    const Dataset d = sample_ic(n, ICDistribution{}, rng);
    double sum = 0.0, sum_a = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
        sum += d.truth(i)->c0;
        sum_a += d.truth(i)->a;
    }
    // 4 standard errors of the mean
    CHECK(std::abs(sum / n - 0.5) < 4 * 0.1 / std::sqrt(n));
    CHECK(std::abs(sum_a / n - 0.2) < 4 * 0.025 / std::sqrt(n));
    CHECK(d.name(0) == "ic_00000");
    CHECK(*d.label(0) == kInControlLabel);
    CHECK(d.height() == 64);
    CHECK(d.width() == 64);
}

TEST_CASE("zero variances give identical noiseless samples") {
    ICDistribution dist;
    dist.c0_var = dist.a_var = 0.0;
    GasketParams base = noiseless();
    Rng rng(3);
    const Dataset d = sample_ic(4, dist, rng, base);
    for (std::size_t i = 1; i < d.size(); ++i) CHECK(d[i] == d[0]);
    CHECK(d[0] == render(base));
}

TEST_CASE("same seed gives identical datasets") {
    Rng a(42), b(42), c(43);
    const Dataset x = sample_ic(8, ICDistribution{}, a), y = sample_ic(8, ICDistribution{}, b),
                  z = sample_ic(8, ICDistribution{}, c);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(x[i] == y[i]);
    CHECK_FALSE(x[0] == z[0]);
}

TEST_CASE("null shifts reproduce the in-control sampler") {
    for (ShiftKind kind : {ShiftKind::Location, ShiftKind::Width, ShiftKind::Mean}) {
        Rng a(7), b(7);
        const Dataset ic = sample_ic(5, ICDistribution{}, a);
        const Dataset oc = sample_oc(5, ICDistribution{}, {kind, 0.0}, b);
        for (std::size_t i = 0; i < ic.size(); ++i) CHECK(ic[i] == oc[i]);
        CHECK(*oc.label(0) == 1);
        CHECK(oc.name(0) == to_string(kind) + "_00000");
    }
    Rng a(8), b(8);
    const Dataset ic = sample_ic(5, ICDistribution{}, a);
    const Dataset oc = sample_oc(5, ICDistribution{}, {ShiftKind::Magnitude, 1.0}, b);
    for (std::size_t i = 0; i < ic.size(); ++i) CHECK(ic[i] == oc[i]);
}

TEST_CASE("mean and magnitude shifts transform every pixel") {
    Rng a(9), b(9), c(9);
    const Dataset ic = sample_ic(3, ICDistribution{}, a);
    const Dataset mean = sample_oc(3, ICDistribution{}, {ShiftKind::Mean, 0.5}, b);
    const Dataset mag = sample_oc(3, ICDistribution{}, {ShiftKind::Magnitude, 3.0}, c);
    for (std::size_t i = 0; i < ic.size(); ++i) {
        const auto x = ic[i].values(), y = mean[i].values(), z = mag[i].values();
        for (std::size_t k = 0; k < x.size(); ++k) {
            CHECK(y[k] == doctest::Approx(x[k] + 0.5f).epsilon(1e-6));
            CHECK(z[k] == doctest::Approx(3.0f * x[k]).epsilon(1e-6));
        }
    }
}

TEST_CASE("latent shifts move the drawn factors") {
    Rng a(10), b(10), c(10);
    const Dataset ic = sample_ic(6, ICDistribution{}, a);
    const Dataset loc = sample_oc(6, ICDistribution{}, {ShiftKind::Location, 2.0}, b);
    const Dataset wid = sample_oc(6, ICDistribution{}, {ShiftKind::Width, 3.0}, c);
    for (std::size_t i = 0; i < ic.size(); ++i) {
        CHECK(loc.truth(i)->c0 == doctest::Approx(ic.truth(i)->c0 + 0.2));
        CHECK(loc.truth(i)->a == ic.truth(i)->a);
        CHECK(wid.truth(i)->a == doctest::Approx(ic.truth(i)->a + 0.075));
        CHECK(wid.truth(i)->shift_kind == "width");
        CHECK(wid.truth(i)->delta == 3.0);
    }
}

TEST_CASE("invalid parameters are rejected") {
    Rng rng(0);
    GasketParams p;
    p.a = 0.0;
    const auto g = grid_points(64);
    CHECK_THROWS_AS(render_gasket(p, g, g, rng), InvalidInput);
    p = GasketParams{};
    p.noise_var = -1;
    CHECK_THROWS_AS(render_gasket(p, g, g, rng), InvalidInput);
    const auto short_grid = grid_points(10);
    CHECK_THROWS_AS(render_gasket(GasketParams{}, short_grid, g, rng), InvalidInput);
    ICDistribution bad;
    bad.c0_var = -0.1;
    CHECK_THROWS_AS(sample_ic(2, bad, rng), InvalidInput);
    CHECK_THROWS_AS(sample_ic(0, ICDistribution{}, rng), InvalidInput);
    CHECK_THROWS_AS(parse_shift_kind("tilt"), InvalidInput);
    CHECK(parse_shift_kind("magnitude") == ShiftKind::Magnitude);
}
