#include "helpers.hpp"

#include "profmon/errors.hpp"
#include "profmon/profile.hpp"

#include <doctest.h>

#include <algorithm>
#include <random>

using namespace profmon;

namespace {

Dataset numbered(int n) {
    Dataset d;
    for (int i = 0; i < n; ++i) d.add(Profile(1, 1, {static_cast<float>(i)}), "s" + std::to_string(i));
    return d;
}

std::vector<float> contents(const Dataset& d) {
    std::vector<float> v;
    for (std::size_t i = 0; i < d.size(); ++i) v.push_back(d[i].at(0, 0));
    return v;
}

}  // namespace

TEST_CASE("partition sizes follow the floor rule") {
    const SplitSpec split{0.6, 0.2, 0.2, 7};
    auto p = partition(numbered(10), split);
    CHECK(p.train.size() == 6);
    CHECK(p.validation.size() == 2);
    CHECK(p.test.size() == 2);

    p = partition(numbered(11), split);
    CHECK(p.train.size() == 7);
    CHECK(p.validation.size() == 2);
    CHECK(p.test.size() == 2);

    p = partition(numbered(256), split);
    CHECK(p.train.size() == 154);
    CHECK(p.validation.size() == 51);
    CHECK(p.test.size() == 51);

    p = partition(numbered(768), {1.0 / 3, 1.0 / 3, 1.0 / 3, 0});
    CHECK(p.train.size() == 256);
    CHECK(p.validation.size() == 256);
    CHECK(p.test.size() == 256);
}

TEST_CASE("partition is deterministic in the seed") {
    const auto data = numbered(50);
    const auto a = partition(data, {0.6, 0.2, 0.2, 3});
    const auto b = partition(data, {0.6, 0.2, 0.2, 3});
    CHECK(contents(a.train) == contents(b.train));
    CHECK(contents(a.validation) == contents(b.validation));
    CHECK(contents(a.test) == contents(b.test));
    const auto c = partition(data, {0.6, 0.2, 0.2, 4});
    CHECK(contents(a.train) != contents(c.train));
}

TEST_CASE("partition is a bijection for random sizes and fractions") {
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<int> size(1, 200);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = size(rng);
        double a = u(rng), b = u(rng) * (1.0 - a);
        const SplitSpec split{1.0 - a - b, a, b, rng()};
        const auto p = partition(numbered(n), split);
        auto all = contents(p.train);
        for (float v : contents(p.validation)) all.push_back(v);
        for (float v : contents(p.test)) all.push_back(v);
        std::sort(all.begin(), all.end());
        std::vector<float> expected(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) expected[static_cast<std::size_t>(i)] = static_cast<float>(i);
        REQUIRE(all == expected);
        CHECK(p.validation.size() == static_cast<std::size_t>(std::floor(n * a + 1e-9)));
    }
}

TEST_CASE("partition rejects empty data and bad fractions") {
    CHECK_THROWS_AS(partition(Dataset{}, {0.6, 0.2, 0.2, 0}), InvalidInput);
    CHECK_THROWS_AS(partition(numbered(5), {0.6, 0.2, 0.3, 0}), InvalidInput);
    CHECK_THROWS_AS(partition(numbered(5), {1.2, -0.1, -0.1, 0}), InvalidInput);
}

TEST_CASE("flatten is row-major") {
    const Profile p(2, 2, {1, 2, 3, 4});
    CHECK(p.at(0, 1) == 2.0f);
    CHECK(p.at(1, 0) == 3.0f);
    CHECK(flatten(p) == std::vector<float>{1, 2, 3, 4});
    CHECK(unflatten(flatten(p), 2, 2) == p);
}

TEST_CASE("unflatten rejects a length mismatch") {
    const std::vector<float> v{1, 2, 3, 4, 5};
    CHECK_THROWS_AS(unflatten(v, 2, 2), InvalidInput);
}

TEST_CASE("flatten and unflatten are inverse for all shapes") {
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<int> dim(1, 17);
    std::normal_distribution<float> val;
    for (int trial = 0; trial < 100; ++trial) {
        const int h = dim(rng), w = dim(rng);
        std::vector<float> v(static_cast<std::size_t>(h * w));
        for (auto& x : v) x = val(rng);
        const Profile p = unflatten(v, h, w);
        CHECK(flatten(p) == v);
        CHECK(unflatten(flatten(p), h, w) == p);
    }
}

TEST_CASE("profiles reject non-finite intensities") {
    CHECK_THROWS_AS(Profile(1, 2, {0.0f, std::numeric_limits<float>::quiet_NaN()}), InvalidInput);
    CHECK_THROWS_AS(Profile(1, 1, {std::numeric_limits<float>::infinity()}), InvalidInput);
}

TEST_CASE("datasets keep one shape") {
    Dataset d;
    d.add(Profile(2, 2, {0, 0, 0, 0}), "a");
    CHECK_THROWS_AS(d.add(Profile(1, 4, {0, 0, 0, 0}), "b"), InvalidInput);
    const Eigen::MatrixXd m = d.matrix();
    CHECK(m.rows() == 4);
    CHECK(m.cols() == 1);
}
