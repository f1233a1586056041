#include "helpers.hpp"

#include "profmon/errors.hpp"
#include "profmon/nn/architectures.hpp"
#include "profmon/nn/network.hpp"
#include "profmon/nn/serialize.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace profmon;
using namespace profmon::nn;

namespace {

Tensor<double> random_tensor(int n, Shape3 s, Rng& rng, double scale = 1.0) {
    Tensor<double> t(n, s);
    std::normal_distribution<double> d(0.0, scale);
    for (auto& v : t.data) v = d(rng);
    return t;
}

// Keeps inputs away from the activation kink so central differences stay valid.
void push_from_zero(Tensor<double>& t) {
    for (auto& v : t.data)
        if (std::abs(v) < 0.05) v = v < 0 ? -0.05 - v : 0.05 + v;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-7}); }

// Loss L = <forward(x), R>. Returns the max relative error over parameters and inputs.
double gradient_check(Network<double>& net, Tensor<double> x, std::uint64_t seed, Mode mode = Mode::Eval) {
    Rng rng(seed + 1);
    const Tensor<double> R = random_tensor(x.n, net.output_shape(), rng);
    auto loss = [&]() {
        Rng r(seed);
        const auto& y = net.forward(x, mode, &r);
        double s = 0.0;
        for (std::size_t i = 0; i < y.data.size(); ++i) s += y.data[i] * R.data[i];
        return s;
    };
    net.zero_grad();
    loss();
    const Tensor<double> dx = net.backward(R, true);
    std::vector<Buffer<double>> analytic;
    for (auto* p : net.parameters()) analytic.push_back(p->grad);

    const double h = 1e-6;
    double worst = 0.0;
    auto params = net.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
        for (std::size_t j = 0; j < params[i]->value.size(); ++j) {
            const double saved = params[i]->value[j];
            params[i]->value[j] = saved + h;
            const double up = loss();
            params[i]->value[j] = saved - h;
            const double down = loss();
            params[i]->value[j] = saved;
            worst = std::max(worst, rel_err(analytic[i][j], (up - down) / (2 * h)));
        }
    }
    for (std::size_t j = 0; j < x.data.size(); ++j) {
        const double saved = x.data[j];
        x.data[j] = saved + h;
        const double up = loss();
        x.data[j] = saved - h;
        const double down = loss();
        x.data[j] = saved;
        worst = std::max(worst, rel_err(dx.data[j], (up - down) / (2 * h)));
    }
    return worst;
}

Network<double> make_net(const std::string& arch, Shape3 in, std::uint64_t seed = 3) {
    Network<double> net(parse_architecture(arch), in);
    Rng rng(seed);
    net.initialize(rng);
    // nonzero biases so their gradients are exercised on a generic point
    std::normal_distribution<double> d(0.0, 0.1);
    for (auto* p : net.parameters())
        if (p->name == "bias")
            for (auto& v : p->value) v = d(rng);
    return net;
}

}  // namespace

TEST_CASE("layer output shapes follow the convolution arithmetic") {
    CHECK(LayerSpec::conv(32, 4, 2, 1).output_shape({64, 64, 1}) == Shape3{32, 32, 32});
    CHECK(LayerSpec::conv(256, 4, 1, 0).output_shape({4, 4, 64}) == Shape3{1, 1, 256});
    CHECK(LayerSpec::conv_transpose(64, 4, 1, 0).output_shape({1, 1, 256}) == Shape3{4, 4, 64});
    CHECK(LayerSpec::conv_transpose(1, 4, 2, 1).output_shape({32, 32, 32}) == Shape3{64, 64, 1});
    CHECK(LayerSpec::dense(256, 8).output_shape({1, 1, 256}) == Shape3{1, 1, 8});
    CHECK(LayerSpec::dense(256, 8).output_shape({2, 2, 64}) == Shape3{1, 1, 8});
    CHECK_THROWS_AS(LayerSpec::dense(10, 8).output_shape({1, 1, 9}), ShapeError);
    CHECK_THROWS_AS(LayerSpec::conv(4, 5, 1, 0).output_shape({3, 3, 1}), ShapeError);
    CHECK_THROWS_AS(LayerSpec::conv(4, 0, 1, 0).validate(), InvalidInput);
    CHECK_THROWS_AS(LayerSpec::dropout(1.0).validate(), InvalidInput);
    CHECK_THROWS_AS(LayerSpec::leaky_relu(0.0).validate(), InvalidInput);
}

TEST_CASE("architecture strings parse and print symmetrically") {
    const auto layers = parse_architecture("C(32,4,2,1) - LR(0.2) - D(0.1) - FC(256,8) - R() - S() - CT(1,4,2,1)");
    REQUIRE(layers.size() == 7);
    CHECK(layers[0] == LayerSpec::conv(32, 4, 2, 1));
    CHECK(layers[1].alpha == 0.2);
    CHECK(layers[2].p == 0.1);
    CHECK(layers[3] == LayerSpec::dense(256, 8));
    CHECK(layers[6].kind == LayerKind::ConvTranspose);
    CHECK(parse_architecture(architecture_str(layers)) == layers);
    CHECK_THROWS_AS(parse_layer("Q(1)"), InvalidInput);
    CHECK_THROWS_AS(parse_layer("C(1,2)"), InvalidInput);
    CHECK_THROWS_AS(parse_layer("FC(2.5,3)"), InvalidInput);
    CHECK_THROWS_AS(parse_layer("C(32,4,2"), InvalidInput);
}

TEST_CASE("table networks map 64x64 profiles to codes and back") {
    const Network<float> enc(conv_encoder(8, Activation::ReLU), {64, 64, 1});
    CHECK(enc.output_shape() == Shape3{1, 1, 8});
    const Network<float> dec(conv_decoder(4, Activation::LeakyReLU), {1, 1, 4});
    CHECK(dec.output_shape() == Shape3{64, 64, 1});
    CHECK(dec.specs()[1].kind == LayerKind::LeakyReLU);
    const Network<float> relu_dec(conv_decoder(4, Activation::ReLU), {1, 1, 4});
    CHECK(relu_dec.specs()[1].kind == LayerKind::ConvTranspose);
    const Network<float> disc(discriminator(4), {1, 1, 4});
    CHECK(disc.output_shape() == Shape3{1, 1, 1});
    CHECK(disc.specs().back().kind == LayerKind::Sigmoid);
    const auto dropped = conv_encoder(8, Activation::ReLU, 0.2);
    int dropouts = 0;
    for (const auto& s : dropped) dropouts += s.kind == LayerKind::Dropout;
    CHECK(dropouts == 5);
    CHECK_THROWS_AS(Network<float>(conv_encoder(8, Activation::ReLU), {32, 32, 1}), ShapeError);
}

TEST_CASE("elementwise activations on known values") {
    Network<double> relu(parse_architecture("R()"), {1, 1, 4});
    Network<double> lr(parse_architecture("LR(0.2)"), {1, 1, 4});
    Network<double> sig(parse_architecture("S()"), {1, 1, 4});
    const Tensor<double> x(1, {1, 1, 4}, {-2.0, -0.5, 0.0, 3.0});
    CHECK(relu.infer(x).data == Buffer<double>{0.0, 0.0, 0.0, 3.0});
    const auto y = lr.infer(x).data;
    CHECK(y[0] == doctest::Approx(-0.4));
    CHECK(y[1] == doctest::Approx(-0.1));
    CHECK(y[3] == 3.0);
    const auto s = sig.infer(x).data;
    CHECK(s[2] == 0.5);
    CHECK(s[0] == doctest::Approx(1.0 / (1.0 + std::exp(2.0))));
    const Tensor<double> extreme(1, {1, 1, 4}, {-800.0, 800.0, -40.0, 40.0});
    for (double v : sig.infer(extreme).data) CHECK(std::isfinite(v));
}

TEST_CASE("dense weight gradient is the outer product of upstream gradient and input") {
    Network<double> net(parse_architecture("FC(3,2)"), {1, 1, 3});
    const Tensor<double> x(1, {1, 1, 3}, {1.0, 2.0, -1.0});
    net.forward(x, Mode::Train);
    net.zero_grad();
    net.forward(x, Mode::Train);
    net.backward(Tensor<double>(1, {1, 1, 2}, {0.5, -3.0}));
    const auto& g = net.parameters()[0]->grad;  // column-major out x in
    const double expected[2][3] = {{0.5, 1.0, -0.5}, {-3.0, -6.0, 3.0}};
    for (int o = 0; o < 2; ++o)
        for (int i = 0; i < 3; ++i) CHECK(g[static_cast<std::size_t>(i * 2 + o)] == expected[o][i]);
    CHECK(net.parameters()[1]->grad == Buffer<double>{0.5, -3.0});
}

TEST_CASE("finite-difference gradients for every layer kind") {
    Rng rng(17);
    SUBCASE("convolution") {
        auto net = make_net("C(3,3,2,1)", {7, 6, 2});
        CHECK(gradient_check(net, random_tensor(2, {7, 6, 2}, rng), 1) < 1e-3);
        auto valid = make_net("C(4,4,1,0)", {4, 4, 3});
        CHECK(gradient_check(valid, random_tensor(2, {4, 4, 3}, rng), 2) < 1e-3);
    }
    SUBCASE("transposed convolution") {
        auto net = make_net("CT(2,4,2,1)", {3, 4, 3});
        CHECK(gradient_check(net, random_tensor(2, {3, 4, 3}, rng), 3) < 1e-3);
        auto grow = make_net("CT(3,4,1,0)", {1, 1, 5});
        CHECK(gradient_check(grow, random_tensor(3, {1, 1, 5}, rng), 4) < 1e-3);
    }
    SUBCASE("fully connected") {
        auto net = make_net("FC(12,5)", {2, 2, 3});
        CHECK(gradient_check(net, random_tensor(3, {2, 2, 3}, rng), 5) < 1e-3);
    }
    SUBCASE("ReLU") {
        auto net = make_net("R()", {2, 3, 2});
        auto x = random_tensor(2, {2, 3, 2}, rng);
        push_from_zero(x);
        CHECK(gradient_check(net, x, 6) < 1e-3);
    }
    SUBCASE("leaky ReLU") {
        auto net = make_net("LR(0.2)", {2, 3, 2});
        auto x = random_tensor(2, {2, 3, 2}, rng);
        push_from_zero(x);
        CHECK(gradient_check(net, x, 7) < 1e-3);
    }
    SUBCASE("sigmoid") {
        auto net = make_net("S()", {1, 1, 9});
        CHECK(gradient_check(net, random_tensor(2, {1, 1, 9}, rng, 3.0), 8) < 1e-3);
    }
    SUBCASE("dropout with a fixed mask") {
        auto net = make_net("D(0.3)", {2, 2, 4});
        CHECK(gradient_check(net, random_tensor(2, {2, 2, 4}, rng), 9, Mode::Train) < 1e-3);
    }
    SUBCASE("stacked network") {
        auto net = make_net("C(4,4,2,1) - LR(0.2) - C(3,2,1,0) - R() - FC(27,4) - S() - FC(4,8) - LR(0.2) - CT(2,2,2,0)",
                            {8, 8, 1});
        auto x = random_tensor(2, {8, 8, 1}, rng);
        CHECK(gradient_check(net, x, 10) < 1e-3);
    }
}

TEST_CASE("zero upstream gradient gives zero parameter and input gradients") {
    Rng rng(1);
    auto net = make_net("C(2,3,1,1) - R() - FC(32,3)", {4, 4, 1});
    const auto x = random_tensor(2, {4, 4, 1}, rng);
    net.zero_grad();
    net.forward(x, Mode::Train);
    const auto& dx = net.backward(Tensor<double>(2, {1, 1, 3}));
    for (double v : dx.data) CHECK(v == 0.0);
    for (auto* p : net.parameters())
        for (double g : p->grad) CHECK(g == 0.0);
}

TEST_CASE("gradients accumulate until zero_grad") {
    Rng rng(2);
    auto net = make_net("FC(3,2)", {1, 1, 3});
    const auto x = random_tensor(1, {1, 1, 3}, rng);
    const Tensor<double> up(1, {1, 1, 2}, {1.0, 1.0});
    net.zero_grad();
    net.forward(x, Mode::Train);
    net.backward(up);
    const auto once = net.parameters()[0]->grad;
    net.forward(x, Mode::Train);
    net.backward(up);
    for (std::size_t i = 0; i < once.size(); ++i) CHECK(net.parameters()[0]->grad[i] == doctest::Approx(2 * once[i]));
    net.zero_grad();
    for (double g : net.parameters()[0]->grad) CHECK(g == 0.0);
}

TEST_CASE("misuse raises typed errors") {
    Network<double> net(parse_architecture("FC(3,2)"), {1, 1, 3});
    CHECK_THROWS_AS(net.backward(Tensor<double>(1, {1, 1, 2})), StateError);
    CHECK_THROWS_AS(net.forward(Tensor<double>(1, {1, 1, 4}), Mode::Eval), ShapeError);
    net.forward(Tensor<double>(1, {1, 1, 3}), Mode::Eval);
    CHECK_THROWS_AS(net.backward(Tensor<double>(1, {1, 1, 3})), ShapeError);
    Network<double> drop(parse_architecture("D(0.5)"), {1, 1, 3});
    CHECK_THROWS_AS(drop.forward(Tensor<double>(1, {1, 1, 3}), Mode::Train, nullptr), StateError);
}

TEST_CASE("dropout preserves the expectation and is the identity in eval mode") {
    Network<double> net(parse_architecture("D(0.4)"), {1, 1, 50});
    const Tensor<double> x(1, {1, 1, 50}, Buffer<double>(50, 1.0));
    Rng rng(4);
    double sum = 0.0;
    int zeros = 0;
    const int passes = 10000;
    for (int k = 0; k < passes; ++k) {
        const auto& y = net.forward(x, Mode::Train, &rng);
        for (double v : y.data) {
            sum += v;
            zeros += v == 0.0;
        }
    }
    const double n = 50.0 * passes;
    CHECK(std::abs(sum / n - 1.0) < 0.02);
    CHECK(std::abs(zeros / n - 0.4) < 0.02);
    CHECK(net.forward(x, Mode::Eval).data == x.data);
}

TEST_CASE("eval mode and infer are pure") {
    Rng rng(5);
    auto net = make_net("D(0.5) - C(2,3,1,1) - LR(0.2) - FC(32,3)", {4, 4, 1});
    const auto x = random_tensor(3, {4, 4, 1}, rng);
    const auto a = net.infer(x).data;
    const auto b = net.forward(x, Mode::Eval).data;
    const auto c = net.infer(x).data;
    CHECK(a == b);
    CHECK(a == c);
    // batch composition does not change a sample's output
    Tensor<double> single(1, {4, 4, 1}, Buffer<double>(x.sample(1), x.sample(1) + 16));
    const auto s = net.infer(single).data;
    for (int k = 0; k < 3; ++k) CHECK(s[static_cast<std::size_t>(k)] == doctest::Approx(a[3 + static_cast<std::size_t>(k)]).epsilon(1e-12));
}

TEST_CASE("Adam first step moves each parameter by the learning rate") {
    Network<double> net(parse_architecture("FC(2,1)"), {1, 1, 2});
    auto params = net.parameters();
    params[0]->value = {1.0, -2.0};
    params[0]->grad = {3.0, -0.001};
    params[1]->value = {0.5};
    params[1]->grad = {0.0};
    Adam<double> opt(0.1);
    opt.step(net);
    CHECK(params[0]->value[0] == doctest::Approx(0.9).epsilon(1e-6));
    CHECK(params[0]->value[1] == doctest::Approx(-1.9).epsilon(1e-4));
    CHECK(params[1]->value[0] == 0.5);
    CHECK(opt.steps() == 1);
    CHECK_THROWS_AS(Adam<double>(0.0), InvalidInput);
}

TEST_CASE("Adam rejects non-finite gradients and is deterministic") {
    auto run = [](std::uint64_t seed) {
        auto net = make_net("FC(4,3) - R() - FC(3,1)", {1, 1, 4}, seed);
        Rng rng(seed);
        const auto x = random_tensor(8, {1, 1, 4}, rng);
        Adam<double> opt(0.01);
        for (int k = 0; k < 20; ++k) {
            net.zero_grad();
            const auto y = net.forward(x, Mode::Train).data;
            net.backward(Tensor<double>(8, {1, 1, 1}, y), false);
            opt.step(net);
        }
        return net.parameters()[0]->value;
    };
    CHECK(run(3) == run(3));
    auto net = make_net("FC(2,1)", {1, 1, 2});
    net.parameters()[0]->grad[1] = std::nan("");
    Adam<double> opt(0.1);
    CHECK_THROWS_AS(opt.step(net), TrainingError);
}

TEST_CASE("networks round-trip through PWNET1 and between precisions") {
    testing::TempDir dir("pwnet");
    Network<float> net(conv_encoder(8, Activation::LeakyReLU, 0.1), {64, 64, 1});
    Rng rng(6);
    net.initialize(rng);
    save_network(dir / "enc.pwnet", net);
    const Network<float> back = load_network<float>(dir / "enc.pwnet");
    CHECK(back.specs() == net.specs());
    CHECK(back.input_shape() == net.input_shape());
    for (std::size_t i = 0; i < net.parameters().size(); ++i)
        CHECK(back.parameters()[i]->value == net.parameters()[i]->value);

    const Network<double> wide = load_network<double>(dir / "enc.pwnet");
    CHECK(static_cast<float>(wide.parameters()[0]->value[5]) == net.parameters()[0]->value[5]);
    std::stringstream ss;
    save_network(ss, wide);
    const Network<float> narrow = load_network<float>(ss);
    CHECK(narrow.parameters()[0]->value == net.parameters()[0]->value);

    std::stringstream bad("PWNET9 garbage");
    CHECK_THROWS_AS(load_network<float>(bad), CompatibilityError);
}
