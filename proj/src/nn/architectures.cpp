#include "profmon/nn/architectures.hpp"

#include "profmon/errors.hpp"

namespace profmon::nn {
namespace {

LayerSpec activation(Activation act) {
    return act == Activation::ReLU ? LayerSpec::relu() : LayerSpec::leaky_relu(0.2);
}

}  // namespace

std::vector<LayerSpec> conv_encoder(int outputs, Activation act, double dropout) {
    if (outputs < 1) throw InvalidInput("encoder output size must be positive");
    std::vector<LayerSpec> s;
    auto conv = [&](int out, int k, int stride, int pad) {
        if (dropout > 0.0) s.push_back(LayerSpec::dropout(dropout));
        s.push_back(LayerSpec::conv(out, k, stride, pad));
    };
    conv(32, 4, 2, 1);
    s.push_back(activation(act));
    conv(32, 4, 2, 1);
    s.push_back(activation(act));
    conv(64, 4, 2, 1);
    s.push_back(activation(act));
    conv(64, 4, 2, 1);
    s.push_back(activation(act));
    conv(256, 4, 1, 0);
    s.push_back(LayerSpec::dense(256, outputs));
    return s;
}

std::vector<LayerSpec> conv_decoder(int r, Activation act) {
    if (r < 1) throw InvalidInput("latent dimension must be positive");
    std::vector<LayerSpec> s{LayerSpec::dense(r, 256)};
    if (act == Activation::LeakyReLU) s.push_back(activation(act));
    s.push_back(LayerSpec::conv_transpose(64, 4, 1, 0));
    s.push_back(activation(act));
    s.push_back(LayerSpec::conv_transpose(64, 4, 2, 1));
    s.push_back(activation(act));
    s.push_back(LayerSpec::conv_transpose(32, 4, 2, 1));
    s.push_back(activation(act));
    s.push_back(LayerSpec::conv_transpose(32, 4, 2, 1));
    s.push_back(activation(act));
    s.push_back(LayerSpec::conv_transpose(1, 4, 2, 1));
    return s;
}

std::vector<LayerSpec> discriminator(int r) {
    if (r < 1) throw InvalidInput("latent dimension must be positive");
    return {LayerSpec::dense(r, 512), LayerSpec::leaky_relu(0.2), LayerSpec::dense(512, 256),
            LayerSpec::leaky_relu(0.2), LayerSpec::dense(256, 1), LayerSpec::sigmoid()};
}

}  // namespace profmon::nn
