#pragma once

#include "profmon/nn/layer_spec.hpp"

#include <vector>

namespace profmon::nn {

enum class Activation { ReLU, LeakyReLU };

// Convolutional encoder for 64x64x1 inputs ending in FC(256, outputs).
// dropout > 0 inserts a dropout layer right before every convolution.
std::vector<LayerSpec> conv_encoder(int outputs, Activation act, double dropout = 0.0);

// FC(r,256) followed by transposed convolutions back to 64x64x1, linear output.
std::vector<LayerSpec> conv_decoder(int r, Activation act);

// FC(r,512) - LR - FC(512,256) - LR - FC(256,1) - S().
std::vector<LayerSpec> discriminator(int r);

}  // namespace profmon::nn
