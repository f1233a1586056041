#pragma once

#include "profmon/nn/tensor.hpp"

#include <string>
#include <string_view>
#include <vector>

namespace profmon::nn {

enum class LayerKind { Conv, ConvTranspose, Dense, ReLU, LeakyReLU, Sigmoid, Dropout };

// Textual form follows the usual shorthand: C(O,K,S,P), CT(O,K,S,P), FC(I,O),
// R(), LR(alpha), S(), D(p).
struct LayerSpec {
    LayerKind kind = LayerKind::ReLU;
    int in = 0;       // FC input features
    int out = 0;      // output channels (C, CT) or features (FC)
    int kernel = 0;
    int stride = 1;
    int padding = 0;
    double alpha = 0.0;  // LR negative slope
    double p = 0.0;      // dropout probability

    static LayerSpec conv(int out, int kernel, int stride, int padding);
    static LayerSpec conv_transpose(int out, int kernel, int stride, int padding);
    static LayerSpec dense(int in, int out);
    static LayerSpec relu();
    static LayerSpec leaky_relu(double alpha);
    static LayerSpec sigmoid();
    static LayerSpec dropout(double p);

    bool trainable() const {
        return kind == LayerKind::Conv || kind == LayerKind::ConvTranspose || kind == LayerKind::Dense;
    }

    // Throws InvalidInput when K,S < 1, P < 0, p outside [0,1) or alpha <= 0.
    void validate() const;

    // Output shape for a given input shape; throws ShapeError on mismatch.
    Shape3 output_shape(const Shape3& input) const;

    std::string str() const;

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

LayerSpec parse_layer(std::string_view text);

// "C(32,4,2,1) - R() - FC(256,8)"; separators are '-' between layers.
std::vector<LayerSpec> parse_architecture(std::string_view text);
std::string architecture_str(const std::vector<LayerSpec>& layers);

}  // namespace profmon::nn
