#pragma once

#include "profmon/nn/layer_spec.hpp"
#include "profmon/nn/tensor.hpp"

#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace profmon::nn {

using Rng = std::mt19937_64;

enum class Mode { Train, Eval };

template <typename T>
struct Parameter {
    std::string name;
    Buffer<T> value;
    Buffer<T> grad;
};

// Scratch buffers a layer keeps between its forward and backward pass.
template <typename T>
struct Workspace {
    Buffer<T> col;
    Buffer<T> mask;
};

template <typename T>
class Layer {
public:
    Layer(LayerSpec spec, Shape3 input) : spec_(spec), input_(input), output_(spec.output_shape(input)) {}
    virtual ~Layer() = default;

    virtual std::unique_ptr<Layer> clone() const = 0;

    virtual void forward(const Tensor<T>& in, Tensor<T>& out, Mode mode, Rng* rng, Workspace<T>& ws) const = 0;

    // Accumulates parameter gradients; fills din only when want_input_grad.
    virtual void backward(const Tensor<T>& in, const Tensor<T>& out, const Tensor<T>& dout, Tensor<T>& din,
                          const Workspace<T>& ws, bool want_input_grad) = 0;

    virtual void initialize(Rng&) {}

    std::vector<Parameter<T>>& params() { return params_; }
    const std::vector<Parameter<T>>& params() const { return params_; }

    const LayerSpec& spec() const { return spec_; }
    Shape3 input_shape() const { return input_; }
    Shape3 output_shape() const { return output_; }

protected:
    LayerSpec spec_;
    Shape3 input_;
    Shape3 output_;
    std::vector<Parameter<T>> params_;
};

// Sequential stack of layers with reverse-mode gradients.
//
// forward() records activations so that backward() can follow; infer() is a
// const, recording-free evaluation that is safe to call concurrently on a
// network nobody is mutating.
template <typename T>
class Network {
public:
    Network() = default;
    Network(std::vector<LayerSpec> specs, Shape3 input);

    Network(const Network& other);
    Network& operator=(const Network& other);
    Network(Network&&) noexcept = default;
    Network& operator=(Network&&) noexcept = default;

    // Glorot-uniform kernels, zero biases.
    void initialize(Rng& rng);

    // The returned references stay valid until the next forward/backward call.
    const Tensor<T>& forward(const Tensor<T>& x, Mode mode, Rng* rng = nullptr);
    const Tensor<T>& backward(const Tensor<T>& dout, bool want_input_grad = true);
    Tensor<T> infer(const Tensor<T>& x) const;

    void zero_grad();

    std::vector<Parameter<T>*> parameters();
    std::vector<const Parameter<T>*> parameters() const;
    std::size_t parameter_count() const;

    const std::vector<LayerSpec>& specs() const { return specs_; }
    std::size_t size() const { return layers_.size(); }
    Layer<T>& layer(std::size_t i) { return *layers_[i]; }
    const Layer<T>& layer(std::size_t i) const { return *layers_[i]; }
    Shape3 input_shape() const { return input_; }
    Shape3 output_shape() const;

    // Same architecture and parameters in another precision.
    template <typename U>
    Network<U> cast() const;

private:
    void check_input(const Tensor<T>& x) const;

    std::vector<LayerSpec> specs_;
    Shape3 input_;
    std::vector<std::unique_ptr<Layer<T>>> layers_;

    // Recorded by forward(): activations_[i] is the input of layer i.
    std::vector<Tensor<T>> activations_;
    std::vector<Workspace<T>> workspaces_;
    std::vector<Tensor<T>> gradients_;
    bool recorded_ = false;
};

template <typename T>
template <typename U>
Network<U> Network<T>::cast() const {
    Network<U> net(specs_, input_);
    auto dst = net.parameters();
    auto src = parameters();
    for (std::size_t i = 0; i < dst.size(); ++i) {
        for (std::size_t j = 0; j < src[i]->value.size(); ++j) dst[i]->value[j] = static_cast<U>(src[i]->value[j]);
    }
    return net;
}

// Adam with bias correction.
template <typename T>
class Adam {
public:
    explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8);

    // Applies one update from the gradients stored in the network.
    // Throws TrainingError if any gradient is non-finite.
    void step(Network<T>& net);

    double learning_rate() const { return lr_; }
    std::int64_t steps() const { return t_; }

private:
    double lr_, beta1_, beta2_, eps_;
    std::int64_t t_ = 0;
    std::vector<Buffer<T>> m_, v_;
};

extern template class Network<float>;
extern template class Network<double>;
extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace profmon::nn
