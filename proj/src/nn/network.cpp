#include "profmon/nn/network.hpp"

#include "profmon/errors.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace profmon::nn {

namespace {

// Receptive-field unrolling for channels-last batches. The column matrix has
// one column per output position (b, y, x) of the batch, in that order, and
// K*K*C rows ordered (kh, kw, c). Both helpers work on the column range
// [first, last) so that callers can keep the unrolled block cache-resident.
struct Geometry {
    Shape3 image;  // the side that is unrolled
    int k, s, p;
    int oh, ow;    // output grid of the convolution
};

template <typename T>
void im2col(const T* image, const Geometry& g, std::size_t first, std::size_t last, T* col) {
    const std::size_t chan = static_cast<std::size_t>(g.image.c);
    const std::size_t rows = static_cast<std::size_t>(g.k) * g.k * chan;
    const std::size_t plane = static_cast<std::size_t>(g.oh) * g.ow;
    for (std::size_t j = first; j < last; ++j) {
        const std::size_t b = j / plane;
        const int y = static_cast<int>((j % plane) / g.ow);
        const int x = static_cast<int>(j % g.ow);
        T* dst = col + (j - first) * rows;
        for (int kh = 0; kh < g.k; ++kh) {
            const int iy = y * g.s - g.p + kh;
            for (int kw = 0; kw < g.k; ++kw) {
                const int ix = x * g.s - g.p + kw;
                T* d = dst + (static_cast<std::size_t>(kh) * g.k + kw) * chan;
                if (iy < 0 || iy >= g.image.h || ix < 0 || ix >= g.image.w) {
                    std::fill(d, d + chan, T(0));
                } else {
                    const T* src = image + ((b * g.image.h + iy) * g.image.w + ix) * chan;
                    std::copy(src, src + chan, d);
                }
            }
        }
    }
}

// Adjoint of im2col; accumulates into image.
template <typename T>
void col2im(const T* col, const Geometry& g, std::size_t first, std::size_t last, T* image) {
    const std::size_t chan = static_cast<std::size_t>(g.image.c);
    const std::size_t rows = static_cast<std::size_t>(g.k) * g.k * chan;
    const std::size_t plane = static_cast<std::size_t>(g.oh) * g.ow;
    for (std::size_t j = first; j < last; ++j) {
        const std::size_t b = j / plane;
        const int y = static_cast<int>((j % plane) / g.ow);
        const int x = static_cast<int>(j % g.ow);
        const T* src = col + (j - first) * rows;
        for (int kh = 0; kh < g.k; ++kh) {
            const int iy = y * g.s - g.p + kh;
            if (iy < 0 || iy >= g.image.h) continue;
            for (int kw = 0; kw < g.k; ++kw) {
                const int ix = x * g.s - g.p + kw;
                if (ix < 0 || ix >= g.image.w) continue;
                const T* c = src + (static_cast<std::size_t>(kh) * g.k + kw) * chan;
                T* d = image + ((b * g.image.h + iy) * g.image.w + ix) * chan;
                for (std::size_t ch = 0; ch < chan; ++ch) d[ch] += c[ch];
            }
        }
    }
}

// Columns per block so that an unrolled block stays around 512 KiB.
inline Eigen::Index block_columns(Eigen::Index rows, Eigen::Index total) {
    const Eigen::Index target = std::max<Eigen::Index>(64, (1 << 17) / std::max<Eigen::Index>(rows, 1));
    return std::min(target, total);
}

template <typename T>
Parameter<T> make_param(std::string name, std::size_t size) {
    return Parameter<T>{std::move(name), Buffer<T>(size, T(0)), Buffer<T>(size, T(0))};
}

template <typename T>
void glorot(Buffer<T>& w, double fan_in, double fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (auto& v : w) v = static_cast<T>(dist(rng));
}

template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
class Conv final : public Layer<T> {
public:
    Conv(LayerSpec spec, Shape3 input) : Layer<T>(spec, input) {
        rows_ = static_cast<Eigen::Index>(spec.kernel) * spec.kernel * input.c;
        this->params_.push_back(make_param<T>("weight", static_cast<std::size_t>(spec.out) * rows_));
        this->params_.push_back(make_param<T>("bias", static_cast<std::size_t>(spec.out)));
    }

    std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Conv>(*this); }

    void initialize(Rng& rng) override {
        const double k2 = static_cast<double>(this->spec_.kernel) * this->spec_.kernel;
        glorot(this->params_[0].value, k2 * this->input_.c, k2 * this->spec_.out, rng);
        std::fill(this->params_[1].value.begin(), this->params_[1].value.end(), T(0));
    }

    void forward(const Tensor<T>& in, Tensor<T>& out, Mode, Rng*, Workspace<T>& ws) const override {
        const Geometry g = geometry();
        const Eigen::Index cols = static_cast<Eigen::Index>(in.n) * g.oh * g.ow;
        const Eigen::Index block = block_columns(rows_, cols);
        ws.col.resize(static_cast<std::size_t>(rows_ * block));
        out.resize(in.n, this->output_);
        auto result = out.channel_matrix();
        for (Eigen::Index c0 = 0; c0 < cols; c0 += block) {
            const Eigen::Index width = std::min(block, cols - c0);
            im2col(in.data.data(), g, c0, c0 + width, ws.col.data());
            ConstMatrixMap<T> col(ws.col.data(), rows_, width);
            result.middleCols(c0, width).noalias() = weight() * col;
        }
        result.colwise() += bias();
    }

    void backward(const Tensor<T>& in, const Tensor<T>&, const Tensor<T>& dout, Tensor<T>& din,
                  const Workspace<T>&, bool want_input_grad) override {
        const Geometry g = geometry();
        const Eigen::Index cols = static_cast<Eigen::Index>(in.n) * g.oh * g.ow;
        const Eigen::Index block = block_columns(rows_, cols);
        auto grad = dout.channel_matrix();
        MatrixMap<T> dweight(this->params_[0].grad.data(), this->spec_.out, rows_);
        MatrixMap<T>(this->params_[1].grad.data(), this->spec_.out, 1) += grad.rowwise().sum();
        scratch_.resize(static_cast<std::size_t>(rows_ * block));
        if (want_input_grad) {
            din.resize(in.n, this->input_);
            dcol_.resize(static_cast<std::size_t>(rows_ * block));
        }
        for (Eigen::Index c0 = 0; c0 < cols; c0 += block) {
            const Eigen::Index width = std::min(block, cols - c0);
            im2col(in.data.data(), g, c0, c0 + width, scratch_.data());
            ConstMatrixMap<T> col(scratch_.data(), rows_, width);
            dweight.noalias() += grad.middleCols(c0, width) * col.transpose();
            if (!want_input_grad) continue;
            MatrixMap<T> dcol(dcol_.data(), rows_, width);
            dcol.noalias() = weight().transpose() * grad.middleCols(c0, width);
            col2im(dcol_.data(), g, c0, c0 + width, din.data.data());
        }
    }

private:
    Geometry geometry() const {
        const auto& sp = this->spec_;
        return {this->input_, sp.kernel, sp.stride, sp.padding, this->output_.h, this->output_.w};
    }
    ConstMatrixMap<T> weight() const { return {this->params_[0].value.data(), this->spec_.out, rows_}; }
    Eigen::Map<const Vec<T>> bias() const { return {this->params_[1].value.data(), this->spec_.out}; }

    Eigen::Index rows_ = 0;
    Buffer<T> scratch_, dcol_;
};

template <typename T>
class ConvTranspose final : public Layer<T> {
public:
    ConvTranspose(LayerSpec spec, Shape3 input) : Layer<T>(spec, input) {
        rows_ = static_cast<Eigen::Index>(spec.kernel) * spec.kernel * spec.out;
        this->params_.push_back(make_param<T>("weight", static_cast<std::size_t>(rows_) * input.c));
        this->params_.push_back(make_param<T>("bias", static_cast<std::size_t>(spec.out)));
    }

    std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<ConvTranspose>(*this); }

    void initialize(Rng& rng) override {
        const double k2 = static_cast<double>(this->spec_.kernel) * this->spec_.kernel;
        glorot(this->params_[0].value, k2 * this->input_.c, k2 * this->spec_.out, rng);
        std::fill(this->params_[1].value.begin(), this->params_[1].value.end(), T(0));
    }

    // The forward pass is the input-gradient of a convolution that maps the
    // output geometry back onto the input geometry.
    void forward(const Tensor<T>& in, Tensor<T>& out, Mode, Rng*, Workspace<T>& ws) const override {
        const Geometry g = geometry();
        const Eigen::Index cols = static_cast<Eigen::Index>(in.n) * g.oh * g.ow;
        const Eigen::Index block = block_columns(rows_, cols);
        ws.col.resize(static_cast<std::size_t>(rows_ * block));
        out.resize(in.n, this->output_);
        auto x = in.channel_matrix();
        for (Eigen::Index c0 = 0; c0 < cols; c0 += block) {
            const Eigen::Index width = std::min(block, cols - c0);
            MatrixMap<T> col(ws.col.data(), rows_, width);
            col.noalias() = weight() * x.middleCols(c0, width);
            col2im(ws.col.data(), g, c0, c0 + width, out.data.data());
        }
        out.channel_matrix().colwise() += bias();
    }

    void backward(const Tensor<T>& in, const Tensor<T>&, const Tensor<T>& dout, Tensor<T>& din,
                  const Workspace<T>&, bool want_input_grad) override {
        const Geometry g = geometry();
        const Eigen::Index cols = static_cast<Eigen::Index>(in.n) * g.oh * g.ow;
        const Eigen::Index block = block_columns(rows_, cols);
        auto x = in.channel_matrix();
        MatrixMap<T> dweight(this->params_[0].grad.data(), rows_, this->input_.c);
        MatrixMap<T>(this->params_[1].grad.data(), this->spec_.out, 1) += dout.channel_matrix().rowwise().sum();
        scratch_.resize(static_cast<std::size_t>(rows_ * block));
        if (want_input_grad) din.resize(in.n, this->input_);
        for (Eigen::Index c0 = 0; c0 < cols; c0 += block) {
            const Eigen::Index width = std::min(block, cols - c0);
            im2col(dout.data.data(), g, c0, c0 + width, scratch_.data());
            ConstMatrixMap<T> dcol(scratch_.data(), rows_, width);
            dweight.noalias() += dcol * x.middleCols(c0, width).transpose();
            if (want_input_grad) din.channel_matrix().middleCols(c0, width).noalias() = weight().transpose() * dcol;
        }
    }

private:
    Geometry geometry() const {
        const auto& sp = this->spec_;
        return {this->output_, sp.kernel, sp.stride, sp.padding, this->input_.h, this->input_.w};
    }
    ConstMatrixMap<T> weight() const { return {this->params_[0].value.data(), rows_, this->input_.c}; }
    Eigen::Map<const Vec<T>> bias() const { return {this->params_[1].value.data(), this->spec_.out}; }

    Eigen::Index rows_ = 0;
    Buffer<T> scratch_;
};

template <typename T>
class Dense final : public Layer<T> {
public:
    Dense(LayerSpec spec, Shape3 input) : Layer<T>(spec, input) {
        this->params_.push_back(make_param<T>("weight", static_cast<std::size_t>(spec.out) * spec.in));
        this->params_.push_back(make_param<T>("bias", static_cast<std::size_t>(spec.out)));
    }

    std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Dense>(*this); }

    void initialize(Rng& rng) override {
        glorot(this->params_[0].value, this->spec_.in, this->spec_.out, rng);
        std::fill(this->params_[1].value.begin(), this->params_[1].value.end(), T(0));
    }

    void forward(const Tensor<T>& in, Tensor<T>& out, Mode, Rng*, Workspace<T>&) const override {
        out.resize(in.n, this->output_);
        auto result = out.matrix();
        result.noalias() = weight() * in.matrix();
        result.colwise() += bias();
    }

    void backward(const Tensor<T>& in, const Tensor<T>&, const Tensor<T>& dout, Tensor<T>& din,
                  const Workspace<T>&, bool want_input_grad) override {
        auto g = dout.matrix();
        MatrixMap<T>(this->params_[0].grad.data(), this->spec_.out, this->spec_.in).noalias() +=
            g * in.matrix().transpose();
        MatrixMap<T>(this->params_[1].grad.data(), this->spec_.out, 1) += g.rowwise().sum();
        if (!want_input_grad) return;
        din.resize(in.n, this->input_);
        din.matrix().noalias() = weight().transpose() * g;
    }

private:
    ConstMatrixMap<T> weight() const { return {this->params_[0].value.data(), this->spec_.out, this->spec_.in}; }
    Eigen::Map<const Vec<T>> bias() const { return {this->params_[1].value.data(), this->spec_.out}; }
};

template <typename T>
class Activation final : public Layer<T> {
public:
    using Layer<T>::Layer;

    std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Activation>(*this); }

    void forward(const Tensor<T>& in, Tensor<T>& out, Mode mode, Rng* rng, Workspace<T>& ws) const override {
        out.n = in.n;
        out.shape = in.shape;
        out.data.resize(in.data.size());
        const std::size_t size = in.data.size();
        const T* x = in.data.data();
        T* y = out.data.data();
        switch (this->spec_.kind) {
            case LayerKind::ReLU:
                for (std::size_t i = 0; i < size; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
                break;
            case LayerKind::LeakyReLU: {
                const T a = static_cast<T>(this->spec_.alpha);
                for (std::size_t i = 0; i < size; ++i) y[i] = x[i] >= T(0) ? x[i] : a * x[i];
                break;
            }
            case LayerKind::Sigmoid:
                for (std::size_t i = 0; i < size; ++i) {
                    if (x[i] >= T(0)) {
                        y[i] = T(1) / (T(1) + std::exp(-x[i]));
                    } else {
                        const T e = std::exp(x[i]);
                        y[i] = e / (T(1) + e);
                    }
                }
                break;
            case LayerKind::Dropout: {
                const double p = this->spec_.p;
                if (mode == Mode::Eval || p == 0.0) {
                    ws.mask.clear();
                    std::copy(x, x + size, y);
                    break;
                }
                if (rng == nullptr) throw StateError("dropout in train mode needs a random generator");
                std::bernoulli_distribution keep(1.0 - p);
                const T scale = static_cast<T>(1.0 / (1.0 - p));
                ws.mask.resize(size);
                for (std::size_t i = 0; i < size; ++i) {
                    ws.mask[i] = keep(*rng) ? scale : T(0);
                    y[i] = x[i] * ws.mask[i];
                }
                break;
            }
            default:
                throw StateError("not an elementwise layer: " + this->spec_.str());
        }
    }

    void backward(const Tensor<T>& in, const Tensor<T>& out, const Tensor<T>& dout, Tensor<T>& din,
                  const Workspace<T>& ws, bool want_input_grad) override {
        if (!want_input_grad) return;
        din.n = in.n;
        din.shape = in.shape;
        din.data.resize(in.data.size());
        const std::size_t size = in.data.size();
        const T* x = in.data.data();
        const T* y = out.data.data();
        const T* g = dout.data.data();
        T* d = din.data.data();
        switch (this->spec_.kind) {
            case LayerKind::ReLU:
                for (std::size_t i = 0; i < size; ++i) d[i] = x[i] > T(0) ? g[i] : T(0);
                break;
            case LayerKind::LeakyReLU: {
                const T a = static_cast<T>(this->spec_.alpha);
                for (std::size_t i = 0; i < size; ++i) d[i] = x[i] >= T(0) ? g[i] : a * g[i];
                break;
            }
            case LayerKind::Sigmoid:
                for (std::size_t i = 0; i < size; ++i) d[i] = g[i] * y[i] * (T(1) - y[i]);
                break;
            case LayerKind::Dropout:
                if (ws.mask.empty()) {
                    std::copy(g, g + size, d);
                } else {
                    for (std::size_t i = 0; i < size; ++i) d[i] = g[i] * ws.mask[i];
                }
                break;
            default:
                break;
        }
    }
};

template <typename T>
std::unique_ptr<Layer<T>> make_layer(const LayerSpec& spec, Shape3 input) {
    switch (spec.kind) {
        case LayerKind::Conv: return std::make_unique<Conv<T>>(spec, input);
        case LayerKind::ConvTranspose: return std::make_unique<ConvTranspose<T>>(spec, input);
        case LayerKind::Dense: return std::make_unique<Dense<T>>(spec, input);
        default: return std::make_unique<Activation<T>>(spec, input);
    }
}

}  // namespace

template <typename T>
Network<T>::Network(std::vector<LayerSpec> specs, Shape3 input) : specs_(std::move(specs)), input_(input) {
    if (input.h < 1 || input.w < 1 || input.c < 1) throw ShapeError("network input shape must be positive");
    Shape3 shape = input;
    for (std::size_t i = 0; i < specs_.size(); ++i) {
        try {
            layers_.push_back(make_layer<T>(specs_[i], shape));
        } catch (const Error& e) {
            throw ShapeError("layer " + std::to_string(i) + " (" + specs_[i].str() + "): " + e.what());
        }
        shape = layers_.back()->output_shape();
    }
}

template <typename T>
Network<T>::Network(const Network& other) : specs_(other.specs_), input_(other.input_) {
    for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

template <typename T>
Network<T>& Network<T>::operator=(const Network& other) {
    if (this != &other) {
        Network copy(other);
        *this = std::move(copy);
    }
    return *this;
}

template <typename T>
void Network<T>::initialize(Rng& rng) {
    for (auto& l : layers_) l->initialize(rng);
}

template <typename T>
Shape3 Network<T>::output_shape() const {
    return layers_.empty() ? input_ : layers_.back()->output_shape();
}

template <typename T>
void Network<T>::check_input(const Tensor<T>& x) const {
    if (!(x.shape == input_) || x.data.size() != static_cast<std::size_t>(x.n) * input_.size()) {
        // A flat tensor with the right feature count is accepted for any input shape.
        if (x.features() == input_.size() && x.data.size() == static_cast<std::size_t>(x.n) * input_.size()) return;
        throw ShapeError("layer 0: input " + x.shape.str() + " does not match network input " + input_.str());
    }
}

template <typename T>
const Tensor<T>& Network<T>::forward(const Tensor<T>& x, Mode mode, Rng* rng) {
    check_input(x);
    activations_.resize(layers_.size() + 1);
    workspaces_.resize(layers_.size());
    Tensor<T>& first = activations_[0];
    first.n = x.n;
    first.shape = input_;
    first.data.assign(x.data.begin(), x.data.end());
    for (std::size_t i = 0; i < layers_.size(); ++i)
        layers_[i]->forward(activations_[i], activations_[i + 1], mode, rng, workspaces_[i]);
    recorded_ = true;
    return activations_.back();
}

template <typename T>
const Tensor<T>& Network<T>::backward(const Tensor<T>& dout, bool want_input_grad) {
    if (!recorded_) throw StateError("backward called before forward");
    const Tensor<T>& y = activations_.back();
    if (dout.n != y.n || dout.data.size() != y.data.size())
        throw ShapeError("layer " + std::to_string(layers_.size()) + ": upstream gradient shape mismatch");
    gradients_.resize(layers_.size() + 1);
    Tensor<T>& last = gradients_.back();
    last.n = dout.n;
    last.shape = y.shape;
    last.data.assign(dout.data.begin(), dout.data.end());
    for (std::size_t i = layers_.size(); i-- > 0;) {
        const bool want = i > 0 || want_input_grad;
        layers_[i]->backward(activations_[i], activations_[i + 1], gradients_[i + 1], gradients_[i], workspaces_[i],
                             want);
    }
    if (!want_input_grad) gradients_[0] = Tensor<T>();
    return gradients_[0];
}

template <typename T>
Tensor<T> Network<T>::infer(const Tensor<T>& x) const {
    check_input(x);
    Tensor<T> a(x.n, input_, x.data);
    Tensor<T> b;
    Workspace<T> ws;
    for (const auto& l : layers_) {
        l->forward(a, b, Mode::Eval, nullptr, ws);
        std::swap(a, b);
    }
    return a;
}

template <typename T>
void Network<T>::zero_grad() {
    for (auto& l : layers_)
        for (auto& p : l->params()) std::fill(p.grad.begin(), p.grad.end(), T(0));
}

template <typename T>
std::vector<Parameter<T>*> Network<T>::parameters() {
    std::vector<Parameter<T>*> out;
    for (auto& l : layers_)
        for (auto& p : l->params()) out.push_back(&p);
    return out;
}

template <typename T>
std::vector<const Parameter<T>*> Network<T>::parameters() const {
    std::vector<const Parameter<T>*> out;
    for (const auto& l : layers_)
        for (const auto& p : l->params()) out.push_back(&p);
    return out;
}

template <typename T>
std::size_t Network<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto* p : parameters()) n += p->value.size();
    return n;
}

template <typename T>
Adam<T>::Adam(double learning_rate, double beta1, double beta2, double epsilon)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon) {
    if (!(learning_rate > 0.0)) throw InvalidInput("learning rate must be positive");
}

template <typename T>
void Adam<T>::step(Network<T>& net) {
    auto params = net.parameters();
    if (m_.empty() && t_ == 0) {
        for (auto* p : params) {
            m_.emplace_back(p->value.size(), T(0));
            v_.emplace_back(p->value.size(), T(0));
        }
    }
    if (m_.size() != params.size())
        throw InvalidInput("optimizer state does not match the network's parameter list");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (m_[i].size() != params[i]->grad.size())
            throw InvalidInput("gradient shape mismatch for parameter " + params[i]->name);
        for (std::size_t j = 0; j < params[i]->grad.size(); ++j) {
            if (!std::isfinite(static_cast<double>(params[i]->grad[j]))) {
                std::ostringstream os;
                os << "non-finite gradient in parameter #" << i << " (" << params[i]->name << ") at index " << j
                   << " after " << t_ << " steps";
                throw TrainingError(os.str());
            }
        }
    }
    ++t_;
    const T b1 = static_cast<T>(beta1_), b2 = static_cast<T>(beta2_);
    const T c1 = static_cast<T>(1.0 / (1.0 - std::pow(beta1_, static_cast<double>(t_))));
    const T c2 = static_cast<T>(1.0 / (1.0 - std::pow(beta2_, static_cast<double>(t_))));
    const T lr = static_cast<T>(lr_), eps = static_cast<T>(eps_);
    for (std::size_t i = 0; i < params.size(); ++i) {
        T* w = params[i]->value.data();
        const T* g = params[i]->grad.data();
        T* m = m_[i].data();
        T* v = v_[i].data();
        const std::size_t n = m_[i].size();
        for (std::size_t j = 0; j < n; ++j) {
            m[j] = b1 * m[j] + (T(1) - b1) * g[j];
            v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
            w[j] -= lr * (m[j] * c1) / (std::sqrt(v[j] * c2) + eps);
        }
    }
}

template class Network<float>;
template class Network<double>;
template class Adam<float>;
template class Adam<double>;

}  // namespace profmon::nn
