#pragma once

#include <Eigen/Core>
#include <Eigen/StdVector>

#include <cstddef>
#include <string>
#include <vector>

namespace profmon::nn {

// Per-sample activation shape. Activations are stored channels-last, so a
// batch is laid out as [n][h][w][c] and a fully connected activation is (1, 1, c).
struct Shape3 {
    int h = 1;
    int w = 1;
    int c = 1;

    std::size_t size() const { return static_cast<std::size_t>(h) * w * c; }
    friend bool operator==(const Shape3&, const Shape3&) = default;
    std::string str() const {
        return std::to_string(h) + "x" + std::to_string(w) + "x" + std::to_string(c);
    }
};

// Storage aligned for the widest vector unit so GEMM kernels see the same
// alignment on every run and results are bitwise reproducible.
template <typename T>
using Buffer = std::vector<T, Eigen::aligned_allocator<T>>;

template <typename T>
using MatrixMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>>;

template <typename T>
struct Tensor {
    int n = 0;
    Shape3 shape;
    Buffer<T> data;

    Tensor() = default;
    Tensor(int batch, Shape3 s) : n(batch), shape(s), data(static_cast<std::size_t>(batch) * s.size()) {}
    Tensor(int batch, Shape3 s, Buffer<T> values) : n(batch), shape(s), data(std::move(values)) {}

    void resize(int batch, Shape3 s) {
        n = batch;
        shape = s;
        data.assign(static_cast<std::size_t>(batch) * s.size(), T(0));
    }

    std::size_t features() const { return shape.size(); }

    // One column per sample.
    MatrixMap<T> matrix() { return {data.data(), static_cast<Eigen::Index>(features()), n}; }
    ConstMatrixMap<T> matrix() const { return {data.data(), static_cast<Eigen::Index>(features()), n}; }

    // One column per spatial position of every sample; rows are channels.
    MatrixMap<T> channel_matrix() {
        return {data.data(), shape.c, static_cast<Eigen::Index>(n) * shape.h * shape.w};
    }
    ConstMatrixMap<T> channel_matrix() const {
        return {data.data(), shape.c, static_cast<Eigen::Index>(n) * shape.h * shape.w};
    }

    T* sample(int i) { return data.data() + static_cast<std::size_t>(i) * features(); }
    const T* sample(int i) const { return data.data() + static_cast<std::size_t>(i) * features(); }
};

}  // namespace profmon::nn
