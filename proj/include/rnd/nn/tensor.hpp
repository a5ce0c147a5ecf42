#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace rnd::nn {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

/// A named trainable tensor with its gradient accumulator.
template <typename T>
struct Param {
    std::string name;
    std::vector<int> shape;
    std::vector<T> value;
    std::vector<T> grad;
    bool trainable = true;

    Param() = default;
    Param(std::string n, std::vector<int> s) : name(std::move(n)), shape(std::move(s)) {
        std::size_t count = 1;
        for (int d : shape) count *= static_cast<std::size_t>(d);
        value.assign(count, T(0));
        grad.assign(count, T(0));
    }

    std::size_t size() const { return value.size(); }
    void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

/// Batched feature maps stored as [channel][row][col][sample].
///
/// Channel outermost lets a convolution write its GEMM result in place;
/// sample innermost turns im2col into contiguous block copies.
template <typename T>
struct Batch {
    int channels = 0;
    int samples = 0;
    int height = 0;
    int width = 0;
    std::vector<T> data;

    Batch() = default;
    Batch(int c, int n, int h, int w)
        : channels(c), samples(n), height(h), width(w),
          data(static_cast<std::size_t>(c) * n * h * w, T(0)) {}

    std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
    std::size_t columns() const { return static_cast<std::size_t>(samples) * plane(); }

    std::size_t index(int c, int n, int y, int x) const {
        return ((static_cast<std::size_t>(c) * height + y) * width + x) * samples + n;
    }
    T& at(int c, int n, int y, int x) { return data[index(c, n, y, x)]; }
    const T& at(int c, int n, int y, int x) const { return data[index(c, n, y, x)]; }

    MatrixMap<T> matrix() {
        return MatrixMap<T>(data.data(), channels, static_cast<Eigen::Index>(columns()));
    }
    ConstMatrixMap<T> matrix() const {
        return ConstMatrixMap<T>(data.data(), channels, static_cast<Eigen::Index>(columns()));
    }
};

/// Per-sample spatial mean of every channel; result is samples x channels.
template <typename T>
RowMatrix<T> spatial_mean(const Batch<T>& x) {
    RowMatrix<T> pooled = RowMatrix<T>::Zero(x.samples, x.channels);
    const std::size_t plane = x.plane();
    const int n = x.samples;
    const T inv = T(1) / static_cast<T>(plane);
    std::vector<T> acc(static_cast<std::size_t>(n));
    for (int c = 0; c < x.channels; ++c) {
        std::fill(acc.begin(), acc.end(), T(0));
        const T* p = &x.data[static_cast<std::size_t>(c) * plane * n];
        for (std::size_t i = 0; i < plane; ++i) {
            for (int s = 0; s < n; ++s) acc[s] += p[i * n + s];
        }
        for (int s = 0; s < n; ++s) pooled(s, c) = acc[s] * inv;
    }
    return pooled;
}

/// Adjoint of spatial_mean: spreads samples x channels gradients over each plane.
template <typename T>
void spatial_mean_backward(const RowMatrix<T>& grad_pooled, Batch<T>& grad_x) {
    const std::size_t plane = grad_x.plane();
    const int n = grad_x.samples;
    const T inv = T(1) / static_cast<T>(plane);
    std::vector<T> g(static_cast<std::size_t>(n));
    for (int c = 0; c < grad_x.channels; ++c) {
        for (int s = 0; s < n; ++s) g[s] = grad_pooled(s, c) * inv;
        T* p = &grad_x.data[static_cast<std::size_t>(c) * plane * n];
        for (std::size_t i = 0; i < plane; ++i) {
            for (int s = 0; s < n; ++s) p[i * n + s] += g[s];
        }
    }
}

}  // namespace rnd::nn
