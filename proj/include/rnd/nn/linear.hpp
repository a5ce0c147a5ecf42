#pragma once

#include <cmath>
#include <random>
#include <string>

#include "rnd/nn/tensor.hpp"

namespace rnd::nn {

/// Fully connected layer acting on samples x features row matrices.
template <typename T>
class Linear {
public:
    Linear() = default;
    Linear(const std::string& name, int in_features, int out_features)
        : weight(name + ".weight", {out_features, in_features}),
          bias(name + ".bias", {out_features}),
          in_(in_features), out_(out_features) {}

    int in_features() const { return in_; }
    int out_features() const { return out_; }

    template <typename Rng>
    void init(Rng& rng) {
        std::normal_distribution<double> dist(0.0, std::sqrt(1.0 / in_));
        for (auto& w : weight.value) w = static_cast<T>(dist(rng));
        std::fill(bias.value.begin(), bias.value.end(), T(0));
    }

    RowMatrix<T> forward(const RowMatrix<T>& x) const {
        auto w = ConstMatrixMap<T>(weight.value.data(), out_, in_);
        RowMatrix<T> y = x * w.transpose();
        for (Eigen::Index r = 0; r < y.rows(); ++r) {
            for (int c = 0; c < out_; ++c) y(r, c) += bias.value[c];
        }
        return y;
    }

    /// Gradient with respect to the input only; parameters untouched.
    RowMatrix<T> input_gradient(const RowMatrix<T>& grad_y) const {
        return grad_y * ConstMatrixMap<T>(weight.value.data(), out_, in_);
    }

    /// Returns the gradient with respect to x; accumulates parameter
    /// gradients when trainable.
    RowMatrix<T> backward(const RowMatrix<T>& x, const RowMatrix<T>& grad_y) {
        if (weight.trainable) {
            auto gw = MatrixMap<T>(weight.grad.data(), out_, in_);
            gw.noalias() += grad_y.transpose() * x;
            for (int c = 0; c < out_; ++c) bias.grad[c] += grad_y.col(c).sum();
        }
        return input_gradient(grad_y);
    }

    Param<T> weight;
    Param<T> bias;

private:
    int in_ = 0;
    int out_ = 0;
};

}  // namespace rnd::nn
