#pragma once

#include <cmath>
#include <random>
#include <string>

#include "rnd/nn/tensor.hpp"

namespace rnd::nn {

/// Square-kernel 2-D convolution with zero padding, lowered to one GEMM per
/// batch through an im2col buffer.
template <typename T>
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(const std::string& name, int in_channels, int out_channels, int kernel, int stride)
        : weight(name + ".weight", {out_channels, in_channels, kernel, kernel}),
          bias(name + ".bias", {out_channels}),
          in_(in_channels), out_(out_channels), kernel_(kernel), stride_(stride), pad_(kernel / 2) {}

    /// Scratch kept between forward and backward.
    struct Cache {
        RowMatrix<T> cols;
        int in_height = 0;
        int in_width = 0;
    };

    int in_channels() const { return in_; }
    int out_channels() const { return out_; }
    int out_size(int in) const { return (in + 2 * pad_ - kernel_) / stride_ + 1; }

    /// He-normal weights, zero bias.
    template <typename Rng>
    void init(Rng& rng) {
        const double fan_in = static_cast<double>(in_) * kernel_ * kernel_;
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
        for (auto& w : weight.value) w = static_cast<T>(dist(rng));
        std::fill(bias.value.begin(), bias.value.end(), T(0));
    }

    Batch<T> forward(const Batch<T>& x, Cache* cache) const {
        const int oh = out_size(x.height);
        const int ow = out_size(x.width);
        Batch<T> y(out_, x.samples, oh, ow);
        RowMatrix<T> local;
        RowMatrix<T>& cols = cache ? cache->cols : local;
        im2col(x, oh, ow, cols);
        if (cache) {
            cache->in_height = x.height;
            cache->in_width = x.width;
        }
        auto w = ConstMatrixMap<T>(weight.value.data(), out_, kernel_ * kernel_ * in_);
        auto out = y.matrix();
        out.noalias() = w * cols;
        for (int c = 0; c < out_; ++c) out.row(c).array() += bias.value[c];
        return y;
    }

    /// Accumulates parameter gradients when trainable; fills grad_x when
    /// non-null (it must already be sized like the forward input).
    void backward(const Cache& cache, const Batch<T>& grad_y, Batch<T>* grad_x) {
        auto gy = grad_y.matrix();
        if (weight.trainable) {
            auto gw = MatrixMap<T>(weight.grad.data(), out_, kernel_ * kernel_ * in_);
            gw.noalias() += gy * cache.cols.transpose();
            for (int c = 0; c < out_; ++c) bias.grad[c] += gy.row(c).sum();
        }
        if (grad_x) {
            auto w = ConstMatrixMap<T>(weight.value.data(), out_, kernel_ * kernel_ * in_);
            RowMatrix<T> gcols = w.transpose() * gy;
            col2im(gcols, grad_y.height, grad_y.width, *grad_x);
        }
    }

    Param<T> weight;
    Param<T> bias;

private:
    // Column index of the lowered matrix is (out_row, out_col, sample), so
    // every (channel, ky, kx, out_row, out_col) cell moves one contiguous
    // run of `samples` values.
    void im2col(const Batch<T>& x, int oh, int ow, RowMatrix<T>& cols) const {
        const std::size_t n = static_cast<std::size_t>(x.samples);
        const std::size_t ncols = n * oh * ow;
        cols.resize(static_cast<Eigen::Index>(in_) * kernel_ * kernel_, static_cast<Eigen::Index>(ncols));
        for (int c = 0; c < in_; ++c) {
            const T* src = &x.data[static_cast<std::size_t>(c) * x.plane() * n];
            for (int ky = 0; ky < kernel_; ++ky) {
                for (int kx = 0; kx < kernel_; ++kx) {
                    T* dst = cols.data() + ((static_cast<std::size_t>(c) * kernel_ + ky) * kernel_ + kx) * ncols;
                    for (int oy = 0; oy < oh; ++oy) {
                        const int iy = oy * stride_ - pad_ + ky;
                        for (int ox = 0; ox < ow; ++ox, dst += n) {
                            const int ix = ox * stride_ - pad_ + kx;
                            if (iy < 0 || iy >= x.height || ix < 0 || ix >= x.width) {
                                std::fill(dst, dst + n, T(0));
                            } else {
                                const T* s = src + (static_cast<std::size_t>(iy) * x.width + ix) * n;
                                std::copy(s, s + n, dst);
                            }
                        }
                    }
                }
            }
        }
    }

    void col2im(const RowMatrix<T>& gcols, int oh, int ow, Batch<T>& gx) const {
        const std::size_t n = static_cast<std::size_t>(gx.samples);
        const std::size_t ncols = n * oh * ow;
        for (int c = 0; c < in_; ++c) {
            T* dst = &gx.data[static_cast<std::size_t>(c) * gx.plane() * n];
            for (int ky = 0; ky < kernel_; ++ky) {
                for (int kx = 0; kx < kernel_; ++kx) {
                    const T* src = gcols.data() + ((static_cast<std::size_t>(c) * kernel_ + ky) * kernel_ + kx) * ncols;
                    for (int oy = 0; oy < oh; ++oy) {
                        const int iy = oy * stride_ - pad_ + ky;
                        for (int ox = 0; ox < ow; ++ox, src += n) {
                            const int ix = ox * stride_ - pad_ + kx;
                            if (iy < 0 || iy >= gx.height || ix < 0 || ix >= gx.width) continue;
                            T* d = dst + (static_cast<std::size_t>(iy) * gx.width + ix) * n;
                            for (std::size_t k = 0; k < n; ++k) d[k] += src[k];
                        }
                    }
                }
            }
        }
    }

    int in_ = 0;
    int out_ = 0;
    int kernel_ = 3;
    int stride_ = 1;
    int pad_ = 1;
};

}  // namespace rnd::nn
