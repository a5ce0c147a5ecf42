#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "rnd/errors.hpp"
#include "rnd/nn/conv2d.hpp"
#include "rnd/nn/tensor.hpp"

namespace rnd::nn {

inline constexpr int kStages = 3;

struct EncoderConfig {
    int in_channels = 3;
    std::array<int, kStages> widths{16, 32, 64};
    std::array<int, kStages> strides{2, 2, 2};
    std::array<int, kStages> inner_kernels{3, 3, 3};
};

template <typename T>
void relu_inplace(Batch<T>& x) {
    for (auto& v : x.data) v = v > T(0) ? v : T(0);
}

/// grad *= (activation > 0), using the post-ReLU activation as the mask.
template <typename T>
void relu_backward_inplace(const Batch<T>& activation, Batch<T>& grad) {
    for (std::size_t i = 0; i < grad.data.size(); ++i) {
        if (!(activation.data[i] > T(0))) grad.data[i] = T(0);
    }
}

/// Basic residual block: relu(conv3x3(relu(conv3x3_s(x))) + conv1x1_s(x)).
template <typename T>
class ResidualStage {
public:
    ResidualStage() = default;
    ResidualStage(const std::string& name, int in, int out, int stride, int inner_kernel = 3)
        : conv1(name + ".conv1", in, out, 3, stride),
          conv2(name + ".conv2", out, out, inner_kernel, 1),
          shortcut(name + ".shortcut", in, out, 1, stride) {}

    struct Cache {
        typename Conv2d<T>::Cache c1, c2, sc;
        Batch<T> hidden;
        Batch<T> out;
    };

    template <typename Rng>
    void init(Rng& rng) {
        conv1.init(rng);
        conv2.init(rng);
        shortcut.init(rng);
    }

    Batch<T> forward(const Batch<T>& x, Cache* cache) const {
        Batch<T> h = conv1.forward(x, cache ? &cache->c1 : nullptr);
        relu_inplace(h);
        Batch<T> y = conv2.forward(h, cache ? &cache->c2 : nullptr);
        Batch<T> s = shortcut.forward(x, cache ? &cache->sc : nullptr);
        for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += s.data[i];
        relu_inplace(y);
        if (cache) {
            cache->hidden = std::move(h);
            cache->out = y;
        }
        return y;
    }

    /// grad_out is consumed (masked in place).
    void backward(Cache& cache, Batch<T>& grad_out, Batch<T>* grad_x) {
        relu_backward_inplace(cache.out, grad_out);
        Batch<T> grad_hidden(cache.hidden.channels, cache.hidden.samples, cache.hidden.height,
                             cache.hidden.width);
        conv2.backward(cache.c2, grad_out, &grad_hidden);
        relu_backward_inplace(cache.hidden, grad_hidden);
        conv1.backward(cache.c1, grad_hidden, grad_x);
        shortcut.backward(cache.sc, grad_out, grad_x);
    }

    std::vector<Param<T>*> params() {
        return {&conv1.weight, &conv1.bias, &conv2.weight, &conv2.bias, &shortcut.weight,
                &shortcut.bias};
    }

    Conv2d<T> conv1;
    Conv2d<T> conv2;
    Conv2d<T> shortcut;
};

/// Three-stage residual convolutional encoder exposing every stage output.
template <typename T>
class Encoder {
public:
    Encoder() : Encoder(EncoderConfig{}) {}
    explicit Encoder(const EncoderConfig& cfg, const std::string& name = "encoder") : cfg_(cfg) {
        int in = cfg.in_channels;
        for (int l = 0; l < kStages; ++l) {
            stages_[l] = ResidualStage<T>(name + ".stage" + std::to_string(l + 1), in, cfg.widths[l],
                                          cfg.strides[l], cfg.inner_kernels[l]);
            in = cfg.widths[l];
        }
    }

    struct Cache {
        std::array<typename ResidualStage<T>::Cache, kStages> stages;
        int in_height = 0;
        int in_width = 0;
    };

    using Taps = std::array<Batch<T>, kStages>;

    const EncoderConfig& config() const { return cfg_; }
    int final_width() const { return cfg_.widths[kStages - 1]; }

    template <typename Rng>
    void init(Rng& rng) {
        for (auto& s : stages_) s.init(rng);
    }

    Taps forward(const Batch<T>& x, Cache* cache) const {
        if (x.channels != cfg_.in_channels) {
            throw InputError("encoder expects " + std::to_string(cfg_.in_channels) +
                             " input channels, got " + std::to_string(x.channels));
        }
        if (cache) {
            cache->in_height = x.height;
            cache->in_width = x.width;
        }
        Taps taps;
        const Batch<T>* in = &x;
        for (int l = 0; l < kStages; ++l) {
            taps[l] = stages_[l].forward(*in, cache ? &cache->stages[l] : nullptr);
            in = &taps[l];
        }
        return taps;
    }

    /// grad_taps[l] may be empty (no data) when stage l's output is not read
    /// directly. grad_input, when non-null, receives the input gradient.
    void backward(Cache& cache, Taps grad_taps, Batch<T>* grad_input) {
        Batch<T> carry;
        for (int l = kStages - 1; l >= 0; --l) {
            auto& sc = cache.stages[l];
            Batch<T> g(sc.out.channels, sc.out.samples, sc.out.height, sc.out.width);
            if (!grad_taps[l].data.empty()) g.data = std::move(grad_taps[l].data);
            if (!carry.data.empty()) {
                for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] += carry.data[i];
            }
            Batch<T>* gx = nullptr;
            Batch<T> next;
            if (l > 0) {
                const auto& prev = cache.stages[l - 1].out;
                next = Batch<T>(prev.channels, prev.samples, prev.height, prev.width);
                gx = &next;
            } else if (grad_input) {
                *grad_input = Batch<T>(cfg_.in_channels, sc.out.samples, cache.in_height,
                                       cache.in_width);
                gx = grad_input;
            }
            stages_[l].backward(sc, g, gx);
            carry = std::move(next);
        }
    }

    std::vector<Param<T>*> params() {
        std::vector<Param<T>*> out;
        for (auto& s : stages_) {
            for (auto* p : s.params()) out.push_back(p);
        }
        return out;
    }
    std::vector<const Param<T>*> params() const {
        std::vector<const Param<T>*> out;
        for (auto* p : const_cast<Encoder*>(this)->params()) out.push_back(p);
        return out;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto* p : params()) n += p->size();
        return n;
    }

    void set_trainable(bool trainable) {
        for (auto* p : params()) p->trainable = trainable;
    }

    void zero_grad() {
        for (auto* p : params()) p->zero_grad();
    }

    ResidualStage<T>& stage(int l) { return stages_[l]; }

private:
    EncoderConfig cfg_;
    std::array<ResidualStage<T>, kStages> stages_;
};

/// Copies parameter values between encoders of the same architecture,
/// converting scalar type if needed.
template <typename To, typename From>
void copy_parameters(const std::vector<const Param<From>*>& src, const std::vector<Param<To>*>& dst) {
    if (src.size() != dst.size()) throw ConfigError("parameter list length mismatch");
    for (std::size_t i = 0; i < src.size(); ++i) {
        if (src[i]->value.size() != dst[i]->value.size()) {
            throw ConfigError("shape mismatch for " + dst[i]->name);
        }
        for (std::size_t k = 0; k < src[i]->value.size(); ++k) {
            dst[i]->value[k] = static_cast<To>(src[i]->value[k]);
        }
    }
}

}  // namespace rnd::nn
