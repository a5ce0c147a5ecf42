#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "rnd/nn/encoder.hpp"
#include "rnd/nn/linear.hpp"

namespace rnd::nn {

inline constexpr double kNormEpsilon = 1e-12;

/// Encoder plus optional binary head. Feature vector layout is the
/// per-stage pooled blocks followed by the head-logit block.
template <typename T>
struct Network {
    Encoder<T> encoder;
    Linear<T> head;
    bool use_head = true;

    Network() = default;
    explicit Network(const EncoderConfig& cfg, bool with_head = true)
        : encoder(cfg, "encoder"),
          head("head", cfg.widths[kStages - 1], 2),
          use_head(with_head) {}

    int feature_dim() const {
        int d = 0;
        for (int w : encoder.config().widths) d += w;
        return d + (use_head ? 2 : 0);
    }

    int block_count() const { return kStages + (use_head ? 1 : 0); }

    /// Offsets of each block in the feature vector, plus the end offset.
    std::vector<int> block_offsets() const {
        std::vector<int> off{0};
        for (int w : encoder.config().widths) off.push_back(off.back() + w);
        if (use_head) off.push_back(off.back() + 2);
        return off;
    }

    std::vector<Param<T>*> params() {
        auto p = encoder.params();
        if (use_head) {
            p.push_back(&head.weight);
            p.push_back(&head.bias);
        }
        return p;
    }
};

/// State needed to back-propagate a readout.
template <typename T>
struct ReadoutCache {
    typename Encoder<T>::Cache encoder;
    std::array<RowMatrix<T>, kStages> pooled;
    RowMatrix<T> logits;
    RowMatrix<double> raw;
    bool degenerate = false;
};

namespace detail {

/// Normalizes `raw` block [begin, end) of every row into `out`, returning
/// whether any block had zero norm.
inline bool normalize_block(const RowMatrix<double>& raw, int begin, int end, RowMatrix<double>& out) {
    bool degenerate = false;
    for (Eigen::Index r = 0; r < raw.rows(); ++r) {
        const double norm = raw.row(r).segment(begin, end - begin).norm();
        if (norm == 0.0) degenerate = true;
        out.row(r).segment(begin, end - begin) = raw.row(r).segment(begin, end - begin) / (norm + kNormEpsilon);
    }
    return degenerate;
}

inline void normalize_block_backward(const RowMatrix<double>& raw, const RowMatrix<double>& grad_out,
                                     int begin, int end, RowMatrix<double>& grad_raw) {
    for (Eigen::Index r = 0; r < raw.rows(); ++r) {
        const auto v = raw.row(r).segment(begin, end - begin);
        const auto g = grad_out.row(r).segment(begin, end - begin);
        const double norm = v.norm();
        const double denom = norm + kNormEpsilon;
        auto out = grad_raw.row(r).segment(begin, end - begin);
        out = g / denom;
        if (norm > 0.0) out -= v * (v.dot(g) / (norm * denom * denom));
    }
}

}  // namespace detail

/// Mean-pools every stage, L2-normalizes each block (including the head
/// logits) and concatenates. Rows of the result are samples.
template <typename T>
RowMatrix<double> readout_forward(const Network<T>& net, const Batch<T>& x, ReadoutCache<T>* cache) {
    typename Encoder<T>::Cache local;
    auto& enc_cache = cache ? cache->encoder : local;
    auto taps = net.encoder.forward(x, cache ? &enc_cache : nullptr);

    const auto offsets = net.block_offsets();
    RowMatrix<double> raw(x.samples, net.feature_dim());
    std::array<RowMatrix<T>, kStages> pooled;
    for (int l = 0; l < kStages; ++l) {
        pooled[l] = spatial_mean(taps[l]);
        raw.block(0, offsets[l], x.samples, pooled[l].cols()) = pooled[l].template cast<double>();
    }
    RowMatrix<T> logits;
    if (net.use_head) {
        logits = net.head.forward(pooled[kStages - 1]);
        raw.block(0, offsets[kStages], x.samples, 2) = logits.template cast<double>();
    }
    RowMatrix<double> out(raw.rows(), raw.cols());
    bool degenerate = false;
    for (int b = 0; b + 1 < static_cast<int>(offsets.size()); ++b) {
        degenerate |= detail::normalize_block(raw, offsets[b], offsets[b + 1], out);
    }
    if (cache) {
        cache->pooled = std::move(pooled);
        cache->logits = std::move(logits);
        cache->raw = std::move(raw);
        cache->degenerate = degenerate;
    }
    return out;
}

/// Back-propagates dL/d(features) into the network's trainable parameters.
/// The head always accumulates (when trainable); the encoder only when its
/// parameters are trainable. `grad_logits` optionally adds a gradient on the
/// raw (unnormalized) head logits.
template <typename T>
void readout_backward(Network<T>& net, ReadoutCache<T>& cache, const RowMatrix<double>& grad_features,
                      Batch<T>* grad_input = nullptr, const RowMatrix<double>* grad_logits = nullptr) {
    const auto offsets = net.block_offsets();
    RowMatrix<double> grad_raw = RowMatrix<double>::Zero(cache.raw.rows(), cache.raw.cols());
    for (int b = 0; b + 1 < static_cast<int>(offsets.size()); ++b) {
        detail::normalize_block_backward(cache.raw, grad_features, offsets[b], offsets[b + 1], grad_raw);
    }
    if (grad_logits && net.use_head) grad_raw.block(0, offsets[kStages], grad_raw.rows(), 2) += *grad_logits;
    const int n = static_cast<int>(cache.raw.rows());
    std::array<RowMatrix<T>, kStages> grad_pooled;
    for (int l = 0; l < kStages; ++l) {
        grad_pooled[l] = grad_raw.block(0, offsets[l], n, offsets[l + 1] - offsets[l]).template cast<T>();
    }
    if (net.use_head) {
        RowMatrix<T> grad_logits = grad_raw.block(0, offsets[kStages], n, 2).template cast<T>();
        grad_pooled[kStages - 1] += net.head.backward(cache.pooled[kStages - 1], grad_logits);
    }
    const bool encoder_trainable = !net.encoder.params().empty() && net.encoder.params().front()->trainable;
    if (!encoder_trainable && !grad_input) return;

    typename Encoder<T>::Taps grad_taps;
    for (int l = 0; l < kStages; ++l) {
        const auto& out = cache.encoder.stages[l].out;
        grad_taps[l] = Batch<T>(out.channels, out.samples, out.height, out.width);
        spatial_mean_backward(grad_pooled[l], grad_taps[l]);
    }
    net.encoder.backward(cache.encoder, std::move(grad_taps), grad_input);
}

}  // namespace rnd::nn
