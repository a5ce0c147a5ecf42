#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rnd/errors.hpp"
#include "rnd/image.hpp"
#include "rnd/nn/encoder.hpp"
#include "rnd/nn/linear.hpp"
#include "rnd/transforms.hpp"

namespace rnd::saliency {

/// Per-pixel importance in [0,1]. Either max == 1, or `fallback` is set and
/// every value is 1 (no information).
struct SaliencyMap {
    int height = 0;
    int width = 0;
    std::vector<double> values;
    bool fallback = false;
    std::string source_layer = "stage3";

    double at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
    double& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
};

SaliencyMap uniform_map(int height, int width);

/// Divides by the maximum; an all-zero (or non-positive) map becomes the
/// uniform fallback.
SaliencyMap normalize(int height, int width, std::vector<double> raw);

/// Bilinear resize (half-pixel centers, edge clamped).
std::vector<double> upsample_bilinear(const std::vector<double>& src, int src_h, int src_w, int dst_h,
                                      int dst_w);

/// Scores of every class for a single-sample final-stage activation.
template <typename T>
std::vector<T> class_scores(const nn::Batch<T>& activation, const nn::Linear<T>& head) {
    auto logits = head.forward(nn::spatial_mean(activation));
    return std::vector<T>(logits.data(), logits.data() + logits.cols());
}

template <typename T>
int argmax_class(const nn::Batch<T>& activation, const nn::Linear<T>& head) {
    const auto scores = class_scores(activation, head);
    int cls = 0;
    for (int k = 1; k < static_cast<int>(scores.size()); ++k) {
        if (scores[k] > scores[cls]) cls = k;
    }
    return cls;
}

/// Reverse-mode gradient of class `target`'s score with respect to the
/// final-stage activation (one sample).
template <typename T>
nn::Batch<T> class_score_gradient(const nn::Batch<T>& activation, const nn::Linear<T>& head, int target) {
    if (target < 0 || target >= head.out_features()) {
        throw InputError("grad-cam target " + std::to_string(target) + " outside head range [0, " +
                         std::to_string(head.out_features()) + ")");
    }
    nn::RowMatrix<T> grad_logits = nn::RowMatrix<T>::Zero(1, head.out_features());
    grad_logits(0, target) = T(1);
    nn::Batch<T> grad(activation.channels, activation.samples, activation.height, activation.width);
    nn::spatial_mean_backward(head.input_gradient(grad_logits), grad);
    return grad;
}

/// Grad-CAM on an already computed activation: channel weights are the
/// spatial mean of the gradient, the map is the rectified weighted sum,
/// upsampled to out_h x out_w and max-normalized.
template <typename T>
SaliencyMap cam_from_activation(const nn::Batch<T>& activation, const nn::Linear<T>& head, int target,
                                int out_h, int out_w) {
    const nn::Batch<T> grad = class_score_gradient(activation, head, target);
    const int h = activation.height;
    const int w = activation.width;
    std::vector<double> weights(static_cast<std::size_t>(activation.channels), 0.0);
    for (int c = 0; c < activation.channels; ++c) {
        double acc = 0.0;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) acc += static_cast<double>(grad.at(c, 0, y, x));
        }
        if (!std::isfinite(acc)) throw NumericalError("non-finite grad-cam gradient");
        weights[c] = acc / (static_cast<double>(h) * w);
    }
    std::vector<double> cam(static_cast<std::size_t>(h) * w, 0.0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int c = 0; c < activation.channels; ++c) {
                acc += weights[c] * static_cast<double>(activation.at(c, 0, y, x));
            }
            cam[static_cast<std::size_t>(y) * w + x] = std::max(acc, 0.0);
        }
    }
    return normalize(out_h, out_w, upsample_bilinear(cam, h, w, out_h, out_w));
}

/// Grad-CAM of `img` on the encoder's final stage. Without a target the
/// arg-max class of the head is explained.
template <typename T>
SaliencyMap grad_cam(const nn::Encoder<T>& encoder, const nn::Linear<T>& head, const Image& img,
                     std::optional<int> target = std::nullopt) {
    auto batch = to_batch<T>(std::span<const Image>(&img, 1));
    auto taps = encoder.forward(batch, nullptr);
    const auto& act = taps[nn::kStages - 1];
    const int cls = target ? *target : argmax_class(act, head);
    return cam_from_activation(act, head, cls, img.height, img.width);
}

/// Normalized element-wise product; uniform fallback if either factor is a
/// fallback map or the product vanishes.
SaliencyMap combine(const SaliencyMap& a, const SaliencyMap& b);

/// Grad-CAM of img times Grad-CAM of light(img), the latter mapped back to
/// img's frame for geometric light transforms.
SaliencyMap style_agnostic_saliency(const nn::Encoder<float>& encoder, const nn::Linear<float>& head,
                                    const Image& img, const transforms::TransformSpec& light);

/// grad_cam over many images, evaluated in chunks; same result per image.
std::vector<SaliencyMap> grad_cam_batch(const nn::Encoder<float>& encoder, const nn::Linear<float>& head,
                                        std::span<const Image> images, int chunk = 128);

/// style_agnostic_saliency for many images, one light spec each.
std::vector<SaliencyMap> style_agnostic_batch(const nn::Encoder<float>& encoder, const nn::Linear<float>& head,
                                              std::span<const Image> images,
                                              std::span<const transforms::TransformSpec> lights, int chunk = 128);

/// Grayscale rendering of a map (for previews).
Image to_image(const SaliencyMap& map);

}  // namespace rnd::saliency
