#include "rnd/saliency.hpp"

#include <algorithm>

namespace rnd::saliency {

SaliencyMap uniform_map(int height, int width) {
    SaliencyMap m;
    m.height = height;
    m.width = width;
    m.values.assign(static_cast<std::size_t>(height) * width, 1.0);
    m.fallback = true;
    return m;
}

SaliencyMap normalize(int height, int width, std::vector<double> raw) {
    double peak = 0.0;
    for (double v : raw) {
        if (!std::isfinite(v)) throw NumericalError("non-finite saliency value");
        peak = std::max(peak, v);
    }
    if (!(peak > 0.0)) return uniform_map(height, width);
    SaliencyMap m;
    m.height = height;
    m.width = width;
    m.values = std::move(raw);
    for (auto& v : m.values) v = std::max(v, 0.0) / peak;
    return m;
}

std::vector<double> upsample_bilinear(const std::vector<double>& src, int src_h, int src_w, int dst_h,
                                      int dst_w) {
    std::vector<double> out(static_cast<std::size_t>(dst_h) * dst_w);
    const double sy = static_cast<double>(src_h) / dst_h;
    const double sx = static_cast<double>(src_w) / dst_w;
    for (int y = 0; y < dst_h; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(src_h - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, src_h - 1);
        const double wy = fy - y0;
        for (int x = 0; x < dst_w; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(src_w - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, src_w - 1);
            const double wx = fx - x0;
            const auto v = [&](int yy, int xx) { return src[static_cast<std::size_t>(yy) * src_w + xx]; };
            out[static_cast<std::size_t>(y) * dst_w + x] =
                (v(y0, x0) * (1 - wx) + v(y0, x1) * wx) * (1 - wy) + (v(y1, x0) * (1 - wx) + v(y1, x1) * wx) * wy;
        }
    }
    return out;
}

namespace {

SaliencyMap unwarp_map(const SaliencyMap& m, const transforms::TransformSpec& light) {
    if (!transforms::is_geometric(light) || m.fallback) return m;
    Image field(1, m.height, m.width);
    for (std::size_t i = 0; i < m.values.size(); ++i) field.data[i] = static_cast<float>(m.values[i]);
    const Image back = transforms::unwarp(light, field);
    return normalize(m.height, m.width, std::vector<double>(back.data.begin(), back.data.end()));
}

void require_light(const transforms::TransformSpec& light) {
    if (light.family != transforms::Family::light) {
        throw InputError("style-agnostic saliency needs a light transform, got " + transforms::describe(light));
    }
}

}  // namespace

SaliencyMap combine(const SaliencyMap& a, const SaliencyMap& b) {
    if (a.height != b.height || a.width != b.width) throw InputError("saliency maps differ in shape");
    if (a.fallback || b.fallback) return uniform_map(a.height, a.width);
    std::vector<double> prod(a.values.size());
    for (std::size_t i = 0; i < prod.size(); ++i) prod[i] = a.values[i] * b.values[i];
    return normalize(a.height, a.width, std::move(prod));
}

SaliencyMap style_agnostic_saliency(const nn::Encoder<float>& encoder, const nn::Linear<float>& head,
                                    const Image& img, const transforms::TransformSpec& light) {
    require_light(light);
    const SaliencyMap base = grad_cam(encoder, head, img);
    return combine(base, unwarp_map(grad_cam(encoder, head, transforms::apply(light, img)), light));
}

std::vector<SaliencyMap> grad_cam_batch(const nn::Encoder<float>& encoder, const nn::Linear<float>& head,
                                        std::span<const Image> images, int chunk) {
    std::vector<SaliencyMap> out;
    out.reserve(images.size());
    for (std::size_t start = 0; start < images.size(); start += static_cast<std::size_t>(chunk)) {
        const std::size_t count = std::min(images.size() - start, static_cast<std::size_t>(chunk));
        const auto part = images.subspan(start, count);
        const auto taps = encoder.forward(to_batch<float>(part), nullptr);
        const auto& act = taps[nn::kStages - 1];
        nn::Batch<float> one(act.channels, 1, act.height, act.width);
        for (std::size_t s = 0; s < count; ++s) {
            for (int c = 0; c < act.channels; ++c) {
                for (int y = 0; y < act.height; ++y) {
                    for (int x = 0; x < act.width; ++x) one.at(c, 0, y, x) = act.at(c, static_cast<int>(s), y, x);
                }
            }
            out.push_back(cam_from_activation(one, head, argmax_class(one, head), part[s].height, part[s].width));
        }
    }
    return out;
}

std::vector<SaliencyMap> style_agnostic_batch(const nn::Encoder<float>& encoder, const nn::Linear<float>& head,
                                              std::span<const Image> images,
                                              std::span<const transforms::TransformSpec> lights, int chunk) {
    if (images.size() != lights.size()) throw InputError("one light transform per image required");
    std::vector<Image> moved;
    moved.reserve(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) {
        require_light(lights[i]);
        moved.push_back(transforms::apply(lights[i], images[i]));
    }
    const auto first = grad_cam_batch(encoder, head, images, chunk);
    const auto second = grad_cam_batch(encoder, head, moved, chunk);
    std::vector<SaliencyMap> out;
    out.reserve(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) out.push_back(combine(first[i], unwarp_map(second[i], lights[i])));
    return out;
}

Image to_image(const SaliencyMap& map) {
    Image img(1, map.height, map.width);
    for (std::size_t i = 0; i < map.values.size(); ++i) img.data[i] = static_cast<float>(map.values[i]);
    return img;
}

}  // namespace rnd::saliency
