#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "rnd/nn/tensor.hpp"

namespace rnd {

/// Dense raster, channel-major (CHW), values in [0,1].
struct Image {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<float> data;

    Image() = default;
    Image(int c, int h, int w, float fill = 0.0f)
        : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

    std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
    std::size_t index(int c, int y, int x) const {
        return (static_cast<std::size_t>(c) * height + y) * width + x;
    }
    float& at(int c, int y, int x) { return data[index(c, y, x)]; }
    float at(int c, int y, int x) const { return data[index(c, y, x)]; }

    bool same_shape(const Image& o) const {
        return channels == o.channels && height == o.height && width == o.width;
    }
    friend bool operator==(const Image&, const Image&) = default;
};

/// Clamps every value into [0,1].
void clip_unit(Image& img);

/// Rounds every value to the nearest multiple of 1/255.
void quantize_8bit(Image& img);

/// Writes 8-bit RGB (3 channels) or grayscale (1 channel) PNG.
void write_png(const std::filesystem::path& path, const Image& img);

/// Reads an 8-bit PNG as values k/255.
Image read_png(const std::filesystem::path& path);

/// Packs images (identical shape) into a network batch.
template <typename T>
nn::Batch<T> to_batch(std::span<const Image> images) {
    if (images.empty()) return {};
    const Image& first = images.front();
    const int n = static_cast<int>(images.size());
    nn::Batch<T> b(first.channels, n, first.height, first.width);
    for (int s = 0; s < n; ++s) {
        const Image& im = images[s];
        for (int c = 0; c < im.channels; ++c) {
            for (int y = 0; y < im.height; ++y) {
                for (int x = 0; x < im.width; ++x) b.at(c, s, y, x) = static_cast<T>(im.at(c, y, x));
            }
        }
    }
    return b;
}

}  // namespace rnd
