#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rnd/image.hpp"
#include "rnd/nn/readout.hpp"

namespace rnd {

/// One float32 tensor of a weight archive.
struct TensorRecord {
    std::string name;
    std::vector<int> shape;
    std::vector<float> data;
};

/// Flat binary tensor archive with a text header (see docs/formats.md).
class WeightArchive {
public:
    void add(std::string name, std::vector<int> shape, std::vector<float> data);
    /// Appends every parameter under `prefix + param.name`.
    void store(std::string_view prefix, std::span<nn::Param<float>* const> params);
    /// Copies tensors back into params; ConfigError on missing names or
    /// shape mismatch.
    void restore(std::string_view prefix, std::span<nn::Param<float>* const> params) const;

    const TensorRecord* find(std::string_view name) const;
    const std::vector<TensorRecord>& tensors() const { return tensors_; }

    void save(const std::filesystem::path& path) const;
    static WeightArchive load(const std::filesystem::path& path);

private:
    std::vector<TensorRecord> tensors_;
};

/// Widths (16, 32, 64), every stage downsamples by two; the inner
/// convolution is 1x1 in the first two stages and 3x3 in the last.
nn::EncoderConfig default_encoder_config();

/// Number of auxiliary pretraining classes.
inline constexpr int kAuxClasses = 4;

using FeatureMatrix = nn::RowMatrix<double>;

/// Concatenated normalized blocks for one image.
struct FeatureVector {
    std::vector<double> values;
    std::vector<int> offsets;
    bool degenerate = false;

    int block_count() const { return static_cast<int>(offsets.size()) - 1; }
    std::span<const double> block(int b) const {
        return std::span<const double>(values).subspan(offsets[b], offsets[b + 1] - offsets[b]);
    }
};

/// Frozen pretrained encoder, trainable binary head, and the auxiliary
/// classification head kept for saliency.
struct Teacher {
    nn::Network<float> net;
    nn::Linear<float> classifier;
};

/// Pretraining network: encoder plus auxiliary classifier.
struct AuxClassifier {
    nn::Encoder<float> encoder;
    nn::Linear<float> classifier;

    explicit AuxClassifier(const nn::EncoderConfig& cfg = default_encoder_config());
    std::vector<nn::Param<float>*> params();
};

void save_pretrained(const std::filesystem::path& path, AuxClassifier& model);

Teacher build_teacher(const std::filesystem::path& pretrained, std::uint64_t head_seed, bool use_head = true,
                      const nn::EncoderConfig& cfg = default_encoder_config());
nn::Network<float> build_student(std::uint64_t seed, bool use_head = true,
                                 const nn::EncoderConfig& cfg = default_encoder_config());

FeatureVector feature_readout(const nn::Network<float>& net, const Image& img);

/// Readout of many images, processed in chunks; rows follow `images`.
FeatureMatrix readout_images(const nn::Network<float>& net, std::span<const Image> images,
                             int chunk = 128, bool* degenerate = nullptr);

}  // namespace rnd
