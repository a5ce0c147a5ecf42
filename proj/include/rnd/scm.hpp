#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "rnd/image.hpp"
#include "rnd/rng.hpp"

namespace rnd::scm {

enum class Domain { main, shifted };
std::string_view to_string(Domain d);
Domain domain_from_string(std::string_view s);

/// Shape families. Only blob (ID) and star (OOD) carry the ID/OOD label;
/// the rest are auxiliary pretraining classes.
enum class Concept { blob, star, triangle, square, ring, cross };
inline constexpr int kAuxClassCount = 4;
inline constexpr int kCoreBins = 8;
/// Star arm amplitude of core bin b.
double bin_amplitude(int bin);

using BinDistribution = std::array<double, kCoreBins>;
/// Core-bin distribution of real OOD samples.
BinDistribution default_ood_bins();

struct ScmConfig {
    int image_size = 32;
    double confounder_strength = 0.9;
    int train_count = 2000;
    /// Fraction of shifted-domain ID samples in train (0, 0.05, 0.1, 0.2).
    double exposure = 0.0;
    /// Shifted ID samples generated as the exposure budget.
    int shifted_pool = 400;
    /// Per test split; half ID, half OOD.
    int test_count = 500;
    int aux_per_class = 500;
    double noise_mean = 0.5;
    double noise_std = 0.25;
    std::uint64_t seed = 0;
    BinDistribution ood_bins = default_ood_bins();
};

/// Latent variables of one sample. label = (core > 0.5).
struct Latent {
    double u = 0.0;
    double core = 0.0;
    double style = 0.0;
};

/// Everything the renderer needs; fully determines the image.
struct RenderSpec {
    Concept shape = Concept::blob;
    int size = 32;
    double cx = 16.0, cy = 16.0;
    double radius = 8.0;
    double rotation = 0.0;
    double ellipticity = 0.0;
    double star_amplitude = 0.0;
    double bg_hue = 0.0;
    double bg_saturation = 0.5;
    double bg_brightness = 0.8;
    bool checker = false;
    double period = 8.0;
    double phase = 0.0;
    std::uint64_t noise_seed = 0;
};

struct ScmSample {
    std::string split;
    int label = 0;  // 0 = ID, 1 = OOD (or auxiliary class index in aux_pretrain)
    Domain domain = Domain::main;
    std::uint64_t seed = 0;
    Latent latent;
    int core_bin = -1;
    RenderSpec spec;
    Image image;
};

struct DatasetSplits {
    std::vector<ScmSample> train;
    std::vector<ScmSample> test_main;
    std::vector<ScmSample> test_shifted;
    std::vector<ScmSample> aux_pretrain;
};

/// Confounded latent draw: core and style each mix U with weight
/// confounder_strength.
Latent sample_latent(double confounder_strength, Rng& rng);

/// Domain-dependent style part of a render spec, from the style latent.
void apply_style(RenderSpec& spec, Domain domain, double style, Rng& rng);

/// Renders to 8-bit-quantized RGB.
Image render(const RenderSpec& spec);

/// One ID (label 0) or OOD (label 1) sample from its own seed stream;
/// latents are redrawn until the label matches.
ScmSample sample_labelled(const ScmConfig& cfg, int label, Domain domain, std::uint64_t seed);

/// OOD sample whose core bin is drawn from `bins` instead of the default.
ScmSample sample_star(const ScmConfig& cfg, const BinDistribution& bins, Domain domain, std::uint64_t seed);

ScmSample sample_aux(const ScmConfig& cfg, int aux_class, std::uint64_t seed);

/// Exact rounded split of `total` into main and shifted members, each a
/// seed-deterministic subset of its pool.
std::vector<ScmSample> mix_exposure(const std::vector<ScmSample>& main_ids, const std::vector<ScmSample>& shifted_ids,
                                    double shifted_fraction, int total, std::uint64_t seed);

DatasetSplits generate_dataset(const ScmConfig& cfg);

/// Gaussian pixel noise clipped to [0,1].
std::vector<Image> noise_ood(int count, int channels, int height, int width, std::uint64_t seed, double mean = 0.5,
                             double stddev = 0.25);

/// Accuracy of a logistic probe predicting the label from the style latent
/// of `count` unconditioned draws.
double style_probe_accuracy(double confounder_strength, int count, std::uint64_t seed);

/// images/*.png + manifest.tsv + scm_config.txt
void write_dataset(const std::filesystem::path& dir, const DatasetSplits& splits, const ScmConfig& cfg);
DatasetSplits read_dataset(const std::filesystem::path& dir);

std::string config_text(const ScmConfig& cfg);

std::vector<Image> images_of(const std::vector<ScmSample>& samples);
std::vector<int> labels_of(const std::vector<ScmSample>& samples);

}  // namespace rnd::scm
