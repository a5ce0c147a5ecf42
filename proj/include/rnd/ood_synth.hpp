#pragma once

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "rnd/image.hpp"
#include "rnd/nn/encoder.hpp"
#include "rnd/nn/linear.hpp"
#include "rnd/rng.hpp"
#include "rnd/saliency.hpp"
#include "rnd/transforms.hpp"

namespace rnd::ood {

/// Axis-aligned rectangular mask. An empty mask has side 0.
struct CoreMask {
    int height = 0;
    int width = 0;
    int top = 0;
    int left = 0;
    int side_h = 0;
    int side_w = 0;
    double alpha = 0.0;

    bool contains(int y, int x) const {
        return y >= top && y < top + side_h && x >= left && x < left + side_w;
    }
    int area() const { return side_h * side_w; }
    bool empty() const { return area() == 0; }
    /// Dense 0/1 grid, row-major.
    std::vector<std::uint8_t> dense() const;
};

/// Side of the square window covering alpha of the image:
/// round(sqrt(alpha*H*W)) clipped to [min_side, min(H,W)].
int window_side(int height, int width, double alpha, int min_side = 1);

/// Saliency-maximizing square window; ties go to the smallest row-major
/// anchor. InputError unless 0 < alpha <= 1.
CoreMask select_core_mask(const saliency::SaliencyMap& sm, double alpha, int min_side = 1);

/// Mask placed at a given anchor (no search).
CoreMask mask_at(int height, int width, int top, int left, int side_h, int side_w, double alpha);

enum class Strategy { core, global, random_region };
std::string_view to_string(Strategy s);
/// ConfigError for unknown names.
Strategy strategy_from_string(std::string_view name);

struct CraftOptions {
    double alpha_lo = 0.20;
    double alpha_hi = 0.50;
    int hard_count = 2;
    /// Test hooks. forced_alpha = 0 produces an empty mask.
    std::optional<double> forced_alpha;
    bool force_full_mask = false;
};

struct CraftResult {
    Image image;
    CoreMask mask;
    /// Applied in reverse order: hard.back() first.
    std::vector<transforms::TransformSpec> hard;
};

/// Hard-transform chain: tau2 then tau1 for two specs {tau1, tau2}.
Image apply_hard_chain(const std::vector<transforms::TransformSpec>& hard, const Image& img);

/// Crops the mask rectangle, runs the hard chain on it and pastes it back;
/// every pixel outside the mask is copied from `img`.
Image composite(const Image& img, const CoreMask& mask, const std::vector<transforms::TransformSpec>& hard);

/// Saliency-guided crafting with a precomputed (cached) map. One value is
/// drawn from `rng`; alpha and hard specs come from streams derived from it.
CraftResult craft_ood(const Image& img, const saliency::SaliencyMap& sm, const transforms::Registry& registry,
                      Rng& rng, const CraftOptions& opts = {});

/// As above, computing the style-agnostic saliency with a light transform
/// drawn from the same derived streams.
CraftResult craft_ood(const Image& img, const nn::Encoder<float>& encoder, const nn::Linear<float>& classifier,
                      const transforms::Registry& registry, Rng& rng, const CraftOptions& opts = {});

/// Hard chain over the whole image. Uses the same streams as craft_ood so a
/// forced full mask reproduces it.
Image craft_ood_global(const Image& img, const transforms::Registry& registry, Rng& rng,
                       const CraftOptions& opts = {});

/// Uniformly placed window of the same size rule.
CraftResult craft_ood_random_region(const Image& img, const transforms::Registry& registry, Rng& rng,
                                    const CraftOptions& opts = {});

/// Light transform used for a sample's style-agnostic saliency, given the
/// sample's seed.
transforms::TransformSpec saliency_light(const transforms::Registry& registry, std::uint64_t seed);

}  // namespace rnd::ood
