#include "rnd/ood_synth.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "rnd/errors.hpp"

namespace rnd::ood {

namespace {

struct Streams {
    Rng alpha;
    Rng hard;
    Rng light;
    Rng anchor;
};

Streams split(Rng& rng) {
    const std::uint64_t base = rng();
    return {make_rng(base, {tag("alpha")}), make_rng(base, {tag("hard")}), make_rng(base, {tag("light")}),
            make_rng(base, {tag("anchor")})};
}

std::vector<transforms::TransformSpec> draw_hard(const transforms::Registry& registry, Rng& rng, int count) {
    if (count == 1) return {registry.sample_hard(rng)};
    if (count == 2) {
        auto [t1, t2] = registry.sample_hard_pair(rng);
        return {t1, t2};
    }
    throw ConfigError("ood.hard_count must be 1 or 2, got " + std::to_string(count));
}

double draw_alpha(const CraftOptions& opts, Rng& rng) {
    if (opts.forced_alpha) return *opts.forced_alpha;
    if (!(opts.alpha_lo > 0.0 && opts.alpha_lo <= opts.alpha_hi && opts.alpha_hi <= 1.0)) {
        throw ConfigError("alpha range must satisfy 0 < lo <= hi <= 1");
    }
    return uniform(rng, opts.alpha_lo, opts.alpha_hi);
}

CoreMask full_mask(const Image& img) { return mask_at(img.height, img.width, 0, 0, img.height, img.width, 1.0); }

CraftResult finish(const Image& img, CoreMask mask, std::vector<transforms::TransformSpec> hard) {
    CraftResult r;
    r.image = composite(img, mask, hard);
    r.mask = mask;
    r.hard = std::move(hard);
    return r;
}

}  // namespace

std::vector<std::uint8_t> CoreMask::dense() const {
    std::vector<std::uint8_t> m(static_cast<std::size_t>(height) * width, 0);
    for (int y = top; y < top + side_h; ++y) {
        for (int x = left; x < left + side_w; ++x) m[static_cast<std::size_t>(y) * width + x] = 1;
    }
    return m;
}

int window_side(int height, int width, double alpha, int min_side) {
    const int limit = std::min(height, width);
    const int s = static_cast<int>(std::lround(std::sqrt(alpha * height * width)));
    return std::clamp(s, std::min(min_side, limit), limit);
}

CoreMask mask_at(int height, int width, int top, int left, int side_h, int side_w, double alpha) {
    if (top < 0 || left < 0 || top + side_h > height || left + side_w > width) {
        throw InputError("mask window outside image");
    }
    CoreMask m;
    m.height = height;
    m.width = width;
    m.top = top;
    m.left = left;
    m.side_h = side_h;
    m.side_w = side_w;
    m.alpha = alpha;
    return m;
}

CoreMask select_core_mask(const saliency::SaliencyMap& sm, double alpha, int min_side) {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw InputError("alpha must lie in (0, 1], got " + std::to_string(alpha));
    const int h = sm.height;
    const int w = sm.width;
    if (h < 1 || w < 1) throw InputError("empty saliency map");
    const int s = window_side(h, w, alpha, min_side);

    // prefix[(y)*(w+1)+x] = sum of sm over rows < y, cols < x
    std::vector<double> prefix(static_cast<std::size_t>(h + 1) * (w + 1), 0.0);
    for (int y = 0; y < h; ++y) {
        double row = 0.0;
        for (int x = 0; x < w; ++x) {
            row += sm.at(y, x);
            prefix[static_cast<std::size_t>(y + 1) * (w + 1) + x + 1] = prefix[static_cast<std::size_t>(y) * (w + 1) + x + 1] + row;
        }
    }
    const auto p = [&](int y, int x) { return prefix[static_cast<std::size_t>(y) * (w + 1) + x]; };
    int best_y = 0;
    int best_x = 0;
    double best = -1.0;
    for (int y = 0; y + s <= h; ++y) {
        for (int x = 0; x + s <= w; ++x) {
            const double sum = p(y + s, x + s) - p(y, x + s) - p(y + s, x) + p(y, x);
            if (sum > best) {
                best = sum;
                best_y = y;
                best_x = x;
            }
        }
    }
    return mask_at(h, w, best_y, best_x, s, s, alpha);
}

Image apply_hard_chain(const std::vector<transforms::TransformSpec>& hard, const Image& img) {
    Image out = img;
    for (auto it = hard.rbegin(); it != hard.rend(); ++it) out = transforms::apply(*it, out);
    return out;
}

Image composite(const Image& img, const CoreMask& mask, const std::vector<transforms::TransformSpec>& hard) {
    if (mask.height != img.height || mask.width != img.width) throw InputError("mask and image differ in size");
    Image out = img;
    if (mask.empty()) return out;
    Image crop(img.channels, mask.side_h, mask.side_w);
    for (int c = 0; c < img.channels; ++c) {
        for (int y = 0; y < mask.side_h; ++y) {
            for (int x = 0; x < mask.side_w; ++x) crop.at(c, y, x) = img.at(c, mask.top + y, mask.left + x);
        }
    }
    const Image done = apply_hard_chain(hard, crop);
    for (int c = 0; c < img.channels; ++c) {
        for (int y = 0; y < mask.side_h; ++y) {
            for (int x = 0; x < mask.side_w; ++x) out.at(c, mask.top + y, mask.left + x) = done.at(c, y, x);
        }
    }
    return out;
}

namespace {

CraftResult craft_with(const Image& img, const saliency::SaliencyMap* sm, Streams& st,
                       const transforms::Registry& registry, const CraftOptions& opts, bool random_anchor) {
    const double alpha = draw_alpha(opts, st.alpha);
    auto hard = draw_hard(registry, st.hard, opts.hard_count);
    if (opts.force_full_mask) return finish(img, full_mask(img), std::move(hard));
    if (alpha <= 0.0) return finish(img, mask_at(img.height, img.width, 0, 0, 0, 0, 0.0), std::move(hard));
    CoreMask mask;
    if (random_anchor) {
        if (alpha > 1.0) throw InputError("alpha must lie in (0, 1]");
        const int s = window_side(img.height, img.width, alpha, transforms::kMinSide);
        const int top = uniform_int(st.anchor, 0, img.height - s);
        const int left = uniform_int(st.anchor, 0, img.width - s);
        mask = mask_at(img.height, img.width, top, left, s, s, alpha);
    } else {
        if (sm->height != img.height || sm->width != img.width) {
            throw InputError("saliency map and image differ in size");
        }
        mask = select_core_mask(*sm, alpha, transforms::kMinSide);
    }
    return finish(img, mask, std::move(hard));
}

}  // namespace

CraftResult craft_ood(const Image& img, const saliency::SaliencyMap& sm, const transforms::Registry& registry,
                      Rng& rng, const CraftOptions& opts) {
    Streams st = split(rng);
    return craft_with(img, &sm, st, registry, opts, false);
}

CraftResult craft_ood(const Image& img, const nn::Encoder<float>& encoder, const nn::Linear<float>& classifier,
                      const transforms::Registry& registry, Rng& rng, const CraftOptions& opts) {
    Streams st = split(rng);
    const auto light = registry.sample_light(st.light);
    const auto sm = saliency::style_agnostic_saliency(encoder, classifier, img, light);
    return craft_with(img, &sm, st, registry, opts, false);
}

Image craft_ood_global(const Image& img, const transforms::Registry& registry, Rng& rng, const CraftOptions& opts) {
    Streams st = split(rng);
    return apply_hard_chain(draw_hard(registry, st.hard, opts.hard_count), img);
}

CraftResult craft_ood_random_region(const Image& img, const transforms::Registry& registry, Rng& rng,
                                    const CraftOptions& opts) {
    Streams st = split(rng);
    return craft_with(img, nullptr, st, registry, opts, true);
}

transforms::TransformSpec saliency_light(const transforms::Registry& registry, std::uint64_t seed) {
    Rng rng = make_rng(seed, {tag("saliency-light")});
    return registry.sample_light(rng);
}

std::string_view to_string(Strategy s) {
    switch (s) {
        case Strategy::core: return "core";
        case Strategy::global: return "global";
        case Strategy::random_region: return "random_region";
    }
    return "?";
}

Strategy strategy_from_string(std::string_view name) {
    for (Strategy s : {Strategy::core, Strategy::global, Strategy::random_region}) {
        if (to_string(s) == name) return s;
    }
    throw ConfigError("unknown ood strategy '" + std::string(name) + "'");
}

}  // namespace rnd::ood
