#include "rnd/transforms.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <sstream>

#include "rnd/errors.hpp"

namespace rnd::transforms {

namespace {

constexpr double kPi = 3.14159265358979323846;

const std::vector<KindInfo> kKinds = {
    {Kind::color_jitter, Family::light,
     {{"brightness", -0.4, 0.4}, {"contrast", -0.4, 0.4}, {"saturation", -0.4, 0.4}}},
    {Kind::hflip, Family::light, {}},
    {Kind::grayscale, Family::light, {}},
    {Kind::blur, Family::light, {{"sigma", 0.2, 1.0}}},
    {Kind::translate, Family::light, {{"dx", -0.1, 0.1}, {"dy", -0.1, 0.1}}},
    {Kind::rotation, Family::hard, {{"angle", 90, 270, false, {90, 180, 270}}}},
    {Kind::elastic, Family::hard, {{"magnitude", 0.06, 0.15}, {"field_seed", 0, 2147483647, true}}},
    {Kind::grid_distortion, Family::hard, {{"strength", 0.3, 0.6}, {"field_seed", 0, 2147483647, true}}},
    {Kind::channel_shuffle, Family::hard, {{"perm", 1, 5, true}}},
    {Kind::cut_shuffle, Family::hard, {{"perm", 1, 23, true}}},
};

float sample_bilinear(const Image& img, int c, double fy, double fx) {
    fy = std::clamp(fy, 0.0, static_cast<double>(img.height - 1));
    fx = std::clamp(fx, 0.0, static_cast<double>(img.width - 1));
    const int y0 = static_cast<int>(std::floor(fy));
    const int x0 = static_cast<int>(std::floor(fx));
    const int y1 = std::min(y0 + 1, img.height - 1);
    const int x1 = std::min(x0 + 1, img.width - 1);
    const double wy = fy - y0;
    const double wx = fx - x0;
    const double top = img.at(c, y0, x0) * (1.0 - wx) + img.at(c, y0, x1) * wx;
    const double bottom = img.at(c, y1, x0) * (1.0 - wx) + img.at(c, y1, x1) * wx;
    return static_cast<float>(top * (1.0 - wy) + bottom * wy);
}

/// Resamples every channel: out(y, x) = in(map(y, x)).
template <typename Map>
Image warp(const Image& img, Map&& map) {
    Image out(img.channels, img.height, img.width);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const auto [sy, sx] = map(y, x);
            for (int c = 0; c < img.channels; ++c) out.at(c, y, x) = sample_bilinear(img, c, sy, sx);
        }
    }
    return out;
}

Image hflip(const Image& img) {
    Image out(img.channels, img.height, img.width);
    for (int c = 0; c < img.channels; ++c) {
        for (int y = 0; y < img.height; ++y) {
            for (int x = 0; x < img.width; ++x) out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
        }
    }
    return out;
}

float luma(const Image& img, int y, int x) {
    if (img.channels < 3) return img.at(0, y, x);
    return 0.299f * img.at(0, y, x) + 0.587f * img.at(1, y, x) + 0.114f * img.at(2, y, x);
}

Image grayscale(const Image& img) {
    Image out(img.channels, img.height, img.width);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const float g = luma(img, y, x);
            for (int c = 0; c < img.channels; ++c) out.at(c, y, x) = g;
        }
    }
    return out;
}

Image color_jitter(const Image& img, double brightness, double contrast, double saturation) {
    Image out = img;
    // A zero delta must leave the image bit-identical, so each stage is
    // skipped rather than applied with factor 1.
    if (brightness != 0.0) {
        const float f = static_cast<float>(1.0 + brightness);
        for (auto& v : out.data) v = std::clamp(v * f, 0.0f, 1.0f);
    }
    if (contrast != 0.0) {
        double mean = 0.0;
        for (int y = 0; y < out.height; ++y) {
            for (int x = 0; x < out.width; ++x) mean += luma(out, y, x);
        }
        mean /= static_cast<double>(out.plane());
        const float m = static_cast<float>(mean);
        const float f = static_cast<float>(1.0 + contrast);
        for (auto& v : out.data) v = std::clamp((v - m) * f + m, 0.0f, 1.0f);
    }
    if (saturation != 0.0 && out.channels >= 3) {
        const float f = static_cast<float>(1.0 + saturation);
        for (int y = 0; y < out.height; ++y) {
            for (int x = 0; x < out.width; ++x) {
                const float g = luma(out, y, x);
                for (int c = 0; c < out.channels; ++c) {
                    out.at(c, y, x) = std::clamp((out.at(c, y, x) - g) * f + g, 0.0f, 1.0f);
                }
            }
        }
    }
    return out;
}

Image gaussian_blur(const Image& img, double sigma) {
    const int radius = std::clamp(static_cast<int>(std::ceil(2.0 * sigma)), 1, 2);
    std::vector<double> k(2 * radius + 1);
    double total = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
        total += k[i + radius];
    }
    for (auto& w : k) w /= total;

    Image tmp(img.channels, img.height, img.width);
    for (int c = 0; c < img.channels; ++c) {
        for (int y = 0; y < img.height; ++y) {
            for (int x = 0; x < img.width; ++x) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i) {
                    acc += k[i + radius] * img.at(c, y, std::clamp(x + i, 0, img.width - 1));
                }
                tmp.at(c, y, x) = static_cast<float>(acc);
            }
        }
    }
    Image out(img.channels, img.height, img.width);
    for (int c = 0; c < img.channels; ++c) {
        for (int y = 0; y < img.height; ++y) {
            for (int x = 0; x < img.width; ++x) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i) {
                    acc += k[i + radius] * tmp.at(c, std::clamp(y + i, 0, img.height - 1), x);
                }
                out.at(c, y, x) = static_cast<float>(acc);
            }
        }
    }
    return out;
}

Image translate(const Image& img, double dx, double dy) {
    const double sx = dx * img.width;
    const double sy = dy * img.height;
    return warp(img, [&](int y, int x) { return std::pair<double, double>{y - sy, x - sx}; });
}

Image rotate(const Image& img, int angle) {
    const int quarter = ((angle / 90) % 4 + 4) % 4;
    if (img.height == img.width) {
        const int n = img.width;
        Image out(img.channels, n, n);
        for (int c = 0; c < img.channels; ++c) {
            for (int y = 0; y < n; ++y) {
                for (int x = 0; x < n; ++x) {
                    float v = 0.0f;
                    switch (quarter) {
                        case 0: v = img.at(c, y, x); break;
                        case 1: v = img.at(c, x, n - 1 - y); break;
                        case 2: v = img.at(c, n - 1 - y, n - 1 - x); break;
                        default: v = img.at(c, n - 1 - x, y); break;
                    }
                    out.at(c, y, x) = v;
                }
            }
        }
        return out;
    }
    const double theta = quarter * kPi / 2.0;
    const double cs = std::cos(theta);
    const double sn = std::sin(theta);
    const double cy = (img.height - 1) / 2.0;
    const double cx = (img.width - 1) / 2.0;
    return warp(img, [&](int y, int x) {
        const double u = x - cx;
        const double v = y - cy;
        return std::pair<double, double>{cy + sn * u + cs * v, cx + cs * u - sn * v};
    });
}

Image elastic(const Image& img, double magnitude, std::uint64_t field_seed) {
    constexpr int kGrid = 4;
    Rng rng(field_seed);
    std::array<double, kGrid * kGrid> gx{}, gy{};
    const double amp = magnitude * std::max(img.height, img.width);
    for (int i = 0; i < kGrid * kGrid; ++i) {
        gx[i] = uniform(rng, -1.0, 1.0) * amp;
        gy[i] = uniform(rng, -1.0, 1.0) * amp;
    }
    auto field = [&](const std::array<double, kGrid * kGrid>& g, int y, int x) {
        const double fy = img.height > 1 ? static_cast<double>(y) * (kGrid - 1) / (img.height - 1) : 0.0;
        const double fx = img.width > 1 ? static_cast<double>(x) * (kGrid - 1) / (img.width - 1) : 0.0;
        const int y0 = std::min(static_cast<int>(fy), kGrid - 2);
        const int x0 = std::min(static_cast<int>(fx), kGrid - 2);
        const double wy = fy - y0;
        const double wx = fx - x0;
        return (g[y0 * kGrid + x0] * (1 - wx) + g[y0 * kGrid + x0 + 1] * wx) * (1 - wy) +
               (g[(y0 + 1) * kGrid + x0] * (1 - wx) + g[(y0 + 1) * kGrid + x0 + 1] * wx) * wy;
    };
    return warp(img, [&](int y, int x) {
        return std::pair<double, double>{y + field(gy, y, x), x + field(gx, y, x)};
    });
}

Image grid_distortion(const Image& img, double strength, std::uint64_t field_seed) {
    constexpr int kCells = 4;
    Rng rng(field_seed);
    auto boundaries = [&](int side) {
        std::array<double, kCells + 1> src{};
        std::array<double, kCells> steps{};
        double total = 0.0;
        for (int i = 0; i < kCells; ++i) {
            steps[i] = 1.0 + strength * uniform(rng, -1.0, 1.0);
            total += steps[i];
        }
        for (int i = 0; i < kCells; ++i) src[i + 1] = src[i] + steps[i] / total * (side - 1);
        return src;
    };
    const auto sx = boundaries(img.width);
    const auto sy = boundaries(img.height);
    auto remap = [](const std::array<double, kCells + 1>& src, int side, int p) {
        if (side <= 1) return 0.0;
        const double cell = static_cast<double>(side - 1) / kCells;
        const int i = std::min(static_cast<int>(p / cell), kCells - 1);
        const double t = (p - i * cell) / cell;
        return src[i] + t * (src[i + 1] - src[i]);
    };
    return warp(img, [&](int y, int x) {
        return std::pair<double, double>{remap(sy, img.height, y), remap(sx, img.width, x)};
    });
}

std::vector<int> nth_permutation(int count, int index) {
    std::vector<int> p(count);
    std::iota(p.begin(), p.end(), 0);
    for (int i = 0; i < index; ++i) std::next_permutation(p.begin(), p.end());
    return p;
}

Image channel_shuffle(const Image& img, int perm) {
    if (img.channels != 3) return img;
    const auto p = nth_permutation(3, perm);
    Image out(img.channels, img.height, img.width);
    for (int c = 0; c < 3; ++c) {
        std::copy_n(img.data.begin() + static_cast<std::ptrdiff_t>(p[c] * img.plane()), img.plane(),
                    out.data.begin() + static_cast<std::ptrdiff_t>(c * img.plane()));
    }
    return out;
}

Image cut_shuffle(const Image& img, int perm) {
    const auto p = nth_permutation(4, perm);
    const int qh = img.height / 2;
    const int qw = img.width / 2;
    Image out = img;
    for (int q = 0; q < 4; ++q) {
        const int dy = (q / 2) * qh;
        const int dx = (q % 2) * qw;
        const int sy = (p[q] / 2) * qh;
        const int sx = (p[q] % 2) * qw;
        for (int c = 0; c < img.channels; ++c) {
            for (int y = 0; y < qh; ++y) {
                for (int x = 0; x < qw; ++x) out.at(c, dy + y, dx + x) = img.at(c, sy + y, sx + x);
            }
        }
    }
    return out;
}

}  // namespace

std::string_view to_string(Kind kind) {
    switch (kind) {
        case Kind::color_jitter: return "color_jitter";
        case Kind::hflip: return "hflip";
        case Kind::grayscale: return "grayscale";
        case Kind::blur: return "blur";
        case Kind::translate: return "translate";
        case Kind::rotation: return "rotation";
        case Kind::elastic: return "elastic";
        case Kind::grid_distortion: return "grid_distortion";
        case Kind::channel_shuffle: return "channel_shuffle";
        case Kind::cut_shuffle: return "cut_shuffle";
    }
    return "unknown";
}

std::string_view to_string(Family family) { return family == Family::light ? "light" : "hard"; }

Kind kind_from_string(std::string_view name) {
    for (const auto& k : kKinds) {
        if (to_string(k.kind) == name) return k.kind;
    }
    throw ConfigError("unknown transform kind '" + std::string(name) + "'");
}

bool ParamRange::contains(double v) const {
    if (!choices.empty()) return std::find(choices.begin(), choices.end(), v) != choices.end();
    if (integer && v != std::floor(v)) return false;
    return v >= lo && v <= hi;
}

const std::vector<KindInfo>& builtin_kinds() { return kKinds; }

const KindInfo& info(Kind kind) {
    for (const auto& k : kKinds) {
        if (k.kind == kind) return k;
    }
    throw ConfigError("unregistered transform kind");
}

double TransformSpec::param(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) {
        throw InputError("transform " + std::string(to_string(kind)) + " lacks parameter '" + name + "'");
    }
    return it->second;
}

std::string describe(const TransformSpec& spec) {
    std::ostringstream os;
    os << to_string(spec.kind);
    if (!spec.params.empty()) {
        os << '(';
        bool first = true;
        for (const auto& [k, v] : spec.params) {
            os << (first ? "" : ", ") << k << '=' << v;
            first = false;
        }
        os << ')';
    }
    return os.str();
}

Registry::Registry() {
    for (const auto& k : kKinds) (k.family == Family::light ? light_ : hard_).push_back(k.kind);
}

Registry::Registry(std::vector<Kind> light, std::vector<Kind> hard)
    : light_(std::move(light)), hard_(std::move(hard)) {
    for (Kind k : light_) {
        if (info(k).family != Family::light) {
            throw ConfigError(std::string(to_string(k)) + " is not a light transform");
        }
    }
    for (Kind k : hard_) {
        if (info(k).family != Family::hard) {
            throw ConfigError(std::string(to_string(k)) + " is not a hard transform");
        }
    }
}

Registry Registry::from_names(std::span<const std::string> light, std::span<const std::string> hard) {
    std::vector<Kind> l, h;
    for (const auto& n : light) l.push_back(kind_from_string(n));
    for (const auto& n : hard) h.push_back(kind_from_string(n));
    return Registry(std::move(l), std::move(h));
}

TransformSpec sample_params(Kind kind, Rng& rng) {
    const auto& ki = info(kind);
    TransformSpec spec{kind, ki.family, {}};
    for (const auto& p : ki.params) {
        double v;
        if (!p.choices.empty()) {
            v = p.choices[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(p.choices.size()) - 1))];
        } else if (p.integer) {
            v = static_cast<double>(uniform_int(rng, static_cast<int>(p.lo), static_cast<int>(p.hi)));
        } else {
            v = uniform(rng, p.lo, p.hi);
        }
        spec.params[p.name] = v;
    }
    return spec;
}

TransformSpec Registry::sample_light(Rng& rng) const {
    if (light_.empty()) throw ConfigError("light transform registry is empty");
    const Kind k = light_[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(light_.size()) - 1))];
    return sample_params(k, rng);
}

TransformSpec Registry::sample_hard(Rng& rng) const {
    if (hard_.empty()) throw ConfigError("hard transform registry is empty");
    const Kind k = hard_[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(hard_.size()) - 1))];
    return sample_params(k, rng);
}

std::pair<TransformSpec, TransformSpec> Registry::sample_hard_pair(Rng& rng) const {
    TransformSpec first = sample_hard(rng);
    TransformSpec second = sample_hard(rng);
    return {std::move(first), std::move(second)};
}

void validate(const TransformSpec& spec) {
    const auto& ki = info(spec.kind);
    if (spec.family != ki.family) {
        throw InputError(std::string(to_string(spec.kind)) + " registered as " +
                         std::string(to_string(ki.family)));
    }
    for (const auto& p : ki.params) {
        auto it = spec.params.find(p.name);
        if (it == spec.params.end()) {
            throw InputError(std::string(to_string(spec.kind)) + " missing parameter " + p.name);
        }
        if (!p.contains(it->second)) {
            throw InputError(std::string(to_string(spec.kind)) + "." + p.name + " out of range");
        }
    }
    if (spec.params.size() != ki.params.size()) {
        throw InputError(std::string(to_string(spec.kind)) + " has unexpected parameters");
    }
}

TransformSpec make_spec(Kind kind, std::map<std::string, double> params) {
    TransformSpec spec{kind, info(kind).family, std::move(params)};
    validate(spec);
    return spec;
}

Image apply(const TransformSpec& spec, const Image& img) {
    validate(spec);
    if (img.height < kMinSide || img.width < kMinSide || img.channels < 1) {
        throw InputError("image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                         " is below the minimum " + std::to_string(kMinSide) + "x" +
                         std::to_string(kMinSide));
    }
    Image out;
    switch (spec.kind) {
        case Kind::color_jitter:
            out = color_jitter(img, spec.param("brightness"), spec.param("contrast"), spec.param("saturation"));
            break;
        case Kind::hflip: out = hflip(img); break;
        case Kind::grayscale: out = grayscale(img); break;
        case Kind::blur: out = gaussian_blur(img, spec.param("sigma")); break;
        case Kind::translate: out = translate(img, spec.param("dx"), spec.param("dy")); break;
        case Kind::rotation: out = rotate(img, static_cast<int>(spec.param("angle"))); break;
        case Kind::elastic:
            out = elastic(img, spec.param("magnitude"), static_cast<std::uint64_t>(spec.param("field_seed")));
            break;
        case Kind::grid_distortion:
            out = grid_distortion(img, spec.param("strength"),
                                  static_cast<std::uint64_t>(spec.param("field_seed")));
            break;
        case Kind::channel_shuffle: out = channel_shuffle(img, static_cast<int>(spec.param("perm"))); break;
        case Kind::cut_shuffle: out = cut_shuffle(img, static_cast<int>(spec.param("perm"))); break;
    }
    clip_unit(out);
    return out;
}

bool is_geometric(const TransformSpec& spec) {
    return spec.kind == Kind::hflip || spec.kind == Kind::translate;
}

Image unwarp(const TransformSpec& spec, const Image& field) {
    if (spec.family != Family::light) throw InputError("unwarp is defined for light transforms only");
    switch (spec.kind) {
        case Kind::hflip: return hflip(field);
        case Kind::translate: return translate(field, -spec.param("dx"), -spec.param("dy"));
        default: return field;
    }
}

}  // namespace rnd::transforms
