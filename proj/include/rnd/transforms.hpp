#pragma once

#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "rnd/image.hpp"
#include "rnd/rng.hpp"

namespace rnd::transforms {

/// Light transforms preserve semantics; hard ones destroy them.
enum class Family { light, hard };

enum class Kind {
    color_jitter,
    hflip,
    grayscale,
    blur,
    translate,
    rotation,
    elastic,
    grid_distortion,
    channel_shuffle,
    cut_shuffle,
};

std::string_view to_string(Kind kind);
std::string_view to_string(Family family);
/// Throws ConfigError for unknown names.
Kind kind_from_string(std::string_view name);

/// Sampling range of one parameter. A non-empty `choices` list overrides
/// [lo, hi]; `integer` draws whole numbers in [lo, hi].
struct ParamRange {
    std::string name;
    double lo = 0.0;
    double hi = 0.0;
    bool integer = false;
    std::vector<double> choices{};

    bool contains(double v) const;
};

struct KindInfo {
    Kind kind;
    Family family;
    std::vector<ParamRange> params;
};

/// Every kind known to the library, with its family and parameter ranges.
const std::vector<KindInfo>& builtin_kinds();
const KindInfo& info(Kind kind);

struct TransformSpec {
    Kind kind = Kind::hflip;
    Family family = Family::light;
    std::map<std::string, double> params;

    double param(const std::string& name) const;
    friend bool operator==(const TransformSpec&, const TransformSpec&) = default;
};

std::string describe(const TransformSpec& spec);

/// The active light and hard member lists. Members must belong to the
/// family they are registered under; the two lists are therefore disjoint.
class Registry {
public:
    /// Full built-in families.
    Registry();
    Registry(std::vector<Kind> light, std::vector<Kind> hard);

    static Registry from_names(std::span<const std::string> light, std::span<const std::string> hard);

    const std::vector<Kind>& light() const { return light_; }
    const std::vector<Kind>& hard() const { return hard_; }

    TransformSpec sample_light(Rng& rng) const;
    std::pair<TransformSpec, TransformSpec> sample_hard_pair(Rng& rng) const;
    TransformSpec sample_hard(Rng& rng) const;

private:
    std::vector<Kind> light_;
    std::vector<Kind> hard_;
};

/// Draws parameters for `kind` uniformly over its registered ranges.
TransformSpec sample_params(Kind kind, Rng& rng);

/// Throws InputError when the spec's family or parameters are off-registry.
void validate(const TransformSpec& spec);

inline constexpr int kMinSide = 2;

/// Output has the input's shape; values are clipped to [0,1].
Image apply(const TransformSpec& spec, const Image& img);

/// True for transforms that move pixels (flip, translate).
bool is_geometric(const TransformSpec& spec);

/// Maps a per-pixel field computed on apply(spec, x) back into x's frame.
/// Identity for non-geometric specs. Only defined for light transforms.
Image unwarp(const TransformSpec& spec, const Image& field);

TransformSpec make_spec(Kind kind, std::map<std::string, double> params = {});

}  // namespace rnd::transforms
