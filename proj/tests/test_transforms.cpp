#include <gtest/gtest.h>

#include <set>

#include "oracles.hpp"
#include "rnd/errors.hpp"
#include "rnd/transforms.hpp"

using namespace rnd;
using transforms::Kind;

TEST(Registry, FamiliesAreDisjointAndCoverTheBuiltins) {
    const transforms::Registry reg;
    std::set<Kind> light(reg.light().begin(), reg.light().end());
    for (Kind k : reg.hard()) EXPECT_FALSE(light.count(k)) << transforms::to_string(k);
    EXPECT_EQ(light.size() + reg.hard().size(), transforms::builtin_kinds().size());
    for (Kind k : reg.light()) EXPECT_EQ(transforms::info(k).family, transforms::Family::light);
    for (Kind k : reg.hard()) EXPECT_EQ(transforms::info(k).family, transforms::Family::hard);
}

TEST(Registry, WrongFamilyMemberIsRejected) {
    EXPECT_THROW(transforms::Registry({Kind::rotation}, {Kind::elastic}), ConfigError);
    EXPECT_THROW(transforms::Registry({Kind::hflip}, {Kind::blur}), ConfigError);
}

TEST(SampleLight, DeterministicAndInFamily) {
    const transforms::Registry reg;
    const std::set<Kind> allowed{Kind::color_jitter, Kind::hflip, Kind::grayscale, Kind::blur, Kind::translate};
    std::set<Kind> seen;
    for (std::uint64_t s = 0; s < 1000; ++s) {
        Rng a(s), b(s);
        const auto x = reg.sample_light(a);
        EXPECT_EQ(x, reg.sample_light(b));
        EXPECT_TRUE(allowed.count(x.kind));
        EXPECT_NO_THROW(transforms::validate(x));
        seen.insert(x.kind);
    }
    EXPECT_GE(seen.size(), 3u);
}

TEST(SampleHard, PairDeterministicAndBothSlotsVary) {
    const transforms::Registry reg;
    const std::set<Kind> allowed{Kind::rotation, Kind::elastic, Kind::grid_distortion, Kind::channel_shuffle,
                                 Kind::cut_shuffle};
    std::set<Kind> first, second;
    for (std::uint64_t s = 0; s < 1000; ++s) {
        Rng a(s), b(s);
        const auto p = reg.sample_hard_pair(a);
        EXPECT_EQ(p, reg.sample_hard_pair(b));
        EXPECT_TRUE(allowed.count(p.first.kind));
        EXPECT_TRUE(allowed.count(p.second.kind));
        EXPECT_NO_THROW(transforms::validate(p.first));
        EXPECT_NO_THROW(transforms::validate(p.second));
        if (p.first.kind == Kind::rotation) EXPECT_GE(p.first.param("angle"), 90.0);
        first.insert(p.first.kind);
        second.insert(p.second.kind);
    }
    EXPECT_GE(first.size(), 2u);
    EXPECT_GE(second.size(), 2u);
}

TEST(Apply, HflipIsAnInvolution) {
    Rng rng(1);
    const auto img = oracle::random_image(rng, 3, 9, 13);
    const auto f = transforms::make_spec(Kind::hflip);
    EXPECT_EQ(transforms::apply(f, transforms::apply(f, img)), img);
}

TEST(Apply, GrayscaleEqualizesChannels) {
    Rng rng(2);
    const auto out = transforms::apply(transforms::make_spec(Kind::grayscale), oracle::random_image(rng, 3, 8, 8));
    for (int y = 0; y < 8; ++y) {
        for (int x = 0; x < 8; ++x) {
            EXPECT_EQ(out.at(0, y, x), out.at(1, y, x));
            EXPECT_EQ(out.at(1, y, x), out.at(2, y, x));
        }
    }
}

TEST(Apply, QuarterTurnOfTwoByTwoMatchesHandPermutation) {
    // [[a, b], [c, d]] turned a quarter counter-clockwise is [[b, d], [a, c]].
    Image img(1, 2, 2);
    img.at(0, 0, 0) = 0.1f;
    img.at(0, 0, 1) = 0.2f;
    img.at(0, 1, 0) = 0.3f;
    img.at(0, 1, 1) = 0.4f;
    const auto out = transforms::apply(transforms::make_spec(Kind::rotation, {{"angle", 90}}), img);
    EXPECT_EQ(out.at(0, 0, 0), 0.2f);
    EXPECT_EQ(out.at(0, 0, 1), 0.4f);
    EXPECT_EQ(out.at(0, 1, 0), 0.1f);
    EXPECT_EQ(out.at(0, 1, 1), 0.3f);
    const auto full = transforms::make_spec(Kind::rotation, {{"angle", 180}});
    EXPECT_EQ(transforms::apply(full, transforms::apply(full, img)), img);
}

TEST(Apply, LightSpecsPreserveShapeRangeAndAreDeterministic) {
    const transforms::Registry reg;
    for (std::uint64_t s = 0; s < 200; ++s) {
        Rng rng(s);
        const auto img = oracle::random_image(rng, 3, 16, 16);
        const auto spec = reg.sample_light(rng);
        const auto a = transforms::apply(spec, img);
        EXPECT_TRUE(a.same_shape(img));
        for (float v : a.data) {
            EXPECT_GE(v, 0.0f);
            EXPECT_LE(v, 1.0f);
        }
        EXPECT_EQ(a, transforms::apply(spec, img));
    }
}

TEST(Apply, HardSpecsChangeNonConstantImages) {
    const transforms::Registry reg;
    for (std::uint64_t s = 0; s < 300; ++s) {
        Rng rng(s);
        const auto img = oracle::random_image(rng, 3, 16, 16);
        const auto spec = reg.sample_hard(rng);
        EXPECT_NE(transforms::apply(spec, img), img) << transforms::describe(spec);
    }
}

TEST(Apply, OffRegistryParametersAreRejected) {
    EXPECT_THROW(transforms::validate(transforms::make_spec(Kind::rotation, {{"angle", 45}})), InputError);
    EXPECT_THROW(transforms::validate(transforms::make_spec(Kind::blur, {{"sigma", 9.0}})), InputError);
}

TEST(Unwarp, FlipAndTranslateMapBack) {
    Rng rng(3);
    const auto img = oracle::random_image(rng, 1, 10, 10);
    const auto f = transforms::make_spec(Kind::hflip);
    EXPECT_EQ(transforms::unwarp(f, transforms::apply(f, img)), img);
    EXPECT_TRUE(transforms::is_geometric(f));
    EXPECT_FALSE(transforms::is_geometric(transforms::make_spec(Kind::grayscale)));
}

TEST(Names, KindsRoundTrip) {
    for (const auto& k : transforms::builtin_kinds()) {
        EXPECT_EQ(transforms::kind_from_string(transforms::to_string(k.kind)), k.kind);
    }
    EXPECT_THROW(transforms::kind_from_string("sepia"), ConfigError);
}
