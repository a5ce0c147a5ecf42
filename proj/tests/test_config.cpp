#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <functional>

#include "rnd/config.hpp"
#include "rnd/errors.hpp"
#include "rnd/pipeline.hpp"

using namespace rnd;

namespace {

std::string error_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST(Config, EmptyTextIsTheValidDefault) {
    const auto c = config::parse("");
    EXPECT_NO_THROW(config::validate(c));
    EXPECT_EQ(c.train.lr, 1e-4);
    EXPECT_EQ(c.train.weight_decay, 1e-5);
    EXPECT_EQ(c.train.gamma, 0.2);
    EXPECT_EQ(c.train.epochs, 50);
    EXPECT_EQ(c.train.craft.alpha_lo, 0.2);
    EXPECT_EQ(c.train.craft.alpha_hi, 0.5);
    EXPECT_EQ(c.train.craft.hard_count, 2);
    EXPECT_EQ(c.data.image_size, 32);
}

TEST(Config, NegativeGammaNamesTheKey) {
    auto c = config::parse("loss.gamma = -1\n");
    EXPECT_NE(error_of([&] { config::validate(c); }).find("loss.gamma"), std::string::npos);
}

TEST(Config, AlphaRangeIsChecked) {
    auto c = config::parse("ood.alpha_min = 0.6\nood.alpha_max = 0.3\n");
    EXPECT_THROW(config::validate(c), ConfigError);
    c = config::parse("ood.alpha_max = 1.5\n");
    EXPECT_NE(error_of([&] { config::validate(c); }).find("alpha_max"), std::string::npos);
}

TEST(Config, UnknownKeyNamesTheLine) {
    const auto msg = error_of([] { config::parse("seed = 1\n# note\nloss.gama = 0.3\n", "exp.txt"); });
    EXPECT_NE(msg.find("exp.txt:3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("loss.gama"), std::string::npos) << msg;
}

TEST(Config, DuplicateAndMalformedLinesAreRejected) {
    EXPECT_THROW(config::parse("seed = 1\nseed = 2\n"), ConfigError);
    EXPECT_THROW(config::parse("trainer.epochs = many\n"), ConfigError);
    EXPECT_THROW(config::parse("no equals sign here\n"), ConfigError);
    EXPECT_THROW(config::parse("ood.strategy = somewhere\n"), ConfigError);
}

TEST(Config, MissingPathsFailValidation) {
    auto c = config::parse("data.dir = /definitely/not/here\n");
    EXPECT_NE(error_of([&] { config::validate(c); }).find("data.dir"), std::string::npos);
}

TEST(Config, EchoRoundTripsExactly) {
    const std::string text =
        "seed = 7\nloss.gamma = 0.35\nood.strategy = global\nood.alpha_min = 0.1\nood.alpha_max = 0.3\n"
        "data.exposure = 0.05\ntrainer.preset = appendix\nmodel.student_init = pretrained\n"
        "transforms.hard = rotation, elastic\nloss.variant = g_setup_b\ntheory.severities = 0, 0.5, 1\n";
    const auto c = config::parse(text);
    const auto echoed = config::echo(c);
    const auto again = config::parse(echoed);
    EXPECT_TRUE(c == again);
    EXPECT_EQ(config::echo(again), echoed);
}

TEST(Config, PresetSetsLearningRateUnlessOverridden) {
    auto c = config::parse("trainer.preset = appendix\n");
    EXPECT_EQ(c.train.lr, 5e-5);
    EXPECT_EQ(c.train.weight_decay, 1e-4);
    c = config::parse("trainer.lr = 3e-4\ntrainer.preset = appendix\n");
    EXPECT_EQ(c.train.lr, 3e-4);
    EXPECT_EQ(c.train.weight_decay, 1e-4);
}

TEST(Config, OverridesApplyAfterTheFile) {
    auto c = config::parse("seed = 3\n");
    config::apply_overrides(c, {"seed=9", "loss.ce = false"});
    EXPECT_EQ(c.seed, 9u);
    EXPECT_FALSE(c.train.use_ce);
    EXPECT_THROW(config::apply_overrides(c, {"bogus=1"}), ConfigError);
}

TEST(Config, EveryKeyIsDocumented) {
    const auto keys = config::documented_keys();
    EXPECT_GT(keys.size(), 40u);
    for (const auto& [k, doc] : keys) EXPECT_FALSE(doc.empty()) << k;
}

TEST(Ablation, SetupsCarryTheirComponents) {
    auto a = config::parse("");
    config::apply_overrides(a, pipeline::setup_overrides('A'));
    EXPECT_FALSE(a.train.ood_enabled);
    EXPECT_FALSE(a.train.use_ce);
    EXPECT_FALSE(a.train.use_heads);
    EXPECT_EQ(a.train.variant, objectives::Variant::ts);

    auto e = config::parse("");
    config::apply_overrides(e, pipeline::setup_overrides('E'));
    EXPECT_TRUE(e.train.ood_enabled);
    EXPECT_TRUE(e.train.use_ce);
    EXPECT_TRUE(e.train.use_heads);
    EXPECT_EQ(e.train.variant, objectives::Variant::ocl);
    EXPECT_EQ(e.train.strategy, ood::Strategy::core);

    auto d = config::parse("");
    config::apply_overrides(d, pipeline::setup_overrides('D'));
    EXPECT_EQ(d.train.strategy, ood::Strategy::random_region);
    EXPECT_THROW(pipeline::setup_overrides('F'), ConfigError);
}

TEST(Ablation, GroupsExpandToValidConfigs) {
    for (const auto& g : pipeline::ablation_groups()) {
        const auto rows = pipeline::ablation_rows(g);
        EXPECT_FALSE(rows.empty()) << g;
        for (const auto& r : rows) {
            auto c = config::parse("");
            config::apply_overrides(c, r.overrides);
            EXPECT_NO_THROW(config::validate(c)) << g << "/" << r.name;
        }
    }
    EXPECT_EQ(pipeline::ablation_rows("exposure").size(), 4u);
    EXPECT_EQ(pipeline::ablation_rows("masks").size(), 6u);
    EXPECT_THROW(pipeline::ablation_rows("nonsense"), ConfigError);
}
