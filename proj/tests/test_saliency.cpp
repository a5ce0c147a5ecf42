#include <gtest/gtest.h>

#include <algorithm>

#include "oracles.hpp"
#include "rnd/model.hpp"
#include "rnd/saliency.hpp"

using namespace rnd;

namespace {

void expect_normalized(const saliency::SaliencyMap& m) {
    double mx = 0.0;
    for (double v : m.values) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
        mx = std::max(mx, v);
    }
    if (m.fallback) {
        for (double v : m.values) EXPECT_EQ(v, m.values.front());
    } else {
        EXPECT_DOUBLE_EQ(mx, 1.0);
    }
}

struct Toy {
    nn::Encoder<double> encoder{default_encoder_config()};
    nn::Linear<double> head{"head", 64, 4};
    explicit Toy(std::uint64_t seed) {
        Rng rng(seed);
        encoder.init(rng);
        head.init(rng);
    }
};

}  // namespace

TEST(Normalize, ZeroMapFallsBackToUniform) {
    const auto m = saliency::normalize(3, 3, std::vector<double>(9, 0.0));
    EXPECT_TRUE(m.fallback);
    for (double v : m.values) EXPECT_EQ(v, 1.0);
}

TEST(GradCam, NonPositiveWeightedSumGivesFallback) {
    nn::Batch<double> act(2, 1, 2, 2);
    for (auto& v : act.data) v = 1.0;
    nn::Linear<double> head("h", 2, 1);
    head.weight.value = {-1.0, -2.0};
    const auto m = saliency::cam_from_activation(act, head, 0, 4, 4);
    EXPECT_TRUE(m.fallback);
    expect_normalized(m);
}

TEST(GradCam, SingleCellPositiveIsAllOnes) {
    nn::Batch<double> act(1, 1, 1, 1);
    act.data[0] = 2.5;
    nn::Linear<double> head("h", 1, 1);
    head.weight.value = {0.7};
    const auto m = saliency::cam_from_activation(act, head, 0, 5, 5);
    EXPECT_FALSE(m.fallback);
    for (double v : m.values) EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(GradCam, TwoChannelToyMatchesHandCalculation) {
    // Score_t = sum_c W[t][c] * mean(A_c) + b_t, so the channel weight is
    // W[t][c] (the mean of a constant gradient W[t][c] / 16).
    nn::Batch<double> act(2, 1, 4, 4);
    for (int y = 0; y < 4; ++y) {
        for (int x = 0; x < 4; ++x) {
            act.at(0, 0, y, x) = y;      // rows 0..3
            act.at(1, 0, y, x) = x - 1;  // cols -1..2
        }
    }
    nn::Linear<double> head("h", 2, 2);
    head.weight.value = {0.5, -1.0,   // class 0
                         1.0, 2.0};   // class 1
    const double w0 = 1.0 / 16.0, w1 = 2.0 / 16.0;
    std::vector<double> expect(16);
    double mx = 0.0;
    for (int y = 0; y < 4; ++y) {
        for (int x = 0; x < 4; ++x) {
            const double v = std::max(0.0, w0 * y + w1 * (x - 1));
            expect[y * 4 + x] = v;
            mx = std::max(mx, v);
        }
    }
    const auto m = saliency::cam_from_activation(act, head, 1, 4, 4);
    for (int i = 0; i < 16; ++i) EXPECT_NEAR(m.values[i], expect[i] / mx, 1e-12);
}

TEST(GradCam, ScoreGradientMatchesFiniteDifferences) {
    Toy toy(3);
    Rng rng(4);
    const auto img = oracle::random_image(rng, 3, 32, 32);
    const auto taps = toy.encoder.forward(to_batch<double>(std::span<const Image>(&img, 1)), nullptr);
    auto act = taps[nn::kStages - 1];
    const int cls = saliency::argmax_class(act, toy.head);
    const auto grad = saliency::class_score_gradient(act, toy.head, cls);
    int significant = 0, good = 0;
    for (std::size_t i = 0; i < act.data.size(); ++i) {
        const double keep = act.data[i];
        act.data[i] = keep + 1e-3;
        const double up = saliency::class_scores(act, toy.head)[cls];
        act.data[i] = keep - 1e-3;
        const double down = saliency::class_scores(act, toy.head)[cls];
        act.data[i] = keep;
        const double fd = (up - down) / 2e-3;
        if (std::abs(grad.data[i]) <= 1e-4) continue;
        ++significant;
        good += oracle::rel_error(grad.data[i], fd) <= 1e-3;
    }
    ASSERT_GT(significant, 0);
    EXPECT_GE(good, 0.95 * significant);
}

TEST(GradCam, BackboneGradientMatchesFiniteDifferences) {
    Toy toy(5);
    Rng rng(6);
    const auto img = oracle::random_image(rng, 3, 16, 16);
    const auto batch = to_batch<double>(std::span<const Image>(&img, 1));
    const auto score = [&] {
        const auto t = toy.encoder.forward(batch, nullptr);
        return saliency::class_scores(t[nn::kStages - 1], toy.head)[0];
    };
    nn::Encoder<double>::Cache cache;
    const auto taps = toy.encoder.forward(batch, &cache);
    nn::Encoder<double>::Taps grads;
    grads[nn::kStages - 1] = saliency::class_score_gradient(taps[nn::kStages - 1], toy.head, 0);
    for (auto* p : toy.encoder.params()) p->zero_grad();
    toy.encoder.backward(cache, grads, nullptr);

    int significant = 0, good = 0;
    for (auto* p : toy.encoder.params()) {
        for (std::size_t i = 0; i < p->size(); i += 1 + p->size() / 40) {
            const double keep = p->value[i];
            p->value[i] = keep + 1e-6;
            const double up = score();
            p->value[i] = keep - 1e-6;
            const double down = score();
            p->value[i] = keep;
            const double fd = (up - down) / 2e-6;
            if (std::abs(p->grad[i]) <= 1e-4) continue;
            ++significant;
            good += oracle::rel_error(p->grad[i], fd) <= 1e-3;
        }
    }
    ASSERT_GT(significant, 50);
    EXPECT_GE(good, 0.95 * significant);
}

TEST(GradCam, OutputIsNormalizedAndImageSized) {
    Toy toy(7);
    Rng rng(8);
    for (int k = 0; k < 10; ++k) {
        const auto img = oracle::random_image(rng, 3, 32, 32);
        const auto m = saliency::grad_cam(toy.encoder, toy.head, img);
        EXPECT_EQ(m.height, 32);
        EXPECT_EQ(m.width, 32);
        expect_normalized(m);
    }
}

TEST(Combine, MatchesMultiplyThenNormalizeOracle) {
    Rng rng(9);
    for (int k = 0; k < 20; ++k) {
        const auto a = oracle::random_dyadic_map(rng, 12, 9);
        const auto b = oracle::random_dyadic_map(rng, 12, 9);
        const auto c = saliency::combine(a, b);
        std::vector<double> prod(a.values.size());
        double mx = 0.0;
        for (std::size_t i = 0; i < prod.size(); ++i) {
            prod[i] = a.values[i] * b.values[i];
            mx = std::max(mx, prod[i]);
        }
        if (mx == 0.0) {
            EXPECT_TRUE(c.fallback);
            continue;
        }
        for (std::size_t i = 0; i < prod.size(); ++i) EXPECT_NEAR(c.values[i], prod[i] / mx, 1e-9);
    }
}

TEST(Combine, ZeroFactorGivesFallback) {
    Rng rng(1);
    const auto a = oracle::random_dyadic_map(rng, 6, 6);
    const auto zero = saliency::normalize(6, 6, std::vector<double>(36, 0.0));
    const auto c = saliency::combine(a, zero);
    EXPECT_TRUE(c.fallback);
    expect_normalized(c);
}

TEST(StyleAgnostic, IdentityJitterSquaresTheMap) {
    AuxClassifier model;
    Rng rng(10);
    model.encoder.init(rng);
    model.classifier.init(rng);
    const auto img = oracle::random_image(rng, 3, 32, 32);
    const auto light = transforms::make_spec(transforms::Kind::color_jitter,
                                             {{"brightness", 0.0}, {"contrast", 0.0}, {"saturation", 0.0}});
    const auto base = saliency::grad_cam(model.encoder, model.classifier, img);
    const auto sa = saliency::style_agnostic_saliency(model.encoder, model.classifier, img, light);
    std::vector<double> sq(base.values.size());
    double mx = 0.0;
    for (std::size_t i = 0; i < sq.size(); ++i) mx = std::max(mx, sq[i] = base.values[i] * base.values[i]);
    for (std::size_t i = 0; i < sq.size(); ++i) EXPECT_NEAR(sa.values[i], sq[i] / mx, 1e-9);
}

TEST(StyleAgnostic, FlipConsistency) {
    AuxClassifier model;
    Rng rng(11);
    model.encoder.init(rng);
    model.classifier.init(rng);
    const auto flip = transforms::make_spec(transforms::Kind::hflip);
    for (int k = 0; k < 5; ++k) {
        const auto img = oracle::random_image(rng, 3, 32, 32);
        const auto a = saliency::style_agnostic_saliency(model.encoder, model.classifier, img, flip);
        const auto b = saliency::style_agnostic_saliency(model.encoder, model.classifier,
                                                         transforms::apply(flip, img), flip);
        for (int y = 0; y < 32; ++y) {
            for (int x = 0; x < 32; ++x) EXPECT_NEAR(a.at(y, x), b.at(y, 31 - x), 1e-6);
        }
    }
}

TEST(Batch, MatchesPerImageGradCam) {
    AuxClassifier model;
    Rng rng(12);
    model.encoder.init(rng);
    model.classifier.init(rng);
    std::vector<Image> imgs;
    for (int k = 0; k < 7; ++k) imgs.push_back(oracle::random_image(rng, 3, 32, 32));
    const auto maps = saliency::grad_cam_batch(model.encoder, model.classifier, imgs, 3);
    for (int k = 0; k < 7; ++k) {
        const auto one = saliency::grad_cam(model.encoder, model.classifier, imgs[k]);
        for (std::size_t i = 0; i < one.values.size(); ++i) EXPECT_NEAR(maps[k].values[i], one.values[i], 1e-5);
    }
}
