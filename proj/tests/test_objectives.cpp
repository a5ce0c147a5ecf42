#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "rnd/errors.hpp"
#include "rnd/objectives.hpp"

using namespace rnd;
using objectives::Matrix;
using objectives::ViewLayout;

namespace {

// Numerical gradient of f at every entry of m.
template <typename F>
Matrix central_difference(Matrix m, F f, double h) {
    Matrix g(m.rows(), m.cols());
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            const double keep = m(r, c);
            m(r, c) = keep + h;
            const double up = f(m);
            m(r, c) = keep - h;
            const double down = f(m);
            m(r, c) = keep;
            g(r, c) = (up - down) / (2.0 * h);
        }
    }
    return g;
}

}  // namespace

TEST(Layout, PartnerIsFixedPointFreeInvolutionAndCounterpartShiftsByN) {
    for (int n = 1; n <= 6; ++n) {
        const ViewLayout l{n};
        for (int r = 0; r < l.views(); ++r) {
            EXPECT_NE(l.partner(r), r);
            EXPECT_EQ(l.partner(l.partner(r)), r);
            if (!l.is_ood(r)) {
                EXPECT_EQ(l.counterpart(r), r + n);
                EXPECT_TRUE(l.is_ood(l.counterpart(r)));
            }
        }
        const auto labels = l.labels();
        EXPECT_EQ(std::accumulate(labels.begin(), labels.end(), 0), 2 * n);
    }
}

TEST(Ocl, AllEqualSimilaritiesGiveFourLnFour) {
    // Identical rows make every cosine 1; any gamma.
    for (double gamma : {0.05, 0.2, 1.0, 3.0}) {
        Matrix s = Matrix::Constant(4, 5, 0.7);
        Matrix t = Matrix::Constant(4, 5, 2.0);
        EXPECT_NEAR(objectives::ocl_loss(s, t, ViewLayout{1}, gamma).value, 4.0 * std::log(4.0), 1e-6);
    }
}

TEST(Ocl, MatchesDoubleLoopOracle) {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        const int n = uniform_int(rng, 1, 8);
        const int dim = uniform_int(rng, 2, 12);
        const double gamma = uniform(rng, 0.1, 1.0);
        const Matrix s = oracle::random_features(rng, 4 * n, dim);
        const Matrix t = oracle::random_features(rng, 4 * n, dim);
        EXPECT_NEAR(objectives::ocl_loss(s, t, ViewLayout{n}, gamma).value, oracle::ocl(s, t, n, gamma), 1e-6)
            << "seed " << seed;
    }
}

TEST(Ocl, SampleOrderPermutationInvariance) {
    Rng rng(11);
    const int n = 5;
    const Matrix s = oracle::random_features(rng, 4 * n, 6);
    const Matrix t = oracle::random_features(rng, 4 * n, 6);
    const ViewLayout l{n};
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix sp = s, tp = t;
    for (int v = 0; v < 2; ++v) {
        for (int j = 0; j < n; ++j) {
            for (int off : {0, n}) {
                sp.row(l.row(v, j + off)) = s.row(l.row(v, perm[j] + off));
                tp.row(l.row(v, j + off)) = t.row(l.row(v, perm[j] + off));
            }
        }
    }
    EXPECT_NEAR(objectives::ocl_loss(s, t, l, 0.2).value, objectives::ocl_loss(sp, tp, l, 0.2).value, 1e-9);
}

TEST(Ocl, AlwaysPositive) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(seed + 1000);
        const int n = uniform_int(rng, 1, 6);
        const Matrix s = oracle::random_features(rng, 4 * n, 4);
        EXPECT_GT(objectives::ocl_loss(s, s, ViewLayout{n}, 0.2).value, 0.0);
    }
}

TEST(Ocl, RaisingSimilarityToAnOodViewIncreasesLoss) {
    // Teacher rows are orthonormal, so the anchor's cosine with each teacher
    // row is just its coordinate; a spare axis keeps the anchor at unit norm
    // while only one coordinate changes.
    const int n = 3;
    const ViewLayout l{n};
    const int views = l.views();
    Matrix t = Matrix::Zero(views, views + 1);
    for (int b = 0; b < views; ++b) t(b, b) = 1.0;
    Rng rng(3);
    Matrix s = oracle::random_features(rng, views, views + 1);
    const int anchor = l.row(0, 1);
    const int ood_view = l.row(1, n + 2);
    const auto loss_at = [&](double sim) {
        Matrix m = s;
        m.row(anchor).setConstant(0.1);
        m(anchor, ood_view) = sim;
        m(anchor, views) = 0.0;
        m(anchor, views) = std::sqrt(1.0 - m.row(anchor).squaredNorm());
        return objectives::ocl_loss(m, t, l, 0.2).value;
    };
    double prev = loss_at(-0.5);
    for (double sim : {-0.25, 0.0, 0.25, 0.5, 0.75}) {
        const double cur = loss_at(sim);
        EXPECT_GT(cur, prev) << "sim " << sim;
        prev = cur;
    }
}

TEST(Ocl, GradientMatchesFiniteDifferences) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(seed + 77);
        const int n = uniform_int(rng, 1, 4);
        const Matrix s = oracle::random_features(rng, 4 * n, 6);
        const Matrix t = oracle::random_features(rng, 4 * n, 6);
        const ViewLayout l{n};
        const Matrix g = objectives::ocl_loss(s, t, l, 0.3).grad_student;
        const Matrix fd = central_difference(s, [&](const Matrix& m) { return objectives::ocl_loss(m, t, l, 0.3).value; }, 1e-4);
        for (Eigen::Index i = 0; i < g.size(); ++i) {
            EXPECT_LT(oracle::rel_error(g.data()[i], fd.data()[i], 1e-6), 1e-3) << "seed " << seed << " entry " << i;
        }
    }
}

TEST(Ocl, RejectsNonPositiveGamma) {
    Matrix s = Matrix::Constant(4, 3, 1.0);
    EXPECT_THROW(objectives::ocl_loss(s, s, ViewLayout{1}, 0.0), InputError);
    EXPECT_THROW(objectives::ocl_loss(s, s, ViewLayout{1}, -1.0), InputError);
}

TEST(Ablation, SetupAWithIdenticalFeaturesIsZero) {
    Rng rng(1);
    const Matrix s = oracle::random_features(rng, 8, 5);
    EXPECT_NEAR(objectives::ablation_loss(objectives::Variant::g_setup_a, s, s, ViewLayout{2}, 0.2).value, 0.0, 1e-12);
}

TEST(Ablation, SetupDIsOneDirectionOfOcl) {
    Matrix s = Matrix::Constant(4, 5, 0.7);
    EXPECT_NEAR(objectives::ablation_loss(objectives::Variant::g_setup_d, s, s, ViewLayout{1}, 0.2).value,
                2.0 * std::log(4.0), 1e-6);
    Rng rng(9);
    const Matrix a = oracle::random_features(rng, 12, 4);
    const Matrix b = oracle::random_features(rng, 12, 4);
    EXPECT_NEAR(objectives::ablation_loss(objectives::Variant::g_setup_d, a, b, ViewLayout{3}, 0.4).value,
                oracle::ocl_direction(a, b, 3, 0.4), 1e-6);
}

TEST(Ablation, SetupBMatchesOracle) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(seed + 500);
        const int n = uniform_int(rng, 1, 8);
        const Matrix s = oracle::random_features(rng, 4 * n, 5);
        const Matrix t = oracle::random_features(rng, 4 * n, 5);
        EXPECT_NEAR(objectives::g_setup_b_loss(s, t, ViewLayout{n}, 0.25).value, oracle::g_setup_b(s, t, n, 0.25),
                    1e-6);
    }
}

TEST(Ablation, EveryVariantGradientMatchesFiniteDifferences) {
    Rng rng(21);
    const int n = 2;
    const Matrix s = oracle::random_features(rng, 4 * n, 5);
    const Matrix t = oracle::random_features(rng, 4 * n, 5);
    for (auto v : {objectives::Variant::ts, objectives::Variant::g_setup_a, objectives::Variant::g_setup_b,
                   objectives::Variant::g_setup_d}) {
        const Matrix g = objectives::ablation_loss(v, s, t, ViewLayout{n}, 0.3).grad_student;
        const Matrix fd = central_difference(
            s, [&](const Matrix& m) { return objectives::ablation_loss(v, m, t, ViewLayout{n}, 0.3).value; }, 1e-5);
        for (Eigen::Index i = 0; i < g.size(); ++i) {
            EXPECT_LT(oracle::rel_error(g.data()[i], fd.data()[i], 1e-6), 1e-3) << objectives::to_string(v);
        }
    }
}

TEST(MeanCosine, GradientAndValue) {
    Rng rng(8);
    const Matrix s = oracle::random_features(rng, 6, 4);
    const Matrix t = oracle::random_features(rng, 6, 4);
    double expect = 0.0;
    for (int r = 0; r < 6; ++r) expect -= oracle::cosine(s, r, t, r) / 6.0;
    const auto res = objectives::mean_cosine_loss(s, t);
    EXPECT_NEAR(res.value, expect, 1e-12);
    const Matrix fd =
        central_difference(s, [&](const Matrix& m) { return objectives::mean_cosine_loss(m, t).value; }, 1e-5);
    for (Eigen::Index i = 0; i < fd.size(); ++i) EXPECT_LT(oracle::rel_error(res.grad_student.data()[i], fd.data()[i], 1e-6), 1e-4);
}

TEST(CrossEntropy, UniformLogitsGiveLnTwo) {
    const Matrix logits = Matrix::Zero(5, 2);
    EXPECT_NEAR(objectives::ce_loss(logits, {0, 1, 0, 1, 1}).value, std::log(2.0), 1e-12);
}

TEST(CrossEntropy, SaturatedMarginIsNearZero) {
    Matrix logits(2, 2);
    logits << 20, 0, 0, 20;
    EXPECT_LT(objectives::ce_loss(logits, {0, 1}).value, 1e-8);
}

TEST(CrossEntropy, MatchesScalarOracleAndGradient) {
    Rng rng(4);
    Matrix logits = oracle::random_features(rng, 9, 2) * 3.0;
    std::vector<int> labels(9);
    for (auto& y : labels) y = uniform_int(rng, 0, 1);
    double expect = 0.0;
    for (int r = 0; r < 9; ++r) {
        const double z0 = logits(r, 0), z1 = logits(r, 1);
        const double p = std::exp(logits(r, labels[r])) / (std::exp(z0) + std::exp(z1));
        expect -= std::log(p) / 9.0;
    }
    const auto res = objectives::ce_loss(logits, labels);
    EXPECT_NEAR(res.value, expect, 1e-9);
    const Matrix fd = central_difference(logits, [&](const Matrix& m) { return objectives::ce_loss(m, labels).value; }, 1e-5);
    for (Eigen::Index i = 0; i < fd.size(); ++i) EXPECT_NEAR(res.grad_logits.data()[i], fd.data()[i], 1e-7);
}

TEST(Variants, NamesRoundTrip) {
    for (auto v : {objectives::Variant::ocl, objectives::Variant::ts, objectives::Variant::g_setup_a,
                   objectives::Variant::g_setup_b, objectives::Variant::g_setup_d}) {
        EXPECT_EQ(objectives::variant_from_string(objectives::to_string(v)), v);
    }
    EXPECT_THROW(objectives::variant_from_string("nope"), ConfigError);
}
