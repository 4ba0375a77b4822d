#include <gtest/gtest.h>

#include <cmath>

#include "enet/layers.hpp"
#include "enet/rng.hpp"
#include "oracles.hpp"

using enet::LayerParams;
using enet::Stride;
using enet::Tensor4;

namespace {

template <typename T>
void fill_random(Tensor4<T>& t, enet::Rng& rng, double scale = 1.0) {
    for (T& v : t.storage()) v = static_cast<T>(rng.normal() * scale);
}

template <typename T>
void fill_random(std::vector<T>& v, enet::Rng& rng, double scale = 1.0) {
    for (T& x : v) x = static_cast<T>(rng.normal() * scale);
}

double rel_frob_diff(const Tensor4<double>& a, const Tensor4<double>& b) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a.flat()[i] - b.flat()[i];
        num += d * d;
        den += a.flat()[i] * a.flat()[i];
    }
    return std::sqrt(num / (den > 0 ? den : 1.0));
}

// --- conv2d ----------------------------------------------------------------

TEST(Conv2d, DegenerateOneByOne) {
    const double c = 1.7, w = -2.3, b = 0.4;
    Tensor4<double> in(1, 1, 1, 1, c);
    auto p = enet::make_conv<double>(1, 1, 1, 1);
    p.weights[0] = w;
    p.biases[0] = b;
    auto out = enet::conv2d(in, p, Stride{1, 1});
    ASSERT_EQ(out.size(), 1u);
    EXPECT_DOUBLE_EQ(out(0, 0, 0, 0), c * w + b);
}

TEST(Conv2d, ConstantInputWindowSum) {
    Tensor4<double> in(1, 1, 32, 32, 1.0);
    auto p = enet::make_conv<double>(1, 1, 3, 5);
    std::fill(p.weights.begin(), p.weights.end(), 1.0);
    auto out = enet::conv2d(in, p, Stride{1, 2});
    ASSERT_EQ(out.width(), 32u);
    ASSERT_EQ(out.height(), 16u);
    // interior: 3x5 window fully inside the input
    for (std::size_t x = 1; x <= 30; ++x)
        for (std::size_t y = 1; y <= 14; ++y)
            ASSERT_DOUBLE_EQ(out(0, 0, x, y), 15.0) << "at (" << x << "," << y << ")";
}

TEST(Conv2d, MatchesNaiveReference) {
    enet::Rng rng(2024);
    Tensor4<double> in(1, 16, 8, 8);
    fill_random(in, rng);
    auto p = enet::make_conv<double>(16, 16, 3, 3);
    fill_random(p.weights, rng);
    fill_random(p.biases, rng);
    auto fast = enet::conv2d(in, p, Stride{1, 1});
    auto ref = oracle::naive_conv2d(in, p.weights, p.biases, 16, 16, 3, 3, 1, 1);
    ASSERT_TRUE(fast.same_shape(ref));
    EXPECT_LT(rel_frob_diff(fast, ref), 1e-12);
}

TEST(Conv2d, MatchesNaiveReferenceStridedAndRect) {
    enet::Rng rng(77);
    // geometry of the first encoder layer
    for (auto [sw, sh] : {std::pair<std::size_t, std::size_t>{1, 2}, {1, 1}, {2, 2}}) {
        Tensor4<double> in(2, 3, 12, 10);
        fill_random(in, rng);
        auto p = enet::make_conv<double>(4, 3, 3, 5);
        fill_random(p.weights, rng);
        fill_random(p.biases, rng);
        auto fast = enet::conv2d(in, p, Stride{sw, sh});
        auto ref = oracle::naive_conv2d(in, p.weights, p.biases, 4, 3, 3, 5, sw, sh);
        ASSERT_TRUE(fast.same_shape(ref));
        EXPECT_LT(rel_frob_diff(fast, ref), 1e-12);
    }
}

TEST(Conv2d, DepthMismatchRejected) {
    Tensor4<double> in(1, 2, 4, 4);
    auto p = enet::make_conv<double>(1, 3, 3, 3);
    EXPECT_THROW(enet::conv2d(in, p, Stride{1, 1}), enet::shape_error);
}

TEST(Conv2d, LinearityZeroBias) {
    enet::Rng rng(31);
    Tensor4<double> x(1, 2, 6, 6), y(1, 2, 6, 6);
    fill_random(x, rng);
    fill_random(y, rng);
    auto p = enet::make_conv<double>(3, 2, 3, 3);
    fill_random(p.weights, rng);
    const double a = rng.normal(), b = rng.normal();
    Tensor4<double> combo(1, 2, 6, 6);
    for (std::size_t i = 0; i < combo.size(); ++i)
        combo.flat()[i] = a * x.flat()[i] + b * y.flat()[i];
    auto lhs = enet::conv2d(combo, p, Stride{1, 1});
    auto cx = enet::conv2d(x, p, Stride{1, 1});
    auto cy = enet::conv2d(y, p, Stride{1, 1});
    Tensor4<double> rhs(1, 3, 6, 6);
    for (std::size_t i = 0; i < rhs.size(); ++i)
        rhs.flat()[i] = a * cx.flat()[i] + b * cy.flat()[i];
    EXPECT_LT(rel_frob_diff(lhs, rhs), 1e-10);
}

// --- conv2d_backward (non-FD parts) ----------------------------------------

TEST(Conv2dBackward, ZeroGradOutGivesZeroGrads) {
    enet::Rng rng(4);
    Tensor4<double> in(1, 2, 5, 5);
    fill_random(in, rng);
    auto p = enet::make_conv<double>(3, 2, 3, 3);
    fill_random(p.weights, rng);
    Tensor4<double> g(1, 3, 5, 5);  // zeros
    auto grads = enet::conv2d_backward(in, p, g, Stride{1, 1});
    for (double v : grads.input.storage()) EXPECT_EQ(v, 0.0);
    for (double v : grads.weights) EXPECT_EQ(v, 0.0);
    for (double v : grads.biases) EXPECT_EQ(v, 0.0);
}

TEST(Conv2dBackward, ScalarChainRule) {
    const double c = 0.9, w = 1.3;
    Tensor4<double> in(1, 1, 1, 1, c);
    auto p = enet::make_conv<double>(1, 1, 1, 1);
    p.weights[0] = w;
    Tensor4<double> g(1, 1, 1, 1, 1.0);
    auto grads = enet::conv2d_backward(in, p, g, Stride{1, 1});
    EXPECT_DOUBLE_EQ(grads.weights[0], c);
    EXPECT_DOUBLE_EQ(grads.input(0, 0, 0, 0), w);
    EXPECT_DOUBLE_EQ(grads.biases[0], 1.0);
}

TEST(Conv2dBackward, GradOutShapeMismatchRejected) {
    Tensor4<double> in(1, 1, 4, 4);
    auto p = enet::make_conv<double>(1, 1, 3, 3);
    Tensor4<double> g(1, 1, 3, 4);
    EXPECT_THROW(enet::conv2d_backward(in, p, g, Stride{1, 1}), enet::shape_error);
}

// --- deconv2d ----------------------------------------------------------------

TEST(Deconv2d, PointwiseScaling) {
    enet::Rng rng(8);
    Tensor4<double> in(1, 1, 3, 3);
    fill_random(in, rng);
    auto p = enet::make_deconv<double>(1, 1, 1, 1);
    p.weights[0] = 2.5;
    p.biases[0] = -0.75;
    auto out = enet::deconv2d(in, p, Stride{1, 1});
    ASSERT_TRUE(out.same_shape(in));
    for (std::size_t i = 0; i < in.size(); ++i)
        EXPECT_DOUBLE_EQ(out.flat()[i], 2.5 * in.flat()[i] - 0.75);
}

TEST(Deconv2d, OutputShapeContract) {
    Tensor4<double> in(1, 1, 4, 4, 0.5);
    auto p = enet::make_deconv<double>(1, 1, 3, 5);
    auto out = enet::deconv2d(in, p, Stride{1, 2});
    EXPECT_EQ(out.batch(), 1u);
    EXPECT_EQ(out.depth(), 1u);
    EXPECT_EQ(out.width(), 4u);
    EXPECT_EQ(out.height(), 8u);
}

TEST(Deconv2d, AdjointIdentity) {
    // <conv2d(x), y> == <x, deconv2d(y)> with shared kernels and zero biases
    enet::Rng rng(123);
    struct Geo {
        std::size_t n_out, n_in, kw, kh, w, h, sw, sh;
    };
    for (const Geo& g : {Geo{4, 3, 3, 3, 8, 8, 1, 1}, Geo{5, 2, 3, 5, 8, 12, 1, 2},
                         Geo{2, 2, 5, 5, 10, 10, 2, 2}}) {
        Tensor4<double> x(2, g.n_in, g.w, g.h);
        fill_random(x, rng);
        auto conv = enet::make_conv<double>(g.n_out, g.n_in, g.kw, g.kh);
        fill_random(conv.weights, rng);
        auto cx = enet::conv2d(x, conv, Stride{g.sw, g.sh});
        Tensor4<double> y(cx.batch(), cx.depth(), cx.width(), cx.height());
        fill_random(y, rng);

        auto deconv = enet::make_deconv<double>(g.n_out, g.n_in, g.kw, g.kh);
        deconv.weights = conv.weights;  // shared kernel
        auto dy = enet::deconv2d(y, deconv, Stride{g.sw, g.sh});
        ASSERT_TRUE(dy.same_shape(x));

        const double lhs = enet::dot_flat(cx, y);
        const double rhs = enet::dot_flat(x, dy);
        EXPECT_LT(std::abs(lhs - rhs) / std::max(std::abs(lhs), 1e-12), 1e-10);
    }
}

TEST(Deconv2dBackward, ZeroGradOutGivesZeroGrads) {
    enet::Rng rng(9);
    Tensor4<double> in(1, 3, 4, 4);
    fill_random(in, rng);
    auto p = enet::make_deconv<double>(3, 1, 3, 5);
    fill_random(p.weights, rng);
    Tensor4<double> g(1, 1, 4, 8);  // zeros
    auto grads = enet::deconv2d_backward(in, p, g, Stride{1, 2});
    for (double v : grads.input.storage()) EXPECT_EQ(v, 0.0);
    for (double v : grads.weights) EXPECT_EQ(v, 0.0);
    for (double v : grads.biases) EXPECT_EQ(v, 0.0);
}

TEST(Deconv2dBackward, ScalarChainRule) {
    const double c = -0.6, w = 0.8;
    Tensor4<double> in(1, 1, 1, 1, c);
    auto p = enet::make_deconv<double>(1, 1, 1, 1);
    p.weights[0] = w;
    Tensor4<double> g(1, 1, 1, 1, 1.0);
    auto grads = enet::deconv2d_backward(in, p, g, Stride{1, 1});
    EXPECT_DOUBLE_EQ(grads.weights[0], c);
    EXPECT_DOUBLE_EQ(grads.input(0, 0, 0, 0), w);
    EXPECT_DOUBLE_EQ(grads.biases[0], 1.0);
}

// --- batchnorm ---------------------------------------------------------------

TEST(BatchNorm, TrainStatsAreNormalized) {
    enet::Rng rng(55);
    Tensor4<double> in(8, 3, 6, 6);
    fill_random(in, rng, 2.0);
    for (double& v : in.storage()) v += 1.5;
    auto p = enet::make_batchnorm<double>(3);
    auto r = enet::batchnorm(in, p, enet::BnMode::train);
    const double n = 8 * 6 * 6;
    for (std::size_t c = 0; c < 3; ++c) {
        double mean = 0.0, var = 0.0;
        for (std::size_t b = 0; b < 8; ++b) {
            const double* out = r.output.plane(b, c);
            for (std::size_t i = 0; i < 36; ++i) mean += out[i];
        }
        mean /= n;
        for (std::size_t b = 0; b < 8; ++b) {
            const double* out = r.output.plane(b, c);
            for (std::size_t i = 0; i < 36; ++i) var += (out[i] - mean) * (out[i] - mean);
        }
        var /= n;
        EXPECT_LT(std::abs(mean), 1e-6);
        EXPECT_LT(std::abs(var - 1.0), 1e-5);
    }
}

TEST(BatchNorm, InferMatchesTrainWhenRunningEqualsBatch) {
    enet::Rng rng(56);
    Tensor4<double> in(4, 2, 5, 5);
    fill_random(in, rng);
    auto p = enet::make_batchnorm<double>(2);
    auto train = enet::batchnorm(in, p, enet::BnMode::train);

    auto p2 = p;
    // set running stats to the exact batch statistics
    for (std::size_t c = 0; c < 2; ++c) {
        p2.bn_running_mean[c] = train.mean[c];
        p2.bn_running_var[c] = 1.0 / (train.inv_std[c] * train.inv_std[c]) - p.bn_epsilon;
    }
    auto infer = enet::batchnorm(in, p2, enet::BnMode::infer);
    for (std::size_t i = 0; i < in.size(); ++i)
        EXPECT_NEAR(infer.output.flat()[i], train.output.flat()[i], 1e-6);
}

TEST(BatchNorm, RunningStatsUpdatedWithMomentum) {
    enet::Rng rng(57);
    Tensor4<double> in(4, 1, 3, 3);
    fill_random(in, rng);
    auto p = enet::make_batchnorm<double>(1);
    p.bn_running_mean[0] = 10.0;
    p.bn_running_var[0] = 4.0;
    auto r = enet::batchnorm(in, p, enet::BnMode::train);
    const double m = 0.9;
    EXPECT_NEAR(r.new_running_mean[0], m * 10.0 + (1 - m) * r.mean[0], 1e-12);
    const double batch_var = 1.0 / (r.inv_std[0] * r.inv_std[0]) - p.bn_epsilon;
    EXPECT_NEAR(r.new_running_var[0], m * 4.0 + (1 - m) * batch_var, 1e-9);
    // original params untouched
    EXPECT_EQ(p.bn_running_mean[0], 10.0);
    EXPECT_EQ(p.bn_running_var[0], 4.0);
}

TEST(BatchNorm, BatchOfOneRejectedInTrainMode) {
    Tensor4<double> in(1, 2, 4, 4, 1.0);
    auto p = enet::make_batchnorm<double>(2);
    EXPECT_THROW(enet::batchnorm(in, p, enet::BnMode::train), enet::shape_error);
    EXPECT_NO_THROW(enet::batchnorm(in, p, enet::BnMode::infer));
}

// --- activations -------------------------------------------------------------

TEST(LeakyRelu, PointwiseDefinition) {
    EXPECT_DOUBLE_EQ(enet::leaky_relu(2.0), 2.0);
    EXPECT_DOUBLE_EQ(enet::leaky_relu(-1.0), -0.3);
    EXPECT_DOUBLE_EQ(enet::leaky_relu(0.0), 0.0);

    enet::Rng rng(3);
    Tensor4<double> in(1, 1, 10, 10);
    fill_random(in, rng, 3.0);
    auto out = enet::leaky_relu(in);
    for (std::size_t i = 0; i < in.size(); ++i) {
        const double x = in.flat()[i];
        EXPECT_DOUBLE_EQ(out.flat()[i], x >= 0 ? x : 0.3 * x);
    }
}

TEST(LeakyRelu, BackwardSlopes) {
    Tensor4<double> in(1, 1, 1, 3);
    in(0, 0, 0, 0) = 2.0;
    in(0, 0, 0, 1) = -2.0;
    in(0, 0, 0, 2) = 0.0;
    Tensor4<double> g(1, 1, 1, 3, 1.0);
    auto gi = enet::leaky_relu_backward(in, g);
    EXPECT_DOUBLE_EQ(gi(0, 0, 0, 0), 1.0);
    EXPECT_DOUBLE_EQ(gi(0, 0, 0, 1), 0.3);
    EXPECT_DOUBLE_EQ(gi(0, 0, 0, 2), 1.0);  // slope 1 on the x >= 0 branch
}

TEST(Sigmoid, ValuesAndSymmetry) {
    EXPECT_DOUBLE_EQ(enet::sigmoid(0.0), 0.5);
    enet::Rng rng(17);
    for (int i = 0; i < 200; ++i) {
        const double x = rng.normal() * 5.0;
        EXPECT_NEAR(enet::sigmoid(x), 1.0 - enet::sigmoid(-x), 1e-12);
    }
}

TEST(Sigmoid, StableAtLargeInputs) {
    EXPECT_GT(enet::sigmoid(500.0), 0.0);
    EXPECT_LE(enet::sigmoid(500.0), 1.0);
    EXPECT_GT(enet::sigmoid(-500.0), 0.0);
    EXPECT_LT(enet::sigmoid(-500.0), 1e-100);
    EXPECT_TRUE(std::isfinite(enet::sigmoid(500.0)));
    EXPECT_TRUE(std::isfinite(enet::sigmoid(-500.0)));
}

// --- dense -------------------------------------------------------------------

TEST(Dense, IdentityMap) {
    auto p = enet::make_dense<double>(4, 4);
    for (std::size_t i = 0; i < 4; ++i) p.weights[i * 4 + i] = 1.0;
    std::vector<double> x{0.5, -1.0, 2.0, 3.5};
    EXPECT_EQ(enet::dense(x, p), x);
}

TEST(Dense, OnesRowSumsInput) {
    const std::size_t n = 7;
    auto p = enet::make_dense<double>(1, n);
    std::fill(p.weights.begin(), p.weights.end(), 1.0);
    std::vector<double> x(n, 1.0);
    auto y = enet::dense(x, p);
    ASSERT_EQ(y.size(), 1u);
    EXPECT_DOUBLE_EQ(y[0], static_cast<double>(n));
}

TEST(Dense, LengthMismatchRejected) {
    auto p = enet::make_dense<double>(2, 3);
    std::vector<double> x{1.0, 2.0};
    EXPECT_THROW(enet::dense(x, p), enet::shape_error);
}

// --- forward passes stay finite ---------------------------------------------

TEST(Layers, FiniteOutputsOnFiniteInputs) {
    enet::Rng rng(2718);
    Tensor4<double> in(3, 4, 8, 8);
    fill_random(in, rng, 10.0);
    auto conv = enet::make_conv<double>(4, 4, 3, 3);
    fill_random(conv.weights, rng, 5.0);
    fill_random(conv.biases, rng, 5.0);
    auto c = enet::conv2d(in, conv, Stride{1, 1});
    EXPECT_TRUE(c.finite());
    auto bn = enet::make_batchnorm<double>(4);
    auto b = enet::batchnorm(c, bn, enet::BnMode::train);
    EXPECT_TRUE(b.output.finite());
    EXPECT_TRUE(enet::leaky_relu(b.output).finite());
    EXPECT_TRUE(enet::sigmoid(b.output).finite());
}

}  // namespace
