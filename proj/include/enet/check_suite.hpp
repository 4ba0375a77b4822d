#pragma once

// Finite-difference verification drivers for every differentiable layer.
// Used by the grad-check CLI subcommand, the unit tests and the acceptance
// suite. All checks run in double precision.

#include <cstdint>
#include <string>
#include <vector>

#include "enet/grad_check.hpp"
#include "enet/layers.hpp"
#include "enet/rng.hpp"
#include "enet/tensor.hpp"

namespace enet {

struct GradCheckSummary {
    std::vector<GradCheckReport> reports;
    double max_rel_err = 0.0;
    bool pass = true;

    void add(GradCheckReport r) {
        max_rel_err = std::max(max_rel_err, r.max_rel_err);
        pass = pass && r.pass;
        reports.push_back(std::move(r));
    }
};

namespace detail {

inline void fill_normal(std::vector<double>& v, Rng& rng, double scale = 1.0) {
    for (double& x : v) x = rng.normal() * scale;
}

inline void fill_normal(Tensor4<double>& t, Rng& rng, double scale = 1.0) {
    for (double& x : t.storage()) x = rng.normal() * scale;
}

/// Keeps leaky-relu inputs away from the kink so central differences are valid.
inline void fill_away_from_zero(Tensor4<double>& t, Rng& rng, double margin = 0.05) {
    for (double& x : t.storage()) {
        double v = rng.normal();
        if (std::abs(v) < margin) v = v < 0 ? v - margin : v + margin;
        x = v;
    }
}

struct ConvGeom {
    std::size_t batch, n_out, n_in, kw, kh, w, h, sw, sh;
};

inline const std::vector<ConvGeom>& conv_geometries() {
    static const std::vector<ConvGeom> g{
        {1, 3, 2, 3, 3, 6, 6, 1, 1},
        {2, 2, 1, 3, 5, 6, 8, 1, 2},
        {1, 1, 4, 3, 3, 5, 7, 1, 1},
        {2, 2, 2, 5, 5, 8, 8, 2, 2},
    };
    return g;
}

}  // namespace detail

/// <G, conv2d(x; W, b)> checked against conv2d_backward.
inline GradCheckReport check_conv_instance(Rng& rng, const detail::ConvGeom& g, double h,
                                           double tol) {
    Tensor4<double> x(g.batch, g.n_in, g.w, g.h);
    detail::fill_normal(x, rng);
    auto p = make_conv<double>(g.n_out, g.n_in, g.kw, g.kh);
    detail::fill_normal(p.weights, rng, 0.5);
    detail::fill_normal(p.biases, rng, 0.5);
    const Stride s{g.sw, g.sh};
    auto out0 = conv2d(x, p, s);
    Tensor4<double> G(out0.batch(), out0.depth(), out0.width(), out0.height());
    detail::fill_normal(G, rng);

    auto grads = conv2d_backward(x, p, G, s);
    std::vector<double> point;
    point.insert(point.end(), x.flat().begin(), x.flat().end());
    point.insert(point.end(), p.weights.begin(), p.weights.end());
    point.insert(point.end(), p.biases.begin(), p.biases.end());
    std::vector<double> analytic;
    analytic.insert(analytic.end(), grads.input.flat().begin(), grads.input.flat().end());
    analytic.insert(analytic.end(), grads.weights.begin(), grads.weights.end());
    analytic.insert(analytic.end(), grads.biases.begin(), grads.biases.end());

    const std::size_t nx = x.size(), nw = p.weights.size();
    auto f = [&, nx, nw](const std::vector<double>& v) {
        Tensor4<double> xx(g.batch, g.n_in, g.w, g.h);
        std::copy(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(nx), xx.storage().begin());
        auto pp = p;
        std::copy(v.begin() + static_cast<std::ptrdiff_t>(nx),
                  v.begin() + static_cast<std::ptrdiff_t>(nx + nw), pp.weights.begin());
        std::copy(v.begin() + static_cast<std::ptrdiff_t>(nx + nw), v.end(), pp.biases.begin());
        return dot_flat(conv2d(xx, pp, s), G);
    };
    return grad_check("conv", f, point, analytic, h, tol);
}

/// <G, deconv2d(x; W, b)> checked against deconv2d_backward.
inline GradCheckReport check_deconv_instance(Rng& rng, const detail::ConvGeom& g, double h,
                                             double tol) {
    // reuse conv geometries: deconv input has the conv output's depth
    Tensor4<double> x(g.batch, g.n_out, g.w, g.h);
    detail::fill_normal(x, rng);
    auto p = make_deconv<double>(g.n_out, g.n_in, g.kw, g.kh);
    detail::fill_normal(p.weights, rng, 0.5);
    detail::fill_normal(p.biases, rng, 0.5);
    const Stride s{g.sw, g.sh};
    auto out0 = deconv2d(x, p, s);
    Tensor4<double> G(out0.batch(), out0.depth(), out0.width(), out0.height());
    detail::fill_normal(G, rng);

    auto grads = deconv2d_backward(x, p, G, s);
    std::vector<double> point;
    point.insert(point.end(), x.flat().begin(), x.flat().end());
    point.insert(point.end(), p.weights.begin(), p.weights.end());
    point.insert(point.end(), p.biases.begin(), p.biases.end());
    std::vector<double> analytic;
    analytic.insert(analytic.end(), grads.input.flat().begin(), grads.input.flat().end());
    analytic.insert(analytic.end(), grads.weights.begin(), grads.weights.end());
    analytic.insert(analytic.end(), grads.biases.begin(), grads.biases.end());

    const std::size_t nx = x.size(), nw = p.weights.size();
    auto f = [&, nx, nw](const std::vector<double>& v) {
        Tensor4<double> xx(g.batch, g.n_out, g.w, g.h);
        std::copy(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(nx), xx.storage().begin());
        auto pp = p;
        std::copy(v.begin() + static_cast<std::ptrdiff_t>(nx),
                  v.begin() + static_cast<std::ptrdiff_t>(nx + nw), pp.weights.begin());
        std::copy(v.begin() + static_cast<std::ptrdiff_t>(nx + nw), v.end(), pp.biases.begin());
        return dot_flat(deconv2d(xx, pp, s), G);
    };
    return grad_check("deconv", f, point, analytic, h, tol);
}

/// <G, batchnorm(x; scale, shift)> in the given mode.
inline GradCheckReport check_batchnorm_instance(Rng& rng, BnMode mode, double h, double tol) {
    const std::size_t batch = 4, channels = 3, w = 4, hh = 5;
    Tensor4<double> x(batch, channels, w, hh);
    detail::fill_normal(x, rng, 1.5);
    auto p = make_batchnorm<double>(channels);
    detail::fill_normal(p.weights, rng, 0.5);
    for (double& v : p.weights) v += 1.0;
    detail::fill_normal(p.biases, rng, 0.5);
    for (std::size_t c = 0; c < channels; ++c) {
        p.bn_running_mean[c] = rng.normal() * 0.3;
        p.bn_running_var[c] = 0.5 + rng.uniform();
    }
    auto fwd = batchnorm(x, p, mode);
    Tensor4<double> G(batch, channels, w, hh);
    detail::fill_normal(G, rng);
    auto grads = batchnorm_backward(x, p, fwd, G, mode);

    std::vector<double> point;
    point.insert(point.end(), x.flat().begin(), x.flat().end());
    point.insert(point.end(), p.weights.begin(), p.weights.end());
    point.insert(point.end(), p.biases.begin(), p.biases.end());
    std::vector<double> analytic;
    analytic.insert(analytic.end(), grads.input.flat().begin(), grads.input.flat().end());
    analytic.insert(analytic.end(), grads.weights.begin(), grads.weights.end());
    analytic.insert(analytic.end(), grads.biases.begin(), grads.biases.end());

    const std::size_t nx = x.size(), nc = channels;
    auto f = [&, nx, nc](const std::vector<double>& v) {
        Tensor4<double> xx(batch, channels, w, hh);
        std::copy(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(nx), xx.storage().begin());
        auto pp = p;
        std::copy(v.begin() + static_cast<std::ptrdiff_t>(nx),
                  v.begin() + static_cast<std::ptrdiff_t>(nx + nc), pp.weights.begin());
        std::copy(v.begin() + static_cast<std::ptrdiff_t>(nx + nc), v.end(), pp.biases.begin());
        return dot_flat(batchnorm(xx, pp, mode).output, G);
    };
    return grad_check(mode == BnMode::train ? "batchnorm(train)" : "batchnorm(infer)", f, point,
                      analytic, h, tol);
}

/// <G, W x + b>.
inline GradCheckReport check_dense_instance(Rng& rng, double h, double tol) {
    const std::size_t batch = 3, n_in = 10, n_out = 6;
    Tensor4<double> x(batch, n_in, 1, 1);
    detail::fill_normal(x, rng);
    auto p = make_dense<double>(n_out, n_in);
    detail::fill_normal(p.weights, rng, 0.5);
    detail::fill_normal(p.biases, rng, 0.5);
    Tensor4<double> G(batch, n_out, 1, 1);
    detail::fill_normal(G, rng);
    auto grads = dense_backward(x, p, G);

    std::vector<double> point;
    point.insert(point.end(), x.flat().begin(), x.flat().end());
    point.insert(point.end(), p.weights.begin(), p.weights.end());
    point.insert(point.end(), p.biases.begin(), p.biases.end());
    std::vector<double> analytic;
    analytic.insert(analytic.end(), grads.input.flat().begin(), grads.input.flat().end());
    analytic.insert(analytic.end(), grads.weights.begin(), grads.weights.end());
    analytic.insert(analytic.end(), grads.biases.begin(), grads.biases.end());

    const std::size_t nx = x.size(), nw = p.weights.size();
    auto f = [&, nx, nw](const std::vector<double>& v) {
        Tensor4<double> xx(batch, n_in, 1, 1);
        std::copy(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(nx), xx.storage().begin());
        auto pp = p;
        std::copy(v.begin() + static_cast<std::ptrdiff_t>(nx),
                  v.begin() + static_cast<std::ptrdiff_t>(nx + nw), pp.weights.begin());
        std::copy(v.begin() + static_cast<std::ptrdiff_t>(nx + nw), v.end(), pp.biases.begin());
        return dot_flat(dense(xx, pp), G);
    };
    return grad_check("dense", f, point, analytic, h, tol);
}

inline GradCheckReport check_leaky_relu_instance(Rng& rng, double h, double tol) {
    Tensor4<double> x(2, 2, 4, 4);
    detail::fill_away_from_zero(x, rng);
    Tensor4<double> G(2, 2, 4, 4);
    detail::fill_normal(G, rng);
    auto grads = leaky_relu_backward(x, G);
    std::vector<double> point(x.flat().begin(), x.flat().end());
    std::vector<double> analytic(grads.flat().begin(), grads.flat().end());
    auto f = [&](const std::vector<double>& v) {
        Tensor4<double> xx(2, 2, 4, 4);
        std::copy(v.begin(), v.end(), xx.storage().begin());
        return dot_flat(leaky_relu(xx), G);
    };
    return grad_check("leaky_relu", f, point, analytic, h, tol);
}

inline GradCheckReport check_sigmoid_instance(Rng& rng, double h, double tol) {
    Tensor4<double> x(2, 2, 4, 4);
    detail::fill_normal(x, rng, 2.0);
    Tensor4<double> G(2, 2, 4, 4);
    detail::fill_normal(G, rng);
    auto out = sigmoid(x);
    auto grads = sigmoid_backward_from_output(out, G);
    std::vector<double> point(x.flat().begin(), x.flat().end());
    std::vector<double> analytic(grads.flat().begin(), grads.flat().end());
    auto f = [&](const std::vector<double>& v) {
        Tensor4<double> xx(2, 2, 4, 4);
        std::copy(v.begin(), v.end(), xx.storage().begin());
        return dot_flat(sigmoid(xx), G);
    };
    return grad_check("sigmoid", f, point, analytic, h, tol);
}

/// conv -> batchnorm(train) -> leaky_relu composite, gradients w.r.t. the
/// conv input chained through all three backward passes.
inline GradCheckReport check_conv_stack_instance(Rng& rng, double h, double tol) {
    const std::size_t batch = 3, n_in = 2, n_out = 3, w = 5, hh = 6;
    Tensor4<double> x(batch, n_in, w, hh);
    detail::fill_normal(x, rng);
    auto conv = make_conv<double>(n_out, n_in, 3, 3);
    detail::fill_normal(conv.weights, rng, 0.5);
    detail::fill_normal(conv.biases, rng, 0.3);
    auto bn = make_batchnorm<double>(n_out);
    detail::fill_normal(bn.weights, rng, 0.3);
    for (double& v : bn.weights) v += 1.0;
    detail::fill_normal(bn.biases, rng, 0.3);
    const Stride s{1, 1};

    auto forward = [&](const Tensor4<double>& xin) {
        auto c = conv2d(xin, conv, s);
        auto b = batchnorm(c, bn, BnMode::train);
        return std::pair{c, b};
    };
    auto [c0, b0] = forward(x);
    Tensor4<double> G(b0.output.batch(), b0.output.depth(), b0.output.width(),
                      b0.output.height());
    detail::fill_normal(G, rng);

    auto g_relu = leaky_relu_backward(b0.output, G);
    auto g_bn = batchnorm_backward(c0, bn, b0, g_relu, BnMode::train);
    auto g_conv = conv2d_backward(x, conv, g_bn.input, s);

    std::vector<double> point(x.flat().begin(), x.flat().end());
    std::vector<double> analytic(g_conv.input.flat().begin(), g_conv.input.flat().end());
    auto f = [&](const std::vector<double>& v) {
        Tensor4<double> xx(batch, n_in, w, hh);
        std::copy(v.begin(), v.end(), xx.storage().begin());
        auto [c, b] = forward(xx);
        return dot_flat(leaky_relu(b.output), G);
    };
    return grad_check("conv_stack", f, point, analytic, h, tol);
}

/// Runs `instances` random checks per layer type. Affine layers (dense) are
/// additionally checked at h=1e-6 against the tighter 1e-8 bound.
inline GradCheckSummary run_layer_grad_checks(std::size_t instances, double h, double tol,
                                              std::uint64_t seed) {
    GradCheckSummary s;
    Rng rng(seed);
    const auto& geoms = detail::conv_geometries();
    for (std::size_t i = 0; i < instances; ++i) {
        s.add(check_conv_instance(rng, geoms[i % geoms.size()], h, tol));
        s.add(check_deconv_instance(rng, geoms[i % geoms.size()], h, tol));
        s.add(check_batchnorm_instance(rng, BnMode::train, h, tol));
        s.add(check_batchnorm_instance(rng, BnMode::infer, h, tol));
        s.add(check_dense_instance(rng, h, tol));
        s.add(check_leaky_relu_instance(rng, h, tol));
        s.add(check_sigmoid_instance(rng, h, tol * 0.01));  // smooth map, tighter bound
        s.add(check_conv_stack_instance(rng, h, tol));
    }
    return s;
}

}  // namespace enet
