#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <memory>
#include <vector>

#include "enet/parallel.hpp"
#include "enet/tensor.hpp"

namespace enet {

enum class LayerKind { conv, deconv, dense, batchnorm };

inline const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::conv: return "conv";
        case LayerKind::deconv: return "deconv";
        case LayerKind::dense: return "dense";
        case LayerKind::batchnorm: return "batchnorm";
    }
    return "?";
}

struct Stride {
    std::size_t w = 1;
    std::size_t h = 1;
};

/// Trainable state of one layer. Weight array interpretation by kind:
///   conv      wdims = (n_out, n_in, kw, kh)
///   deconv    wdims = (in_depth, out_depth, kw, kh); the array is the kernel
///             of the convolution this layer is the adjoint of, so a conv and
///             a deconv sharing weights satisfy <conv(x), y> = <x, deconv(y)>
///   dense     wdims = (n_out, n_in, 1, 1)
///   batchnorm wdims = (channels, 1, 1, 1); weights = scale, biases = shift
template <typename T>
struct LayerParams {
    LayerKind kind{};
    std::array<std::size_t, 4> wdims{};
    std::vector<T> weights;
    std::vector<T> biases;
    std::vector<T> bn_running_mean;
    std::vector<T> bn_running_var;
    T bn_momentum = T(0.9);
    T bn_epsilon = T(1e-5);

    std::size_t weight_count() const { return weights.size(); }
    std::size_t bias_count() const { return biases.size(); }
    /// Trainable parameters; batch-norm running statistics excluded.
    std::size_t trainable_count() const { return weights.size() + biases.size(); }
};

template <typename T>
LayerParams<T> make_conv(std::size_t n_out, std::size_t n_in, std::size_t kw, std::size_t kh) {
    LayerParams<T> p;
    p.kind = LayerKind::conv;
    p.wdims = {n_out, n_in, kw, kh};
    p.weights.assign(n_out * n_in * kw * kh, T(0));
    p.biases.assign(n_out, T(0));
    return p;
}

template <typename T>
LayerParams<T> make_deconv(std::size_t in_depth, std::size_t out_depth, std::size_t kw, std::size_t kh) {
    LayerParams<T> p;
    p.kind = LayerKind::deconv;
    p.wdims = {in_depth, out_depth, kw, kh};
    p.weights.assign(in_depth * out_depth * kw * kh, T(0));
    p.biases.assign(out_depth, T(0));
    return p;
}

template <typename T>
LayerParams<T> make_dense(std::size_t n_out, std::size_t n_in) {
    LayerParams<T> p;
    p.kind = LayerKind::dense;
    p.wdims = {n_out, n_in, 1, 1};
    p.weights.assign(n_out * n_in, T(0));
    p.biases.assign(n_out, T(0));
    return p;
}

template <typename T>
LayerParams<T> make_batchnorm(std::size_t channels, T momentum = T(0.9)) {
    LayerParams<T> p;
    p.kind = LayerKind::batchnorm;
    p.wdims = {channels, 1, 1, 1};
    p.weights.assign(channels, T(1));
    p.biases.assign(channels, T(0));
    p.bn_running_mean.assign(channels, T(0));
    p.bn_running_var.assign(channels, T(1));
    p.bn_momentum = momentum;
    return p;
}

template <typename T>
void validate_layer(const LayerParams<T>& p) {
    const auto& d = p.wdims;
    std::size_t expect = 0;
    switch (p.kind) {
        case LayerKind::conv:
        case LayerKind::deconv:
            expect = d[0] * d[1] * d[2] * d[3];
            break;
        case LayerKind::dense:
            expect = d[0] * d[1];
            break;
        case LayerKind::batchnorm:
            expect = d[0];
            if (p.bn_running_mean.size() != d[0] || p.bn_running_var.size() != d[0])
                throw shape_error("batchnorm: running stats size mismatch");
            for (T v : p.bn_running_var)
                if (!(v > T(0))) throw shape_error("batchnorm: running variance must be positive");
            if (!(p.bn_momentum > T(0) && p.bn_momentum < T(1)))
                throw config_error("batchnorm: momentum must lie in (0,1)");
            break;
    }
    if (p.weights.size() != expect)
        throw shape_error(std::string(layer_kind_name(p.kind)) + ": weight array size " +
                          std::to_string(p.weights.size()) + " does not match declared shape");
}

// ---------------------------------------------------------------------------
// "same" zero padding: output extent = ceil(in / stride) per axis.
// ---------------------------------------------------------------------------

struct PadAxis {
    std::size_t out = 0;
    std::size_t begin = 0;
    std::size_t padded = 0;
};

inline PadAxis same_pad_axis(std::size_t in, std::size_t k, std::size_t s) {
    PadAxis a;
    a.out = (in + s - 1) / s;
    const std::size_t reach = (a.out - 1) * s + k;
    const std::size_t total = reach > in ? reach - in : 0;
    a.begin = total / 2;
    a.padded = in + total;
    return a;
}

namespace detail {

/// Uninitialized scratch storage (std::vector would zero-fill every resize).
template <typename T>
class Buffer {
public:
    void ensure(std::size_t n) {
        if (n > cap_) {
            data_ = std::make_unique_for_overwrite<T[]>(n);
            cap_ = n;
        }
        size_ = n;
    }
    T* data() { return data_.get(); }
    const T* data() const { return data_.get(); }
    std::size_t size() const { return size_; }

private:
    std::unique_ptr<T[]> data_;
    std::size_t cap_ = 0;
    std::size_t size_ = 0;
};

/// Zero-padded copy of (b, d, w, h) planes with per-axis begin offsets.
template <typename T>
struct Padded {
    Buffer<T> buf;
    std::size_t b = 0, d = 0, pw = 0, ph = 0;

    T* row(std::size_t bi, std::size_t di, std::size_t x) {
        return buf.data() + ((bi * d + di) * pw + x) * ph;
    }
    const T* row(std::size_t bi, std::size_t di, std::size_t x) const {
        return buf.data() + ((bi * d + di) * pw + x) * ph;
    }
    void fill_zero() { std::memset(buf.data(), 0, buf.size() * sizeof(T)); }
};

template <typename T>
void pad_input(const Tensor4<T>& in, const PadAxis& ax, const PadAxis& ay, Padded<T>& out) {
    out.b = in.batch();
    out.d = in.depth();
    out.pw = ax.padded;
    out.ph = ay.padded;
    out.buf.ensure(out.b * out.d * out.pw * out.ph);
    const std::size_t w = in.width(), h = in.height();
    parallel_for(out.b * out.d, [&](std::size_t t) {
        const std::size_t bi = t / out.d, di = t % out.d;
        T* base = out.row(bi, di, 0);
        // top/bottom pad rows
        for (std::size_t x = 0; x < ax.begin; ++x)
            std::memset(base + x * out.ph, 0, out.ph * sizeof(T));
        for (std::size_t x = ax.begin + w; x < out.pw; ++x)
            std::memset(base + x * out.ph, 0, out.ph * sizeof(T));
        for (std::size_t x = 0; x < w; ++x) {
            T* prow = base + (x + ax.begin) * out.ph;
            for (std::size_t y = 0; y < ay.begin; ++y) prow[y] = T(0);
            std::memcpy(prow + ay.begin, in.row(bi, di, x), h * sizeof(T));
            for (std::size_t y = ay.begin + h; y < out.ph; ++y) prow[y] = T(0);
        }
    });
}

constexpr std::size_t kTileY = 16;

inline void check_stride(const Stride& s, const char* op) {
    if ((s.w != 1 && s.w != 2) || (s.h != 1 && s.h != 2))
        throw shape_error(std::string(op) + ": stride components must be 1 or 2, got (" +
                          std::to_string(s.w) + "," + std::to_string(s.h) + ")");
}

/// out(b,o,x,y) = bias[o] + sum_{d,u,v} pad(b,d, x*sw+u, y*sh+v) * W(o,d,u,v)
template <typename T>
void conv_core_forward(const Padded<T>& pad, const T* weights, const T* biases,
                       std::size_t n_out, std::size_t n_in, std::size_t kw, std::size_t kh,
                       const Stride& s, Tensor4<T>& out) {
    const std::size_t ow = out.width(), oh = out.height();
    parallel_for(out.batch() * n_out, [&](std::size_t task) {
        const std::size_t bi = task / n_out, o = task % n_out;
        const T* wko = weights + o * n_in * kw * kh;
        const T bias = biases ? biases[o] : T(0);
        for (std::size_t x = 0; x < ow; ++x) {
            for (std::size_t y0 = 0; y0 < oh; y0 += kTileY) {
                const std::size_t ny = std::min(kTileY, oh - y0);
                T acc[kTileY];
                for (std::size_t y = 0; y < kTileY; ++y) acc[y] = T(0);
                for (std::size_t d = 0; d < n_in; ++d) {
                    const T* wk = wko + d * kw * kh;
                    for (std::size_t u = 0; u < kw; ++u) {
                        const T* prow = pad.row(bi, d, x * s.w + u);
                        for (std::size_t v = 0; v < kh; ++v) {
                            const T wv = wk[u * kh + v];
                            if (s.h == 1) {
                                const T* src = prow + y0 + v;
                                if (ny == kTileY) {
                                    #pragma omp simd
                                    for (std::size_t y = 0; y < kTileY; ++y) acc[y] += wv * src[y];
                                } else {
                                    for (std::size_t y = 0; y < ny; ++y) acc[y] += wv * src[y];
                                }
                            } else {
                                const T* src = prow + y0 * s.h + v;
                                for (std::size_t y = 0; y < ny; ++y) acc[y] += wv * src[y * s.h];
                            }
                        }
                    }
                }
                T* orow = out.row(bi, o, x) + y0;
                for (std::size_t y = 0; y < ny; ++y) orow[y] = acc[y] + bias;
            }
        }
    });
}

/// pad(b,d, x*sw+u, y*sh+v) += sum_o g(b,o,x,y) * W(o,d,u,v)  — adjoint scatter.
template <typename T>
void conv_core_scatter(const Tensor4<T>& g, const T* weights,
                       std::size_t n_out, std::size_t n_in, std::size_t kw, std::size_t kh,
                       const Stride& s, Padded<T>& pad) {
    const std::size_t ow = g.width(), oh = g.height();
    parallel_for(g.batch() * n_in, [&](std::size_t task) {
        const std::size_t bi = task / n_in, d = task % n_in;
        for (std::size_t o = 0; o < n_out; ++o) {
            const T* wk = weights + (o * n_in + d) * kw * kh;
            for (std::size_t x = 0; x < ow; ++x) {
                const T* grow = g.row(bi, o, x);
                for (std::size_t u = 0; u < kw; ++u) {
                    T* prow = pad.row(bi, d, x * s.w + u);
                    for (std::size_t v = 0; v < kh; ++v) {
                        const T wv = wk[u * kh + v];
                        if (s.h == 1) {
                            T* dst = prow + v;
                            #pragma omp simd
                            for (std::size_t y = 0; y < oh; ++y) dst[y] += wv * grow[y];
                        } else {
                            for (std::size_t y = 0; y < oh; ++y) prow[y * s.h + v] += wv * grow[y];
                        }
                    }
                }
            }
        }
    });
}

/// gW(o,d,u,v) = sum_{b,x,y} g(b,o,x,y) * pad(b,d, x*sw+u, y*sh+v); gb(o) = sum g.
template <typename T>
void conv_core_weight_grad(const Tensor4<T>& g, const Padded<T>& pad,
                           std::size_t n_out, std::size_t n_in, std::size_t kw, std::size_t kh,
                           const Stride& s, T* grad_w, T* grad_b) {
    const std::size_t ow = g.width(), oh = g.height();
    const std::size_t batch = g.batch();
    parallel_for(n_out, [&](std::size_t o) {
        for (std::size_t d = 0; d < n_in; ++d) {
            for (std::size_t u = 0; u < kw; ++u) {
                for (std::size_t v = 0; v < kh; ++v) {
                    T acc = T(0);
                    for (std::size_t bi = 0; bi < batch; ++bi) {
                        for (std::size_t x = 0; x < ow; ++x) {
                            const T* grow = g.row(bi, o, x);
                            const T* prow = pad.row(bi, d, x * s.w + u) + v;
                            if (s.h == 1) {
                                #pragma omp simd reduction(+ : acc)
                                for (std::size_t y = 0; y < oh; ++y) acc += grow[y] * prow[y];
                            } else {
                                for (std::size_t y = 0; y < oh; ++y) acc += grow[y] * prow[y * s.h];
                            }
                        }
                    }
                    grad_w[((o * n_in + d) * kw + u) * kh + v] = acc;
                }
            }
        }
        if (grad_b) {
            T acc = T(0);
            for (std::size_t bi = 0; bi < batch; ++bi) {
                for (std::size_t x = 0; x < ow; ++x) {
                    const T* grow = g.row(bi, o, x);
                    #pragma omp simd reduction(+ : acc)
                    for (std::size_t y = 0; y < oh; ++y) acc += grow[y];
                }
            }
            grad_b[o] = acc;
        }
    });
}

/// Extract the interior (un-padded) region of a padded gradient buffer.
template <typename T>
void unpad(const Padded<T>& pad, const PadAxis& ax, const PadAxis& ay, Tensor4<T>& out) {
    parallel_for(out.batch() * out.depth(), [&](std::size_t t) {
        const std::size_t bi = t / out.depth(), di = t % out.depth();
        for (std::size_t x = 0; x < out.width(); ++x) {
            std::memcpy(out.row(bi, di, x), pad.row(bi, di, x + ax.begin) + ay.begin,
                        out.height() * sizeof(T));
        }
    });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

/// 2-D convolution with "same" zero padding.
/// Output spatial extent is ceil(in / stride) per axis.
template <typename T>
Tensor4<T> conv2d(const Tensor4<T>& input, const LayerParams<T>& params, const Stride& stride) {
    if (params.kind != LayerKind::conv)
        throw shape_error("conv2d: layer params are not a conv layer");
    detail::check_stride(stride, "conv2d");
    const auto [n_out, n_in, kw, kh] = params.wdims;
    if (input.depth() != n_in)
        throw shape_error("conv2d: input depth " + std::to_string(input.depth()) +
                          " does not match kernel depth " + std::to_string(n_in));
    const PadAxis ax = same_pad_axis(input.width(), kw, stride.w);
    const PadAxis ay = same_pad_axis(input.height(), kh, stride.h);
    detail::Padded<T> pad;
    detail::pad_input(input, ax, ay, pad);
    Tensor4<T> out(input.batch(), n_out, ax.out, ay.out);
    detail::conv_core_forward(pad, params.weights.data(), params.biases.data(),
                              n_out, n_in, kw, kh, stride, out);
    return out;
}

template <typename T>
struct LayerGrads {
    Tensor4<T> input;        // gradient w.r.t. the layer input
    std::vector<T> weights;  // gradient w.r.t. weights (scale for batchnorm)
    std::vector<T> biases;   // gradient w.r.t. biases (shift for batchnorm)
};

/// Gradients of <grad_out, conv2d(input)> w.r.t. input, weights and biases.
template <typename T>
LayerGrads<T> conv2d_backward(const Tensor4<T>& input, const LayerParams<T>& params,
                              const Tensor4<T>& grad_out, const Stride& stride) {
    if (params.kind != LayerKind::conv)
        throw shape_error("conv2d_backward: layer params are not a conv layer");
    detail::check_stride(stride, "conv2d_backward");
    const auto [n_out, n_in, kw, kh] = params.wdims;
    if (input.depth() != n_in)
        throw shape_error("conv2d_backward: input depth mismatch");
    const PadAxis ax = same_pad_axis(input.width(), kw, stride.w);
    const PadAxis ay = same_pad_axis(input.height(), kh, stride.h);
    if (grad_out.batch() != input.batch() || grad_out.depth() != n_out ||
        grad_out.width() != ax.out || grad_out.height() != ay.out)
        throw shape_error("conv2d_backward: grad_out shape " + grad_out.shape_str() +
                          " does not match conv output shape");

    LayerGrads<T> g;
    g.weights.assign(params.weights.size(), T(0));
    g.biases.assign(params.biases.size(), T(0));

    detail::Padded<T> pad;
    detail::pad_input(input, ax, ay, pad);
    detail::conv_core_weight_grad(grad_out, pad, n_out, n_in, kw, kh, stride,
                                  g.weights.data(), g.biases.data());

    detail::Padded<T> gpad;
    gpad.b = input.batch();
    gpad.d = n_in;
    gpad.pw = ax.padded;
    gpad.ph = ay.padded;
    gpad.buf.ensure(gpad.b * gpad.d * gpad.pw * gpad.ph);
    gpad.fill_zero();
    detail::conv_core_scatter(grad_out, params.weights.data(), n_out, n_in, kw, kh, stride, gpad);
    g.input = Tensor4<T>(input.batch(), n_in, input.width(), input.height());
    detail::unpad(gpad, ax, ay, g.input);
    return g;
}

// ---------------------------------------------------------------------------
// Transposed convolution (exact adjoint of conv2d with the same kernel)
// ---------------------------------------------------------------------------

/// Output spatial extent is in * stride per axis. With shared weights and zero
/// biases, <conv2d(x), y> == <x, deconv2d(y)> for matched geometry.
template <typename T>
Tensor4<T> deconv2d(const Tensor4<T>& input, const LayerParams<T>& params, const Stride& stride) {
    if (params.kind != LayerKind::deconv)
        throw shape_error("deconv2d: layer params are not a deconv layer");
    detail::check_stride(stride, "deconv2d");
    const auto [in_depth, out_depth, kw, kh] = params.wdims;
    if (input.depth() != in_depth)
        throw shape_error("deconv2d: input depth " + std::to_string(input.depth()) +
                          " does not match kernel input depth " + std::to_string(in_depth));
    const std::size_t out_w = input.width() * stride.w;
    const std::size_t out_h = input.height() * stride.h;
    // geometry of the convolution this layer transposes
    const PadAxis ax = same_pad_axis(out_w, kw, stride.w);
    const PadAxis ay = same_pad_axis(out_h, kh, stride.h);

    detail::Padded<T> pad;
    pad.b = input.batch();
    pad.d = out_depth;
    pad.pw = ax.padded;
    pad.ph = ay.padded;
    pad.buf.ensure(pad.b * pad.d * pad.pw * pad.ph);
    pad.fill_zero();
    detail::conv_core_scatter(input, params.weights.data(), in_depth, out_depth, kw, kh, stride, pad);

    Tensor4<T> out(input.batch(), out_depth, out_w, out_h);
    detail::unpad(pad, ax, ay, out);
    if (!params.biases.empty()) {
        parallel_for(out.batch() * out_depth, [&](std::size_t t) {
            const T bias = params.biases[t % out_depth];
            T* p = out.plane(t / out_depth, t % out_depth);
            for (std::size_t i = 0; i < out_w * out_h; ++i) p[i] += bias;
        });
    }
    return out;
}

/// Gradients of <grad_out, deconv2d(input)> w.r.t. input, weights and biases.
template <typename T>
LayerGrads<T> deconv2d_backward(const Tensor4<T>& input, const LayerParams<T>& params,
                                const Tensor4<T>& grad_out, const Stride& stride) {
    if (params.kind != LayerKind::deconv)
        throw shape_error("deconv2d_backward: layer params are not a deconv layer");
    detail::check_stride(stride, "deconv2d_backward");
    const auto [in_depth, out_depth, kw, kh] = params.wdims;
    if (input.depth() != in_depth)
        throw shape_error("deconv2d_backward: input depth mismatch");
    const std::size_t out_w = input.width() * stride.w;
    const std::size_t out_h = input.height() * stride.h;
    if (grad_out.batch() != input.batch() || grad_out.depth() != out_depth ||
        grad_out.width() != out_w || grad_out.height() != out_h)
        throw shape_error("deconv2d_backward: grad_out shape " + grad_out.shape_str() +
                          " does not match deconv output shape");

    const PadAxis ax = same_pad_axis(out_w, kw, stride.w);
    const PadAxis ay = same_pad_axis(out_h, kh, stride.h);
    detail::Padded<T> gpad;
    detail::pad_input(grad_out, ax, ay, gpad);

    LayerGrads<T> g;
    // d/d(input)<G, W^T input> = conv(G) with the shared kernel
    g.input = Tensor4<T>(input.batch(), in_depth, input.width(), input.height());
    detail::conv_core_forward(gpad, params.weights.data(), static_cast<const T*>(nullptr),
                              in_depth, out_depth, kw, kh, stride, g.input);
    // d/dW <G, deconv(input; W)> = d/dW <conv(G; W), input>
    g.weights.assign(params.weights.size(), T(0));
    detail::conv_core_weight_grad(input, gpad, in_depth, out_depth, kw, kh, stride,
                                  g.weights.data(), static_cast<T*>(nullptr));
    // bias is added to every output entry of channel c
    g.biases.assign(out_depth, T(0));
    for (std::size_t bi = 0; bi < grad_out.batch(); ++bi) {
        for (std::size_t c = 0; c < out_depth; ++c) {
            T acc = T(0);
            const T* p = grad_out.plane(bi, c);
            #pragma omp simd reduction(+ : acc)
            for (std::size_t i = 0; i < out_w * out_h; ++i) acc += p[i];
            g.biases[c] += acc;
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// Batch normalization (per depth channel over batch x width x height)
// ---------------------------------------------------------------------------

enum class BnMode { train, infer };

template <typename T>
struct BnResult {
    Tensor4<T> output;
    std::vector<T> new_running_mean;  // train mode only
    std::vector<T> new_running_var;
    std::vector<T> mean;      // statistics used for normalization (cache for backward)
    std::vector<T> inv_std;
};

template <typename T>
BnResult<T> batchnorm(const Tensor4<T>& input, const LayerParams<T>& params, BnMode mode) {
    if (params.kind != LayerKind::batchnorm)
        throw shape_error("batchnorm: layer params are not a batchnorm layer");
    const std::size_t channels = params.wdims[0];
    if (input.depth() != channels)
        throw shape_error("batchnorm: input depth " + std::to_string(input.depth()) +
                          " does not match channel count " + std::to_string(channels));
    if (mode == BnMode::train && input.batch() < 2)
        throw shape_error("batchnorm: train mode requires batch >= 2 (batch variance undefined)");

    const std::size_t batch = input.batch();
    const std::size_t spatial = input.width() * input.height();
    const T n = static_cast<T>(batch * spatial);

    BnResult<T> r;
    r.output = Tensor4<T>(batch, channels, input.width(), input.height());
    r.mean.assign(channels, T(0));
    r.inv_std.assign(channels, T(0));
    if (mode == BnMode::train) {
        r.new_running_mean = params.bn_running_mean;
        r.new_running_var = params.bn_running_var;
    }

    parallel_for(channels, [&](std::size_t c) {
        T mean, inv_std;
        if (mode == BnMode::train) {
            T sum = T(0);
            for (std::size_t bi = 0; bi < batch; ++bi) {
                const T* p = input.plane(bi, c);
                #pragma omp simd reduction(+ : sum)
                for (std::size_t i = 0; i < spatial; ++i) sum += p[i];
            }
            mean = sum / n;
            T ss = T(0);
            for (std::size_t bi = 0; bi < batch; ++bi) {
                const T* p = input.plane(bi, c);
                #pragma omp simd reduction(+ : ss)
                for (std::size_t i = 0; i < spatial; ++i) ss += (p[i] - mean) * (p[i] - mean);
            }
            const T var = ss / n;  // biased; running stats store the same quantity
            inv_std = T(1) / std::sqrt(var + params.bn_epsilon);
            const T m = params.bn_momentum;
            r.new_running_mean[c] = m * params.bn_running_mean[c] + (T(1) - m) * mean;
            r.new_running_var[c] = m * params.bn_running_var[c] + (T(1) - m) * var;
        } else {
            mean = params.bn_running_mean[c];
            inv_std = T(1) / std::sqrt(params.bn_running_var[c] + params.bn_epsilon);
        }
        r.mean[c] = mean;
        r.inv_std[c] = inv_std;
        const T scale = params.weights[c];
        const T shift = params.biases[c];
        const T a = scale * inv_std;
        const T b = shift - scale * inv_std * mean;
        for (std::size_t bi = 0; bi < batch; ++bi) {
            const T* p = input.plane(bi, c);
            T* q = r.output.plane(bi, c);
            #pragma omp simd
            for (std::size_t i = 0; i < spatial; ++i) q[i] = a * p[i] + b;
        }
    });
    return r;
}

/// Gradients of <grad_out, batchnorm(input)> w.r.t. input, scale and shift.
/// `cache` must come from the forward call being differentiated.
template <typename T>
LayerGrads<T> batchnorm_backward(const Tensor4<T>& input, const LayerParams<T>& params,
                                 const BnResult<T>& cache, const Tensor4<T>& grad_out,
                                 BnMode mode) {
    const std::size_t channels = params.wdims[0];
    if (!grad_out.same_shape(input))
        throw shape_error("batchnorm_backward: grad_out shape mismatch");
    const std::size_t batch = input.batch();
    const std::size_t spatial = input.width() * input.height();
    const T n = static_cast<T>(batch * spatial);

    LayerGrads<T> g;
    g.input = Tensor4<T>(batch, channels, input.width(), input.height());
    g.weights.assign(channels, T(0));
    g.biases.assign(channels, T(0));

    parallel_for(channels, [&](std::size_t c) {
        const T mean = cache.mean[c];
        const T inv_std = cache.inv_std[c];
        const T scale = params.weights[c];
        T sum_g = T(0), sum_gx = T(0);
        for (std::size_t bi = 0; bi < batch; ++bi) {
            const T* go = grad_out.plane(bi, c);
            const T* p = input.plane(bi, c);
            #pragma omp simd reduction(+ : sum_g, sum_gx)
            for (std::size_t i = 0; i < spatial; ++i) {
                sum_g += go[i];
                sum_gx += go[i] * (p[i] - mean) * inv_std;
            }
        }
        g.biases[c] = sum_g;
        g.weights[c] = sum_gx;
        if (mode == BnMode::train) {
            const T k = scale * inv_std / n;
            for (std::size_t bi = 0; bi < batch; ++bi) {
                const T* go = grad_out.plane(bi, c);
                const T* p = input.plane(bi, c);
                T* gi = g.input.plane(bi, c);
                #pragma omp simd
                for (std::size_t i = 0; i < spatial; ++i) {
                    const T xhat = (p[i] - mean) * inv_std;
                    gi[i] = k * (n * go[i] - sum_g - xhat * sum_gx);
                }
            }
        } else {
            const T a = scale * inv_std;
            for (std::size_t bi = 0; bi < batch; ++bi) {
                const T* go = grad_out.plane(bi, c);
                T* gi = g.input.plane(bi, c);
                #pragma omp simd
                for (std::size_t i = 0; i < spatial; ++i) gi[i] = a * go[i];
            }
        }
    });
    return g;
}

// ---------------------------------------------------------------------------
// Dense (affine) layer
// ---------------------------------------------------------------------------

/// Input is (batch, n_in, 1, 1); output (batch, n_out, 1, 1).
template <typename T>
Tensor4<T> dense(const Tensor4<T>& input, const LayerParams<T>& params) {
    if (params.kind != LayerKind::dense)
        throw shape_error("dense: layer params are not a dense layer");
    const std::size_t n_out = params.wdims[0], n_in = params.wdims[1];
    if (input.depth() * input.width() * input.height() != n_in)
        throw shape_error("dense: input length " +
                          std::to_string(input.depth() * input.width() * input.height()) +
                          " does not match weight input dimension " + std::to_string(n_in));
    Tensor4<T> out(input.batch(), n_out, 1, 1);
    parallel_for(input.batch(), [&](std::size_t bi) {
        const T* x = input.plane(bi, 0);
        T* y = out.plane(bi, 0);
        for (std::size_t o = 0; o < n_out; ++o) {
            const T* wrow = params.weights.data() + o * n_in;
            T acc = T(0);
            #pragma omp simd reduction(+ : acc)
            for (std::size_t i = 0; i < n_in; ++i) acc += wrow[i] * x[i];
            y[o] = acc + params.biases[o];
        }
    });
    return out;
}

/// Vector convenience overload: W x + b.
template <typename T>
std::vector<T> dense(const std::vector<T>& input, const LayerParams<T>& params) {
    Tensor4<T> t(1, input.size(), 1, 1);
    std::copy(input.begin(), input.end(), t.storage().begin());
    Tensor4<T> out = dense(t, params);
    return out.storage();
}

template <typename T>
LayerGrads<T> dense_backward(const Tensor4<T>& input, const LayerParams<T>& params,
                             const Tensor4<T>& grad_out) {
    const std::size_t n_out = params.wdims[0], n_in = params.wdims[1];
    if (input.depth() * input.width() * input.height() != n_in)
        throw shape_error("dense_backward: input length mismatch");
    if (grad_out.batch() != input.batch() ||
        grad_out.depth() * grad_out.width() * grad_out.height() != n_out)
        throw shape_error("dense_backward: grad_out length mismatch");

    LayerGrads<T> g;
    g.input = Tensor4<T>(input.batch(), input.depth(), input.width(), input.height());
    g.weights.assign(params.weights.size(), T(0));
    g.biases.assign(params.biases.size(), T(0));

    parallel_for(input.batch(), [&](std::size_t bi) {
        const T* go = grad_out.plane(bi, 0);
        T* gi = g.input.plane(bi, 0);
        for (std::size_t o = 0; o < n_out; ++o) {
            const T* wrow = params.weights.data() + o * n_in;
            const T gv = go[o];
            #pragma omp simd
            for (std::size_t i = 0; i < n_in; ++i) gi[i] += gv * wrow[i];
        }
    });
    parallel_for(n_out, [&](std::size_t o) {
        T* wrow = g.weights.data() + o * n_in;
        T bacc = T(0);
        for (std::size_t bi = 0; bi < input.batch(); ++bi) {
            const T gv = grad_out.plane(bi, 0)[o];
            const T* x = input.plane(bi, 0);
            #pragma omp simd
            for (std::size_t i = 0; i < n_in; ++i) wrow[i] += gv * x[i];
            bacc += gv;
        }
        g.biases[o] = bacc;
    });
    return g;
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

template <typename T>
T leaky_relu(T x) {
    return x >= T(0) ? x : T(0.3) * x;
}

template <typename T>
Tensor4<T> leaky_relu(const Tensor4<T>& input) {
    Tensor4<T> out = input;
    for (T& v : out.storage()) v = leaky_relu(v);
    return out;
}

/// Slope 1 for x >= 0, 0.3 below.
template <typename T>
Tensor4<T> leaky_relu_backward(const Tensor4<T>& input, const Tensor4<T>& grad_out) {
    if (!grad_out.same_shape(input)) throw shape_error("leaky_relu_backward: shape mismatch");
    Tensor4<T> g = grad_out;
    const auto& x = input.storage();
    auto& gv = g.storage();
    for (std::size_t i = 0; i < gv.size(); ++i)
        if (x[i] < T(0)) gv[i] *= T(0.3);
    return g;
}

/// Numerically stable logistic function; no overflow for |x| up to ~700.
template <typename T>
T sigmoid(T x) {
    if (x >= T(0)) {
        return T(1) / (T(1) + std::exp(-x));
    }
    const T e = std::exp(x);
    return e / (T(1) + e);
}

template <typename T>
Tensor4<T> sigmoid(const Tensor4<T>& input) {
    Tensor4<T> out = input;
    for (T& v : out.storage()) v = sigmoid(v);
    return out;
}

/// Backward from the forward *output* s: ds/dx = s (1 - s).
template <typename T>
Tensor4<T> sigmoid_backward_from_output(const Tensor4<T>& output, const Tensor4<T>& grad_out) {
    if (!grad_out.same_shape(output)) throw shape_error("sigmoid_backward: shape mismatch");
    Tensor4<T> g = grad_out;
    const auto& s = output.storage();
    auto& gv = g.storage();
    for (std::size_t i = 0; i < gv.size(); ++i) gv[i] *= s[i] * (T(1) - s[i]);
    return g;
}

}  // namespace enet
