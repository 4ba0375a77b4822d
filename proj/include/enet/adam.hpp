#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "enet/common.hpp"

namespace enet {

/// State of a bias-corrected Adam optimizer over one flat parameter vector.
template <typename T>
struct AdamState {
    std::uint64_t step = 0;
    std::vector<T> m;
    std::vector<T> v;
    T lr = T(1e-3);
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T epsilon = T(1e-8);

    static AdamState make(std::size_t n, T lr = T(1e-3), T beta1 = T(0.9), T beta2 = T(0.999),
                          T epsilon = T(1e-8)) {
        AdamState s;
        s.m.assign(n, T(0));
        s.v.assign(n, T(0));
        s.lr = lr;
        s.beta1 = beta1;
        s.beta2 = beta2;
        s.epsilon = epsilon;
        return s;
    }
};

/// One Adam update, in place. Rejects non-finite gradient entries.
template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamState<T>& state) {
    if (params.size() != grads.size() || params.size() != state.m.size() ||
        params.size() != state.v.size())
        throw shape_error("adam_step: parameter/gradient/state length mismatch");
    for (std::size_t i = 0; i < grads.size(); ++i) {
        if (!std::isfinite(static_cast<double>(grads[i])))
            throw numeric_error("adam_step: non-finite gradient at index " + std::to_string(i));
    }
    state.step += 1;
    const T b1 = state.beta1, b2 = state.beta2;
    const T bc1 = T(1) - std::pow(b1, static_cast<T>(state.step));
    const T bc2 = T(1) - std::pow(b2, static_cast<T>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const T g = grads[i];
        state.m[i] = b1 * state.m[i] + (T(1) - b1) * g;
        state.v[i] = b2 * state.v[i] + (T(1) - b2) * g * g;
        const T mhat = state.m[i] / bc1;
        const T vhat = state.v[i] / bc2;
        params[i] -= state.lr * mhat / (std::sqrt(vhat) + state.epsilon);
    }
}

}  // namespace enet
