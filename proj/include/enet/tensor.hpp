#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "enet/common.hpp"

namespace enet {

/// Dense rank-4 tensor, row-major over (batch, depth, width, height).
/// Width indexes delay rows (N_cc), height indexes angular columns (N_t),
/// so the height axis is the contiguous one.
template <typename T>
class Tensor4 {
public:
    Tensor4() = default;

    Tensor4(std::size_t batch, std::size_t depth, std::size_t width, std::size_t height, T fill = T(0))
        : b_(batch), d_(depth), w_(width), h_(height), data_(batch * depth * width * height, fill) {}

    std::size_t batch() const { return b_; }
    std::size_t depth() const { return d_; }
    std::size_t width() const { return w_; }
    std::size_t height() const { return h_; }
    std::size_t size() const { return data_.size(); }

    bool same_shape(const Tensor4& o) const {
        return b_ == o.b_ && d_ == o.d_ && w_ == o.w_ && h_ == o.h_;
    }

    std::string shape_str() const {
        return std::to_string(b_) + "x" + std::to_string(d_) + "x" +
               std::to_string(w_) + "x" + std::to_string(h_);
    }

    T& operator()(std::size_t b, std::size_t d, std::size_t x, std::size_t y) {
        return data_[((b * d_ + d) * w_ + x) * h_ + y];
    }
    T operator()(std::size_t b, std::size_t d, std::size_t x, std::size_t y) const {
        return data_[((b * d_ + d) * w_ + x) * h_ + y];
    }

    /// Pointer to the contiguous (b, d, x, .) row.
    T* row(std::size_t b, std::size_t d, std::size_t x) {
        return data_.data() + ((b * d_ + d) * w_ + x) * h_;
    }
    const T* row(std::size_t b, std::size_t d, std::size_t x) const {
        return data_.data() + ((b * d_ + d) * w_ + x) * h_;
    }

    T* plane(std::size_t b, std::size_t d) { return data_.data() + (b * d_ + d) * w_ * h_; }
    const T* plane(std::size_t b, std::size_t d) const {
        return data_.data() + (b * d_ + d) * w_ * h_;
    }

    std::span<T> flat() { return {data_.data(), data_.size()}; }
    std::span<const T> flat() const { return {data_.data(), data_.size()}; }
    std::vector<T>& storage() { return data_; }
    const std::vector<T>& storage() const { return data_; }

    void fill(T v) { data_.assign(data_.size(), v); }

    bool finite() const { return all_finite(flat()); }

    void require_finite(const char* what) const {
        if (!finite()) throw numeric_error(std::string(what) + ": non-finite tensor entries");
    }

    template <typename U>
    Tensor4<U> cast() const {
        Tensor4<U> out(b_, d_, w_, h_);
        for (std::size_t i = 0; i < data_.size(); ++i)
            out.storage()[i] = static_cast<U>(data_[i]);
        return out;
    }

private:
    std::size_t b_ = 0, d_ = 0, w_ = 0, h_ = 0;
    std::vector<T> data_;
};

template <typename T>
T dot_flat(const Tensor4<T>& a, const Tensor4<T>& b) {
    T acc = T(0);
    auto fa = a.flat();
    auto fb = b.flat();
    for (std::size_t i = 0; i < fa.size(); ++i) acc += fa[i] * fb[i];
    return acc;
}

}  // namespace enet
