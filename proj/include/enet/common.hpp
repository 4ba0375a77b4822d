#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>

namespace enet {

static_assert(std::endian::native == std::endian::little,
              "on-disk formats are little-endian; big-endian hosts are unsupported");

/// Mismatched tensor/kernel/vector geometry.
class shape_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid scenario/model/training configuration.
class config_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Dataset or checkpoint file problems.
class io_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite values where finite ones are required.
class numeric_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

template <typename T>
bool all_finite(std::span<const T> v) {
    for (const T& x : v) {
        if (!std::isfinite(static_cast<double>(x))) return false;
    }
    return true;
}

/// FNV-1a over raw bytes; used for parameter and dataset fingerprints.
inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

template <typename T>
std::uint64_t fnv1a_span(std::span<const T> v, std::uint64_t h = 0xcbf29ce484222325ull) {
    return fnv1a(v.data(), v.size_bytes(), h);
}

inline std::string hex64(std::uint64_t x) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[x & 0xf];
        x >>= 4;
    }
    return s;
}

}  // namespace enet
