#pragma once

#include <voxpost/error.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace voxpost {

struct Dims {
    std::size_t nx = 0, ny = 0, nz = 0;

    constexpr std::size_t count() const noexcept { return nx * ny * nz; }
    constexpr std::size_t operator[](int axis) const noexcept { return axis == 0 ? nx : axis == 1 ? ny : nz; }
    constexpr std::size_t min() const noexcept { return std::min(nx, std::min(ny, nz)); }
    friend constexpr bool operator==(const Dims&, const Dims&) = default;
};

inline std::string to_string(const Dims& d) {
    return std::to_string(d.nx) + "x" + std::to_string(d.ny) + "x" + std::to_string(d.nz);
}

enum class SourceDtype { U8, I16, I32, F32, F64 };

using Affine = std::array<std::array<double, 4>, 4>;

inline Affine diagonal_affine(const std::array<double, 3>& spacing) {
    Affine a{};
    for (int i = 0; i < 3; ++i) a[i][i] = spacing[i];
    a[3][3] = 1.0;
    return a;
}

/// Dense 3D scalar field, x-fastest. All processing happens on the 64-bit values;
/// geometry is carried along untouched.
struct Volume {
    Dims dims;
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    Affine affine = diagonal_affine({1.0, 1.0, 1.0});
    std::vector<double> data;
    SourceDtype source_dtype = SourceDtype::F64;

    Volume() = default;
    explicit Volume(Dims d, double fill = 0.0) : dims(d), data(d.count(), fill) {}

    std::size_t index(std::size_t x, std::size_t y, std::size_t z) const noexcept {
        return x + dims.nx * (y + dims.ny * z);
    }
    double& at(std::size_t x, std::size_t y, std::size_t z) noexcept { return data[index(x, y, z)]; }
    double at(std::size_t x, std::size_t y, std::size_t z) const noexcept { return data[index(x, y, z)]; }
    std::size_t size() const noexcept { return data.size(); }

    /// Copy of the geometry with a fresh zero-filled payload.
    Volume like() const {
        Volume v;
        v.dims = dims;
        v.spacing = spacing;
        v.affine = affine;
        v.source_dtype = source_dtype;
        v.data.assign(data.size(), 0.0);
        return v;
    }
};

struct Mask {
    Dims dims;
    std::vector<std::uint8_t> data;
    /// Set when the loader had to threshold non-{0,1} values.
    bool binarized = false;

    Mask() = default;
    explicit Mask(Dims d, std::uint8_t fill = 0) : dims(d), data(d.count(), fill) {}

    std::size_t size() const noexcept { return data.size(); }
    std::size_t count() const noexcept {
        std::size_t n = 0;
        for (auto v : data) n += v;
        return n;
    }
};

/// Binarizes a volume with the `> 0.5` rule.
inline Mask to_mask(const Volume& v) {
    Mask m(v.dims);
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double x = v.data[i];
        if (x != 0.0 && x != 1.0) m.binarized = true;
        m.data[i] = x > 0.5 ? 1 : 0;
    }
    return m;
}

inline void check_congruent(const Volume& v, const Mask& m) {
    if (v.dims != m.dims)
        throw Error(ErrorKind::DimensionMismatch, "volume " + to_string(v.dims) + " vs mask " + to_string(m.dims));
}

inline void check_congruent(const Volume& a, const Volume& b) {
    if (a.dims != b.dims)
        throw Error(ErrorKind::DimensionMismatch, "volume " + to_string(a.dims) + " vs " + to_string(b.dims));
}

/// Dims and spacing; spacing is compared with a float32-level tolerance since it is stored as float.
inline void check_same_grid(const Volume& a, const Volume& b) {
    check_congruent(a, b);
    for (int i = 0; i < 3; ++i) {
        const double tol = 1e-6 * std::max(std::abs(a.spacing[i]), std::abs(b.spacing[i]));
        if (std::abs(a.spacing[i] - b.spacing[i]) > tol)
            throw Error(ErrorKind::DimensionMismatch, "voxel spacing differs on axis " + std::to_string(i));
    }
}

/// Reflect-without-repeat boundary: -1 -> 1, n -> n-2. Valid for any offset.
inline std::size_t mirror_index(std::ptrdiff_t i, std::size_t n) noexcept {
    if (n == 1) return 0;
    const auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
    i %= period;
    if (i < 0) i += period;
    if (i >= static_cast<std::ptrdiff_t>(n)) i = period - i;
    return static_cast<std::size_t>(i);
}

} // namespace voxpost
