#pragma once

// 3D median filter and separable Gaussian smoothing, mirror boundary.

#include <voxpost/error.hpp>
#include <voxpost/volume.hpp>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <vector>

namespace voxpost {

struct FilterSpec {
    /// 0 disables the median stage.
    int median_kernel = 3;
    double gaussian_sigma = 0.5;
};

namespace detail {

/// Mirrored coordinates for offsets [-r, r] around every position of an axis of length n.
/// Row `p` holds the 2r+1 source indices for output position p.
inline std::vector<std::size_t> mirror_table(std::size_t n, std::size_t r) {
    const std::size_t w = 2 * r + 1;
    std::vector<std::size_t> t(n * w);
    for (std::size_t p = 0; p < n; ++p)
        for (std::size_t k = 0; k < w; ++k)
            t[p * w + k] = mirror_index(static_cast<std::ptrdiff_t>(p + k) - static_cast<std::ptrdiff_t>(r), n);
    return t;
}

/// One pass of a symmetric 1D convolution along `axis` (0=x, 1=y, 2=z).
inline void convolve_axis(const std::vector<double>& in, std::vector<double>& out, const Dims& d, int axis,
                          const std::vector<double>& kernel) {
    const std::size_t r = kernel.size() / 2;
    const std::size_t n = d[axis];
    const auto table = mirror_table(n, r);
    const std::size_t stride = axis == 0 ? 1 : axis == 1 ? d.nx : d.nx * d.ny;
    const std::size_t w = kernel.size();
    for (std::size_t z = 0; z < d.nz; ++z) {
        for (std::size_t y = 0; y < d.ny; ++y) {
            for (std::size_t x = 0; x < d.nx; ++x) {
                const std::size_t p = axis == 0 ? x : axis == 1 ? y : z;
                const std::size_t line_base = x + d.nx * (y + d.ny * z) - p * stride;
                const std::size_t* src = &table[p * w];
                double acc = 0.0;
                for (std::size_t k = 0; k < w; ++k) acc += kernel[k] * in[line_base + src[k] * stride];
                out[x + d.nx * (y + d.ny * z)] = acc;
            }
        }
    }
}

} // namespace detail

/// Normalized 1D Gaussian taps for offsets -r..r, r = max(1, ceil(3 sigma)).
inline std::vector<double> gaussian_kernel(double sigma) {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw Error(ErrorKind::InvalidArgument, "gaussian sigma must be positive");
    const auto r = static_cast<std::ptrdiff_t>(std::max(1.0, std::ceil(3.0 * sigma)));
    std::vector<double> w(static_cast<std::size_t>(2 * r + 1));
    double sum = 0.0;
    for (std::ptrdiff_t i = -r; i <= r; ++i) {
        const double x = static_cast<double>(i);
        w[static_cast<std::size_t>(i + r)] = std::exp(-x * x / (2.0 * sigma * sigma));
    }
    // Sum from the tails inwards so symmetric pairs are added before the larger centre taps.
    for (std::ptrdiff_t i = r; i >= 0; --i) {
        sum += w[static_cast<std::size_t>(r + i)];
        if (i != 0) sum += w[static_cast<std::size_t>(r - i)];
    }
    for (double& x : w) x /= sum;
    return w;
}

/// Convolves x, then y, then z with the same kernel. sigma == 0 is the identity.
inline Volume gaussian_smooth(const Volume& v, double sigma) {
    if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw Error(ErrorKind::InvalidArgument, "gaussian sigma must be >= 0");
    if (sigma == 0.0) return v;
    const auto kernel = gaussian_kernel(sigma);
    Volume out = v;
    std::vector<double> tmp(v.size());
    detail::convolve_axis(v.data, tmp, v.dims, 0, kernel);
    detail::convolve_axis(tmp, out.data, v.dims, 1, kernel);
    detail::convolve_axis(out.data, tmp, v.dims, 2, kernel);
    out.data.swap(tmp);
    return out;
}

/// Median of each k x k x k neighbourhood.
inline Volume median_filter(const Volume& v, int k) {
    if (k < 1 || k % 2 == 0) throw Error(ErrorKind::BadKernel, "median kernel must be odd and >= 1, got " + std::to_string(k));
    if (static_cast<std::size_t>(k) > 2 * v.dims.min() - 1)
        throw Error(ErrorKind::BadKernel, "median kernel " + std::to_string(k) + " too large for " + to_string(v.dims));
    if (k == 1) return v;

    const auto r = static_cast<std::size_t>(k / 2);
    const auto w = static_cast<std::size_t>(k);
    const auto& d = v.dims;
    const auto tx = detail::mirror_table(d.nx, r);
    const auto ty = detail::mirror_table(d.ny, r);
    const auto tz = detail::mirror_table(d.nz, r);

    Volume out = v.like();
    std::vector<double> window(w * w * w);
    const auto mid = window.begin() + static_cast<std::ptrdiff_t>(window.size() / 2);
    for (std::size_t z = 0; z < d.nz; ++z) {
        for (std::size_t y = 0; y < d.ny; ++y) {
            for (std::size_t x = 0; x < d.nx; ++x) {
                std::size_t n = 0;
                for (std::size_t c = 0; c < w; ++c) {
                    const std::size_t zz = tz[z * w + c];
                    for (std::size_t b = 0; b < w; ++b) {
                        const std::size_t row = d.nx * (ty[y * w + b] + d.ny * zz);
                        for (std::size_t a = 0; a < w; ++a) window[n++] = v.data[row + tx[x * w + a]];
                    }
                }
                // k^3 is odd, so the median is the middle order statistic.
                std::nth_element(window.begin(), mid, window.end());
                out.data[v.index(x, y, z)] = *mid;
            }
        }
    }
    return out;
}

/// Runs `f` over the whole volume, then keeps its result only where the mask is set.
template <class Filter>
    requires std::invocable<Filter, const Volume&>
Volume apply_masked(const Volume& v, const Volume& base, const Mask& m, Filter&& f) {
    check_congruent(v, base);
    check_congruent(v, m);
    Volume out = f(v);
    check_congruent(out, m);
    for (std::size_t i = 0; i < out.size(); ++i)
        if (!m.data[i]) out.data[i] = base.data[i];
    return out;
}

/// Median (if enabled) followed by Gaussian (if sigma > 0).
inline Volume apply_filters(const Volume& v, const FilterSpec& spec) {
    if (spec.median_kernel < 0) throw Error(ErrorKind::BadKernel, "median kernel must be >= 0");
    Volume out = spec.median_kernel > 0 ? median_filter(v, spec.median_kernel) : v;
    return gaussian_smooth(out, spec.gaussian_sigma);
}

} // namespace voxpost
