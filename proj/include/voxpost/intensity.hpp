#pragma once

// ROI histogram matching and the unit-range normalization used before scoring.

#include <voxpost/error.hpp>
#include <voxpost/volume.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace voxpost {

enum class HistMatchRoi { MaskOnly, WholeVolume };

struct HistMatchSpec {
    HistMatchRoi roi = HistMatchRoi::MaskOnly;
};

inline HistMatchRoi parse_roi(std::string_view s) {
    if (s == "mask") return HistMatchRoi::MaskOnly;
    if (s == "volume") return HistMatchRoi::WholeVolume;
    throw Error(ErrorKind::InvalidArgument, "unknown roi '" + std::string(s) + "' (expected mask or volume)");
}

struct HistMatchResult {
    Volume volume;
    /// The source ROI was constant, so every ROI voxel went to the reference median.
    bool degenerate = false;
};

/// Linear interpolation into a sorted table at fractional index `pos` in [0, n-1].
inline double interpolate_sorted(const std::vector<double>& sorted, double pos) {
    const double last = static_cast<double>(sorted.size() - 1);
    pos = std::clamp(pos, 0.0, last);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double t = pos - static_cast<double>(lo);
    if (t == 0.0) return sorted[lo];
    return sorted[lo] + t * (sorted[hi] - sorted[lo]);
}

/// Exact (sort-based) quantile mapping of the source ROI onto the reference ROI.
/// A source voxel with average rank r (1-based, ties averaged) among Ns ROI voxels
/// takes the reference value at fractional index (r-1)/(Ns-1) * (Nr-1).
/// Voxels outside the ROI are copied through.
inline HistMatchResult histogram_match(const Volume& src, const Volume& ref, const std::optional<Mask>& mask,
                                       const HistMatchSpec& spec) {
    check_congruent(src, ref);
    std::vector<std::size_t> roi;
    if (spec.roi == HistMatchRoi::MaskOnly) {
        if (!mask) throw Error(ErrorKind::DegenerateRoi, "mask-only histogram matching needs a mask");
        check_congruent(src, *mask);
        for (std::size_t i = 0; i < mask->size(); ++i)
            if (mask->data[i]) roi.push_back(i);
    } else {
        roi.resize(src.size());
        std::iota(roi.begin(), roi.end(), std::size_t{0});
    }
    if (roi.size() < 2) throw Error(ErrorKind::DegenerateRoi, "ROI has fewer than two voxels");

    const std::size_t n = roi.size();
    std::vector<double> reference(n);
    for (std::size_t i = 0; i < n; ++i) reference[i] = ref.data[roi[i]];
    std::sort(reference.begin(), reference.end());

    // ROI positions ordered by source value; index breaks ties so the order is total.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const double va = src.data[roi[a]], vb = src.data[roi[b]];
        return va < vb || (va == vb && a < b);
    });

    HistMatchResult result{src, false};
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i + 1;
        const double value = src.data[roi[order[i]]];
        while (j < n && src.data[roi[order[j]]] == value) ++j;
        // Zero-based ranks i..j-1 share their average. Source and reference ROIs have the
        // same size, so the quantile index is the average rank itself.
        const double avg_rank0 = 0.5 * static_cast<double>(i + j - 1);
        const double mapped = interpolate_sorted(reference, avg_rank0);
        for (std::size_t k = i; k < j; ++k) result.volume.data[roi[order[k]]] = mapped;
        if (i == 0 && j == n) result.degenerate = true;
        i = j;
    }
    return result;
}

/// Maps both volumes through x -> (x - lo) / (hi - lo) with lo/hi the ground truth's
/// whole-volume extrema; the prediction is clamped to [0, 1].
inline std::pair<Volume, Volume> joint_normalize(const Volume& gt, const Volume& pred, const Mask& m) {
    check_congruent(gt, pred);
    check_congruent(gt, m);
    const auto [lo_it, hi_it] = std::minmax_element(gt.data.begin(), gt.data.end());
    const double lo = *lo_it, hi = *hi_it;
    if (!(hi > lo)) throw Error(ErrorKind::ConstantReference, "ground truth is constant");
    const double range = hi - lo;
    Volume g = gt, p = pred;
    for (double& x : g.data) x = (x - lo) / range;
    for (double& x : p.data) x = std::clamp((x - lo) / range, 0.0, 1.0);
    return {std::move(g), std::move(p)};
}

} // namespace voxpost
