#pragma once

// Voxel-wise fusion of aligned prediction volumes.

#include <voxpost/error.hpp>
#include <voxpost/volume.hpp>

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace voxpost {

enum class FusionKind { Mean, Median, GeometricMean, Max, Min };

inline constexpr double kGeometricMeanFloor = 1e-12;

struct AggregationMode {
    FusionKind kind = FusionKind::Mean;
    /// One non-negative weight per input, summing to 1. Honoured by Mean and GeometricMean.
    std::optional<std::vector<double>> weights;
};

inline std::string_view to_string(FusionKind k) noexcept {
    switch (k) {
    case FusionKind::Mean: return "mean";
    case FusionKind::Median: return "median";
    case FusionKind::GeometricMean: return "geomean";
    case FusionKind::Max: return "max";
    case FusionKind::Min: return "min";
    }
    return "?";
}

inline FusionKind parse_fusion_kind(std::string_view s) {
    if (s == "mean") return FusionKind::Mean;
    if (s == "median") return FusionKind::Median;
    if (s == "geomean") return FusionKind::GeometricMean;
    if (s == "max") return FusionKind::Max;
    if (s == "min") return FusionKind::Min;
    throw Error(ErrorKind::InvalidArgument, "unknown fusion mode '" + std::string(s) + "'");
}

namespace detail {

inline void validate_weights(const AggregationMode& mode, std::size_t n) {
    if (!mode.weights) return;
    if (mode.kind != FusionKind::Mean && mode.kind != FusionKind::GeometricMean)
        throw Error(ErrorKind::BadWeights, std::string("weights are not supported for mode ") + std::string(to_string(mode.kind)));
    const auto& w = *mode.weights;
    if (w.size() != n)
        throw Error(ErrorKind::BadWeights, std::to_string(w.size()) + " weights for " + std::to_string(n) + " inputs");
    double sum = 0.0;
    for (double x : w) {
        if (!(x >= 0.0) || !std::isfinite(x)) throw Error(ErrorKind::BadWeights, "weights must be finite and non-negative");
        sum += x;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw Error(ErrorKind::BadWeights, "weights sum to " + std::to_string(sum));
}

inline void validate_inputs(std::span<const Volume> inputs) {
    if (inputs.size() < 2) throw Error(ErrorKind::TooFewInputs, "ensembling needs at least two volumes");
    for (std::size_t i = 1; i < inputs.size(); ++i) check_same_grid(inputs[0], inputs[i]);
}

/// Per-voxel reducer. Values (and their weights) are put in ascending order before
/// reducing so the floating-point result does not depend on input order.
class VoxelFuser {
public:
    VoxelFuser(const AggregationMode& mode, std::size_t n)
        : mode_(mode), weights_(mode.weights ? *mode.weights : std::vector<double>(n, 1.0 / static_cast<double>(n))),
          slots_(n) {}

    double operator()(std::span<const Volume> inputs, std::size_t voxel) {
        const std::size_t n = slots_.size();
        for (std::size_t i = 0; i < n; ++i) slots_[i] = {inputs[i].data[voxel], weights_[i]};
        switch (mode_.kind) {
        case FusionKind::Max: {
            double m = slots_[0].first;
            for (const auto& s : slots_) m = std::max(m, s.first);
            return m;
        }
        case FusionKind::Min: {
            double m = slots_[0].first;
            for (const auto& s : slots_) m = std::min(m, s.first);
            return m;
        }
        case FusionKind::Median: {
            std::sort(slots_.begin(), slots_.end());
            if (n % 2 == 1) return slots_[n / 2].first;
            return (slots_[n / 2 - 1].first + slots_[n / 2].first) / 2.0;
        }
        case FusionKind::Mean: {
            std::sort(slots_.begin(), slots_.end());
            double acc = 0.0;
            if (mode_.weights) {
                for (const auto& s : slots_) acc += s.second * s.first;
            } else {
                for (const auto& s : slots_) acc += s.first;
                acc /= static_cast<double>(n);
            }
            return std::clamp(acc, slots_.front().first, slots_.back().first);
        }
        case FusionKind::GeometricMean: {
            for (auto& s : slots_) s.first = std::max(s.first, kGeometricMeanFloor);
            std::sort(slots_.begin(), slots_.end());
            double acc = 0.0;
            for (const auto& s : slots_) acc += s.second * std::log(s.first);
            return std::clamp(std::exp(acc), slots_.front().first, slots_.back().first);
        }
        }
        return 0.0;
    }

private:
    const AggregationMode& mode_;
    std::vector<double> weights_;
    std::vector<std::pair<double, double>> slots_; // (value, weight)
};

} // namespace detail

/// Fuses N >= 2 congruent volumes voxel by voxel. Geometry is taken from inputs[0].
inline Volume ensemble(std::span<const Volume> inputs, const AggregationMode& mode) {
    detail::validate_inputs(inputs);
    detail::validate_weights(mode, inputs.size());
    Volume out = inputs[0].like();
    detail::VoxelFuser fuse(mode, inputs.size());
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = fuse(inputs, i);
    return out;
}

/// As ensemble() inside the mask; outside it the output is `base` verbatim.
inline Volume ensemble_masked(std::span<const Volume> inputs, const AggregationMode& mode, const Mask& m,
                              const Volume& base) {
    detail::validate_inputs(inputs);
    detail::validate_weights(mode, inputs.size());
    check_congruent(inputs[0], m);
    check_congruent(inputs[0], base);
    Volume out = inputs[0].like();
    detail::VoxelFuser fuse(mode, inputs.size());
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = m.data[i] ? fuse(inputs, i) : base.data[i];
    return out;
}

} // namespace voxpost
