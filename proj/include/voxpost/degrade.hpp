#pragma once

// Seeded synthetic degradation: blur the healthy region to build (degraded, ground truth) pairs.

#include <voxpost/error.hpp>
#include <voxpost/filters.hpp>
#include <voxpost/nifti.hpp>
#include <voxpost/volume.hpp>

#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace voxpost {

/// splitmix64 (Steele, Lea, Flood). Chosen for its trivially portable state update.
class SplitMix64 {
public:
    explicit constexpr SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

    constexpr std::uint64_t next() noexcept {
        state_ += 0x9E3779B97F4A7C15ULL;
        return mix(state_);
    }

    /// Uniform in [0, 1) with 53 random bits.
    constexpr double next_unit() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

private:
    std::uint64_t state_;
};

/// Stream key for one draw: seed ^ mix(case_index + 1) ^ mix(mix(draw_index + 1)).
constexpr std::uint64_t degrade_stream_key(std::uint64_t seed, std::uint64_t case_index, std::uint64_t draw_index) noexcept {
    return seed ^ SplitMix64::mix(case_index + 1) ^ SplitMix64::mix(SplitMix64::mix(draw_index + 1));
}

struct DegradeSpec {
    double sigma_min = 0.5;
    double sigma_max = 1.5;
    std::uint64_t seed = 0;
    int per_case_draws = 1;
};

inline void validate(const DegradeSpec& s) {
    if (!(s.sigma_min > 0.0) || !(s.sigma_max >= s.sigma_min) || !std::isfinite(s.sigma_max))
        throw Error(ErrorKind::InvalidArgument, "need 0 < sigma_min <= sigma_max");
    if (s.per_case_draws < 1) throw Error(ErrorKind::InvalidArgument, "per_case_draws must be >= 1");
}

/// sigma for one (case, draw), uniform on [sigma_min, sigma_max].
inline double draw_sigma(const DegradeSpec& spec, std::uint64_t case_index, std::uint64_t draw_index = 0) {
    validate(spec);
    SplitMix64 rng(degrade_stream_key(spec.seed, case_index, draw_index));
    const double u = rng.next_unit();
    return std::min(spec.sigma_max, spec.sigma_min + u * (spec.sigma_max - spec.sigma_min));
}

struct Degraded {
    Volume volume;
    double sigma = 0.0;
};

/// Blurs the whole volume with `sigma`, keeps the blur only inside the healthy mask.
inline Volume blur_healthy(const Volume& gt, const Mask& healthy, double sigma) {
    check_congruent(gt, healthy);
    return apply_masked(gt, gt, healthy, [sigma](const Volume& v) { return gaussian_smooth(v, sigma); });
}

inline Degraded degrade_case(const Volume& gt, const Mask& healthy, const DegradeSpec& spec, std::uint64_t case_index,
                             std::uint64_t draw_index = 0) {
    check_congruent(gt, healthy);
    const double sigma = draw_sigma(spec, case_index, draw_index);
    return {blur_healthy(gt, healthy, sigma), sigma};
}

struct ManifestEntry {
    std::string case_id;
    double sigma = 0.0;
    std::string degraded_path;
    std::string gt_path;
    std::string mask_path;
};

inline void to_json(nlohmann::json& j, const ManifestEntry& e) {
    j = nlohmann::json{{"case_id", e.case_id},
                       {"sigma", e.sigma},
                       {"degraded_path", e.degraded_path},
                       {"gt_path", e.gt_path},
                       {"mask_path", e.mask_path}};
}

inline void from_json(const nlohmann::json& j, ManifestEntry& e) {
    j.at("case_id").get_to(e.case_id);
    j.at("sigma").get_to(e.sigma);
    j.at("degraded_path").get_to(e.degraded_path);
    j.at("gt_path").get_to(e.gt_path);
    j.at("mask_path").get_to(e.mask_path);
}

/// Walks `<input_dir>/<id>/{<id>-t1n, <id>-healthy-mask}.nii[.gz]` in sorted id order; the
/// position in that order is the case index fed to the generator. Writes
/// `<output_dir>/<id>/<id>-degraded.nii.gz` (extra draws get a `-<d>` suffix) alongside
/// copies of the ground truth and mask, plus `<output_dir>/manifest.json`.
inline std::vector<ManifestEntry> degrade_dataset(const std::filesystem::path& input_dir,
                                                  const std::filesystem::path& output_dir, const DegradeSpec& spec) {
    namespace fs = std::filesystem;
    validate(spec);
    if (!fs::is_directory(input_dir)) throw Error(ErrorKind::LayoutError, input_dir.string() + " is not a directory");

    std::vector<std::string> ids;
    for (const auto& entry : fs::directory_iterator(input_dir))
        if (entry.is_directory()) ids.push_back(entry.path().filename().string());
    std::sort(ids.begin(), ids.end());
    if (ids.empty()) throw Error(ErrorKind::EmptyDataset, "no case directories under " + input_dir.string());

    std::error_code ec;
    fs::create_directories(output_dir, ec);
    if (ec) throw Error(ErrorKind::IoFailure, "cannot create " + output_dir.string());

    std::vector<ManifestEntry> manifest;
    for (std::size_t index = 0; index < ids.size(); ++index) {
        const auto& id = ids[index];
        const auto case_dir = input_dir / id;
        const auto gt_path = find_nifti(case_dir, id + "-t1n");
        const auto mask_path = find_nifti(case_dir, id + "-healthy-mask");
        if (gt_path.empty() || mask_path.empty())
            throw Error(ErrorKind::LayoutError, "case " + id + " lacks " + id + "-t1n or " + id + "-healthy-mask");

        const Volume gt = read_volume(gt_path);
        const Mask healthy = read_mask(mask_path);
        check_congruent(gt, healthy);

        const auto out_dir = output_dir / id;
        fs::create_directories(out_dir, ec);
        if (ec) throw Error(ErrorKind::IoFailure, "cannot create " + out_dir.string());
        const auto gt_copy = out_dir / gt_path.filename();
        const auto mask_copy = out_dir / mask_path.filename();
        fs::copy_file(gt_path, gt_copy, fs::copy_options::overwrite_existing, ec);
        if (!ec) fs::copy_file(mask_path, mask_copy, fs::copy_options::overwrite_existing, ec);
        if (ec) throw Error(ErrorKind::IoFailure, "copying inputs of case " + id + ": " + ec.message());

        for (int draw = 0; draw < spec.per_case_draws; ++draw) {
            const auto d = degrade_case(gt, healthy, spec, index, static_cast<std::uint64_t>(draw));
            const std::string name = draw == 0 ? id + "-degraded.nii.gz" : id + "-degraded-" + std::to_string(draw) + ".nii.gz";
            write_volume(d.volume, out_dir / name, true);
            manifest.push_back({id, d.sigma, (out_dir / name).string(), gt_copy.string(), mask_copy.string()});
        }
    }

    std::ofstream out(output_dir / "manifest.json", std::ios::trunc);
    if (!out) throw Error(ErrorKind::IoFailure, "cannot write manifest");
    out << nlohmann::json(manifest).dump(2) << '\n';
    return manifest;
}

} // namespace voxpost
