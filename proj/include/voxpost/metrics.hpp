#pragma once

// MSE / PSNR / 3D SSIM over a mask, and the MetricReport record.

#include <voxpost/error.hpp>
#include <voxpost/filters.hpp>
#include <voxpost/intensity.hpp>
#include <voxpost/volume.hpp>

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace voxpost {

struct SsimParams {
    int window_size = 11;
    double window_sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double dynamic_range = 1.0;
};

struct MetricReport {
    std::string case_id;
    std::string method_id;
    double mse = 0.0;
    /// +infinity when mse == 0.
    double psnr = std::numeric_limits<double>::infinity();
    double ssim = 1.0;
    std::size_t roi_voxels = 0;

    friend bool operator==(const MetricReport&, const MetricReport&) = default;
};

namespace detail {

inline void check_metric_inputs(const Volume& pred, const Volume& gt, const Mask& m) {
    check_congruent(pred, gt);
    check_congruent(pred, m);
}

inline std::size_t roi_size(const Mask& m) {
    const std::size_t n = m.count();
    if (n == 0) throw Error(ErrorKind::EmptyRoi, "mask has no voxels");
    return n;
}

} // namespace detail

inline double mse(const Volume& pred, const Volume& gt, const Mask& m) {
    detail::check_metric_inputs(pred, gt, m);
    const std::size_t n = detail::roi_size(m);
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (!m.data[i]) continue;
        const double d = pred.data[i] - gt.data[i];
        acc += d * d;
    }
    return acc / static_cast<double>(n);
}

inline double psnr_from_mse(double mse_value, double dynamic_range = 1.0) {
    if (mse_value == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(dynamic_range * dynamic_range / mse_value);
}

inline double psnr(const Volume& pred, const Volume& gt, const Mask& m) { return psnr_from_mse(mse(pred, gt, m)); }

/// Normalized 1D Gaussian of `size` taps; the 3D window is its outer product.
inline std::vector<double> ssim_window(int size, double sigma) {
    std::vector<double> w(static_cast<std::size_t>(size));
    const int r = size / 2;
    double sum = 0.0;
    for (int i = -r; i <= r; ++i) {
        w[static_cast<std::size_t>(i + r)] = std::exp(-double(i * i) / (2.0 * sigma * sigma));
        sum += w[static_cast<std::size_t>(i + r)];
    }
    for (double& x : w) x /= sum;
    return w;
}

inline void validate(const SsimParams& p) {
    if (p.window_size < 3 || p.window_size % 2 == 0)
        throw Error(ErrorKind::InvalidArgument, "SSIM window size must be odd and >= 3");
    if (!(p.window_sigma > 0.0) || !(p.k1 > 0.0) || !(p.k2 > 0.0) || !(p.dynamic_range > 0.0))
        throw Error(ErrorKind::InvalidArgument, "SSIM sigma, k1, k2 and dynamic range must be positive");
}

/// Per-voxel SSIM from local weighted moments. Variances are clamped at zero and the
/// covariance to +-(var_p + var_g)/2, which keeps |ssim| <= 1 and makes ssim(a, a) == 1 exactly.
inline double ssim_from_moments(double mu_p, double mu_g, double e_pp, double e_gg, double e_pg, double c1,
                                double c2) {
    const double var_p = std::max(e_pp - mu_p * mu_p, 0.0);
    const double var_g = std::max(e_gg - mu_g * mu_g, 0.0);
    const double bound = (var_p + var_g) / 2.0;
    const double cov = std::clamp(e_pg - mu_p * mu_g, -bound, bound);
    const double num = (2.0 * mu_p * mu_g + c1) * (2.0 * cov + c2);
    const double den = (mu_p * mu_p + mu_g * mu_g + c1) * (var_p + var_g + c2);
    return num / den;
}

/// Mean of the SSIM map over mask voxels. The Gaussian window may reach outside the mask.
inline double ssim(const Volume& pred, const Volume& gt, const Mask& m, const SsimParams& p = {}) {
    detail::check_metric_inputs(pred, gt, m);
    validate(p);
    if (pred.dims.min() < static_cast<std::size_t>(p.window_size))
        throw Error(ErrorKind::VolumeTooSmall,
                    to_string(pred.dims) + " is smaller than the " + std::to_string(p.window_size) + "^3 SSIM window");
    const std::size_t n = detail::roi_size(m);

    const auto window = ssim_window(p.window_size, p.window_sigma);
    const auto& d = pred.dims;
    const std::size_t count = pred.size();
    std::vector<double> tmp_a(count), tmp_b(count);
    auto local_mean = [&](auto&& field) {
        for (std::size_t i = 0; i < count; ++i) tmp_a[i] = field(i);
        detail::convolve_axis(tmp_a, tmp_b, d, 0, window);
        detail::convolve_axis(tmp_b, tmp_a, d, 1, window);
        std::vector<double> out(count);
        detail::convolve_axis(tmp_a, out, d, 2, window);
        return out;
    };
    const auto& x = pred.data;
    const auto& y = gt.data;
    const auto mu_p = local_mean([&](std::size_t i) { return x[i]; });
    const auto mu_g = local_mean([&](std::size_t i) { return y[i]; });
    const auto e_pp = local_mean([&](std::size_t i) { return x[i] * x[i]; });
    const auto e_gg = local_mean([&](std::size_t i) { return y[i] * y[i]; });
    const auto e_pg = local_mean([&](std::size_t i) { return x[i] * y[i]; });

    const double c1 = (p.k1 * p.dynamic_range) * (p.k1 * p.dynamic_range);
    const double c2 = (p.k2 * p.dynamic_range) * (p.k2 * p.dynamic_range);
    double acc = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
        if (!m.data[i]) continue;
        acc += ssim_from_moments(mu_p[i], mu_g[i], e_pp[i], e_gg[i], e_pg[i], c1, c2);
    }
    return std::clamp(acc / static_cast<double>(n), -1.0, 1.0);
}

/// Normalizes against the ground truth's range, then scores the prediction on the mask.
inline MetricReport evaluate_case(const Volume& pred, const Volume& gt, const Mask& m, const SsimParams& params = {},
                                  std::string case_id = {}, std::string method_id = {}) {
    const auto [g, p] = joint_normalize(gt, pred, m);
    MetricReport r;
    r.case_id = std::move(case_id);
    r.method_id = std::move(method_id);
    r.mse = mse(p, g, m);
    r.psnr = psnr_from_mse(r.mse);
    r.ssim = ssim(p, g, m, params);
    r.roi_voxels = m.count();
    return r;
}

// JSON: {"case_id", "method_id", "mse", "psnr" (number or "inf"), "ssim", "roi_voxels"}.

inline void to_json(nlohmann::json& j, const MetricReport& r) {
    j = nlohmann::json{{"case_id", r.case_id},
                       {"method_id", r.method_id},
                       {"mse", r.mse},
                       {"psnr", nlohmann::json()},
                       {"ssim", r.ssim},
                       {"roi_voxels", r.roi_voxels}};
    if (std::isinf(r.psnr) && r.psnr > 0)
        j["psnr"] = "inf";
    else
        j["psnr"] = r.psnr;
}

inline void from_json(const nlohmann::json& j, MetricReport& r) {
    static const char* const keys[] = {"case_id", "method_id", "mse", "psnr", "ssim", "roi_voxels"};
    for (const auto& [key, _] : j.items()) {
        if (std::find_if(std::begin(keys), std::end(keys), [&](const char* k) { return key == k; }) == std::end(keys))
            throw Error(ErrorKind::InvalidArgument, "unknown MetricReport key '" + key + "'");
    }
    try {
        j.at("case_id").get_to(r.case_id);
        j.at("method_id").get_to(r.method_id);
        j.at("mse").get_to(r.mse);
        const auto& ps = j.at("psnr");
        if (ps.is_string()) {
            if (ps.get<std::string>() != "inf") throw Error(ErrorKind::InvalidArgument, "psnr string must be \"inf\"");
            r.psnr = std::numeric_limits<double>::infinity();
        } else {
            ps.get_to(r.psnr);
        }
        j.at("ssim").get_to(r.ssim);
        j.at("roi_voxels").get_to(r.roi_voxels);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::InvalidArgument, std::string("malformed MetricReport: ") + e.what());
    }
    if (!(r.mse >= 0.0)) throw Error(ErrorKind::InvalidArgument, "MetricReport mse must be >= 0");
    if (!(r.ssim >= -1.0 && r.ssim <= 1.0)) throw Error(ErrorKind::InvalidArgument, "MetricReport ssim outside [-1, 1]");
}

inline void write_reports_jsonl(const std::vector<MetricReport>& reports, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorKind::IoFailure, "cannot open " + path.string());
    for (const auto& r : reports) out << nlohmann::json(r).dump() << '\n';
    if (!out) throw Error(ErrorKind::IoFailure, "write failed for " + path.string());
}

/// Reads JSON-lines; a file holding one JSON object or an array of objects is accepted too.
inline std::vector<MetricReport> read_reports(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoFailure, "cannot open " + path.string());
    const std::string whole{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};

    auto doc = nlohmann::json::parse(whole, nullptr, /*allow_exceptions=*/false);
    if (doc.is_array()) {
        std::vector<MetricReport> reports;
        for (const auto& item : doc) reports.push_back(item.get<MetricReport>());
        return reports;
    }
    if (doc.is_object()) return {doc.get<MetricReport>()};

    std::vector<MetricReport> reports;
    std::istringstream lines(whole);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(lines, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            reports.push_back(nlohmann::json::parse(line).get<MetricReport>());
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorKind::InvalidArgument, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        } catch (const Error& e) {
            throw Error(e.kind(), path.string() + ":" + std::to_string(lineno) + ": " + e.message());
        }
    }
    return reports;
}

} // namespace voxpost
