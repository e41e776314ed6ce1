// voxpost: command-line front end for the inpainting post-processing toolkit.
//
// Exit codes: 0 success, 1 usage, 2 data error, 3 internal error.

#include <voxpost/voxpost.hpp>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitInternal = 3;

struct GlobalOptions {
    std::string config;
    int jobs = 0;
    bool strict = false;
    std::optional<std::uint64_t> seed;
    std::string out;
};

[[noreturn]] void usage_error(const std::string& flag, const std::string& what) {
    throw CLI::ValidationError(flag, what);
}

const std::string& require_out(const GlobalOptions& g) {
    if (g.out.empty()) usage_error("--out", "an output path is required");
    return g.out;
}

/// --mask and --voided come as a pair: with both, the operation only changes voxels inside the mask.
std::optional<std::pair<voxpost::Mask, voxpost::Volume>> load_mask_and_base(const std::string& mask, const std::string& voided) {
    if (mask.empty() != voided.empty()) usage_error(mask.empty() ? "--mask" : "--voided", "--mask and --voided must be given together");
    if (mask.empty()) return std::nullopt;
    return std::pair{voxpost::read_mask(mask), voxpost::read_volume(voided)};
}

void emit(const std::string& text, const std::string& path) {
    if (path.empty()) {
        std::cout << text;
        return;
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw voxpost::Error(voxpost::ErrorKind::IoFailure, "cannot open " + path);
    out << text;
}

} // namespace

int main(int argc, char** argv) {
    voxpost::configure_logging_from_env();

    CLI::App app{"voxpost - ensembling, filtering, histogram matching, scoring and degradation of 3D MRI volumes"};
    app.require_subcommand(1);
    app.fallthrough();

    GlobalOptions g;
    app.add_option("--config", g.config, "pipeline config JSON (run)");
    app.add_option("--jobs", g.jobs, "cases processed in parallel (run)")->check(CLI::PositiveNumber);
    app.add_flag("--strict", g.strict, "fail on the first incomplete or failing case");
    app.add_option("--seed", g.seed, "64-bit seed");
    app.add_option("--out", g.out, "output file or directory");

    // run ---------------------------------------------------------------
    auto* run = app.add_subcommand("run", "execute a pipeline config");

    // ensemble ----------------------------------------------------------
    auto* ens = app.add_subcommand("ensemble", "voxel-wise fusion of aligned predictions");
    std::vector<std::string> ens_inputs;
    std::string ens_mode = "mean";
    std::vector<double> ens_weights;
    std::string ens_mask, ens_voided;
    ens->add_option("--inputs", ens_inputs, "prediction volumes (repeatable)")->required();
    ens->add_option("--mode", ens_mode, "fusion mode")->check(CLI::IsMember({"mean", "median", "geomean", "max", "min"}));
    ens->add_option("--weights", ens_weights, "comma-separated weights (mean, geomean)")->delimiter(',');
    ens->add_option("--mask", ens_mask, "restrict fusion to this mask");
    ens->add_option("--voided", ens_voided, "values kept outside the mask");

    // filter ------------------------------------------------------------
    auto* filt = app.add_subcommand("filter", "median and/or Gaussian smoothing (median first)");
    std::string filt_input;
    int filt_k = 0;
    double filt_sigma = 0.5;
    std::string filt_mask, filt_voided;
    filt->add_option("--inputs", filt_input, "input volume")->required();
    filt->add_option("--median-k", filt_k, "odd median kernel size; 0 disables")->check(CLI::NonNegativeNumber);
    filt->add_option("--gaussian-sigma", filt_sigma, "Gaussian sigma in voxels; 0 disables")->check(CLI::NonNegativeNumber);
    filt->add_option("--mask", filt_mask, "keep the filter result only inside this mask");
    filt->add_option("--voided", filt_voided, "values kept outside the mask");

    // histmatch ---------------------------------------------------------
    auto* hm = app.add_subcommand("histmatch", "quantile-map a volume onto a reference within an ROI");
    std::string hm_input, hm_ref, hm_mask, hm_roi = "mask";
    hm->add_option("--inputs", hm_input, "source volume")->required();
    hm->add_option("--ref", hm_ref, "reference volume")->required();
    hm->add_option("--mask", hm_mask, "ROI mask");
    hm->add_option("--roi", hm_roi, "mask or volume")->check(CLI::IsMember({"mask", "volume"}));

    // composite ---------------------------------------------------------
    auto* comp = app.add_subcommand("composite", "paste a prediction into the voided scan");
    std::string comp_pred, comp_voided, comp_mask;
    comp->add_option("--pred", comp_pred)->required();
    comp->add_option("--voided", comp_voided)->required();
    comp->add_option("--mask", comp_mask)->required();

    // evaluate ----------------------------------------------------------
    auto* ev = app.add_subcommand("evaluate", "MSE / PSNR / SSIM of a prediction on a mask");
    std::string ev_pred, ev_gt, ev_mask, ev_case, ev_method;
    ev->add_option("--pred", ev_pred)->required();
    ev->add_option("--gt", ev_gt)->required();
    ev->add_option("--mask", ev_mask)->required();
    ev->add_option("--case-id", ev_case, "case id recorded in the report");
    ev->add_option("--method-id", ev_method, "method id recorded in the report");

    // rank --------------------------------------------------------------
    auto* rk = app.add_subcommand("rank", "rank-then-average scoring of metric reports");
    std::string rk_reports;
    rk->add_option("--reports", rk_reports, "MetricReport JSON-lines")->required();

    // degrade -----------------------------------------------------------
    auto* dg = app.add_subcommand("degrade", "build blurred training pairs from healthy scans");
    std::string dg_input;
    voxpost::DegradeSpec dg_spec;
    dg->add_option("--inputs", dg_input, "dataset root with <id>/<id>-t1n and <id>-healthy-mask")->required();
    dg->add_option("--sigma-min", dg_spec.sigma_min)->check(CLI::PositiveNumber);
    dg->add_option("--sigma-max", dg_spec.sigma_max)->check(CLI::PositiveNumber);
    dg->add_option("--draws", dg_spec.per_case_draws, "degraded volumes per case")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);

        if (*run) {
            if (g.config.empty()) usage_error("--config", "run needs a pipeline config");
            auto cfg = voxpost::load_config(g.config);
            if (!g.out.empty()) cfg.io.output_dir = g.out;
            if (g.strict) cfg.strict = true;
            if (g.seed) cfg.seed = g.seed;
            const auto summary = voxpost::run_pipeline(cfg, g.jobs);
            nlohmann::json s{{"completed", summary.completed}, {"failed", summary.failed}, {"skipped", summary.skipped}};
            if (summary.ranking_path) s["ranking"] = summary.ranking_path->string();
            if (summary.metrics_path) s["metrics"] = summary.metrics_path->string();
            std::cout << s.dump(2) << '\n';
            return summary.ok() ? 0 : kExitData;
        }
        if (*ens) {
            if (ens_inputs.size() < 2) usage_error("--inputs", "ensemble needs at least two --inputs");
            voxpost::AggregationMode mode{voxpost::parse_fusion_kind(ens_mode), std::nullopt};
            if (!ens_weights.empty()) {
                if (mode.kind != voxpost::FusionKind::Mean && mode.kind != voxpost::FusionKind::GeometricMean)
                    usage_error("--weights", "weights only apply to --mode mean or geomean");
                if (ens_weights.size() != ens_inputs.size())
                    usage_error("--weights", "expected one weight per --inputs entry");
                mode.weights = ens_weights;
            }
            const auto& out = require_out(g);
            std::vector<voxpost::Volume> inputs;
            for (const auto& p : ens_inputs) inputs.push_back(voxpost::read_volume(p));
            const auto mb = load_mask_and_base(ens_mask, ens_voided);
            const auto result = mb ? voxpost::ensemble_masked(inputs, mode, mb->first, mb->second) : voxpost::ensemble(inputs, mode);
            voxpost::write_volume(result, out);
            return 0;
        }
        if (*filt) {
            if (filt_k != 0 && filt_k % 2 == 0) usage_error("--median-k", "kernel size must be odd");
            const auto& out = require_out(g);
            const auto v = voxpost::read_volume(filt_input);
            const voxpost::FilterSpec spec{filt_k, filt_sigma};
            const auto mb = load_mask_and_base(filt_mask, filt_voided);
            auto f = [&](const voxpost::Volume& x) { return voxpost::apply_filters(x, spec); };
            voxpost::write_volume(mb ? voxpost::apply_masked(v, mb->second, mb->first, f) : f(v), out);
            return 0;
        }
        if (*hm) {
            const auto roi = voxpost::parse_roi(hm_roi);
            if (roi == voxpost::HistMatchRoi::MaskOnly && hm_mask.empty()) usage_error("--mask", "--roi mask needs --mask");
            const auto& out = require_out(g);
            std::optional<voxpost::Mask> mask;
            if (!hm_mask.empty()) mask = voxpost::read_mask(hm_mask);
            const auto result = voxpost::histogram_match(voxpost::read_volume(hm_input), voxpost::read_volume(hm_ref), mask,
                                                         voxpost::HistMatchSpec{roi});
            if (result.degenerate) spdlog::warn("source ROI is constant; mapped to the reference median");
            voxpost::write_volume(result.volume, out);
            return 0;
        }
        if (*comp) {
            const auto& out = require_out(g);
            voxpost::write_volume(voxpost::composite(voxpost::read_volume(comp_pred), voxpost::read_volume(comp_voided),
                                                     voxpost::read_mask(comp_mask)),
                                  out);
            return 0;
        }
        if (*ev) {
            const auto report = voxpost::evaluate_case(voxpost::read_volume(ev_pred), voxpost::read_volume(ev_gt),
                                                       voxpost::read_mask(ev_mask), {}, ev_case, ev_method);
            emit(nlohmann::json(report).dump() + "\n", g.out);
            return 0;
        }
        if (*rk) {
            const auto reports = voxpost::read_reports(rk_reports);
            emit(voxpost::ranks_csv(voxpost::rank_methods(reports)), g.out);
            return 0;
        }
        if (*dg) {
            if (dg_spec.sigma_max < dg_spec.sigma_min) usage_error("--sigma-max", "must be >= --sigma-min");
            if (g.seed) dg_spec.seed = *g.seed;
            const auto& out = require_out(g);
            const auto manifest = voxpost::degrade_dataset(dg_input, out, dg_spec);
            std::cout << "wrote " << manifest.size() << " degraded volumes to " << out << '\n';
            return 0;
        }
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitUsage;
    } catch (const voxpost::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        const auto k = e.kind();
        return (k == voxpost::ErrorKind::ConfigError || k == voxpost::ErrorKind::InvalidArgument) ? kExitUsage : kExitData;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return kExitInternal;
    }
    return kExitInternal;
}
