#pragma once

// Declarative post-processing pipeline: ensemble -> filters -> histogram match -> composite,
// with optional scoring against ground truth.

#include <voxpost/aggregate.hpp>
#include <voxpost/error.hpp>
#include <voxpost/filters.hpp>
#include <voxpost/intensity.hpp>
#include <voxpost/metrics.hpp>
#include <voxpost/nifti.hpp>
#include <voxpost/ranking.hpp>
#include <voxpost/volume.hpp>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <variant>
#include <vector>

namespace voxpost {

namespace fs = std::filesystem;

inline constexpr const char* kPipelineMethodId = "pipeline";

struct EnsembleStep {
    AggregationMode mode{FusionKind::GeometricMean, std::nullopt};
};
struct MedianStep {
    int k = 3;
};
struct GaussianStep {
    double sigma = 0.5;
};
struct HistMatchStep {
    /// A method id from the prediction directories, or a directory holding `<case_id>.nii[.gz]`.
    std::string reference;
    HistMatchRoi roi = HistMatchRoi::MaskOnly;
};
struct CompositeStep {};

using Step = std::variant<EnsembleStep, MedianStep, GaussianStep, HistMatchStep, CompositeStep>;

struct IoConfig {
    fs::path input_dir;
    fs::path output_dir;
    std::vector<fs::path> prediction_dirs;
};

struct EvaluationConfig {
    bool enabled = false;
    fs::path gt_dir;
    SsimParams ssim;
};

struct PipelineConfig {
    std::vector<Step> steps;
    IoConfig io;
    EvaluationConfig evaluation;
    std::optional<std::uint64_t> seed;
    bool strict = false;
    int jobs = 1;
};

struct CaseRecord {
    std::string case_id;
    fs::path voided;
    fs::path mask;
    /// Keyed by method id, the prediction directory's name.
    std::map<std::string, fs::path> predictions;
    std::optional<fs::path> gt;
};

struct RunSummary {
    std::vector<std::string> completed;
    std::vector<std::string> failed;
    std::vector<std::string> skipped;
    std::vector<fs::path> outputs;
    std::optional<fs::path> metrics_path;
    std::optional<fs::path> ranking_path;
    std::vector<MetricReport> reports;

    bool ok() const noexcept { return failed.empty() && !completed.empty(); }
};

/// Logger level from VOXPOST_LOG (error, warn, info, debug); defaults to warn.
inline void configure_logging_from_env() {
    const char* env = std::getenv("VOXPOST_LOG");
    const std::string level = env ? env : "warn";
    if (level == "error") spdlog::set_level(spdlog::level::err);
    else if (level == "info") spdlog::set_level(spdlog::level::info);
    else if (level == "debug") spdlog::set_level(spdlog::level::debug);
    else spdlog::set_level(spdlog::level::warn);
}

inline std::string method_id_of(const fs::path& dir) {
    auto p = dir;
    if (!p.has_filename()) p = p.parent_path();
    return p.filename().string();
}

/// Pastes `pred` into `voided` on the mask; outside it the voided values are kept verbatim.
inline Volume composite(const Volume& pred, const Volume& voided, const Mask& m) {
    check_congruent(pred, voided);
    check_congruent(pred, m);
    Volume out = voided;
    for (std::size_t i = 0; i < out.size(); ++i)
        if (m.data[i]) out.data[i] = pred.data[i];
    return out;
}

// ---------------------------------------------------------------------------
// Configuration

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                                const std::string& where) {
    if (!j.is_object()) throw Error(ErrorKind::ConfigError, where + " must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        const bool known = std::any_of(allowed.begin(), allowed.end(), [&](const char* k) { return it.key() == k; });
        if (!known) throw Error(ErrorKind::ConfigError, "unknown key '" + it.key() + "' in " + where);
    }
}

template <class T>
T config_value(const nlohmann::json& j, const char* key, const std::string& where) {
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw Error(ErrorKind::ConfigError, "missing or ill-typed '" + std::string(key) + "' in " + where);
    }
}

inline Step parse_step(const nlohmann::json& j, std::size_t index) {
    const std::string where = "steps[" + std::to_string(index) + "]";
    if (!j.is_object() || !j.contains("op")) throw Error(ErrorKind::ConfigError, where + " needs an \"op\"");
    const auto op = config_value<std::string>(j, "op", where);
    if (op == "ensemble") {
        reject_unknown_keys(j, {"op", "mode", "weights"}, where);
        EnsembleStep s;
        if (j.contains("mode")) s.mode.kind = parse_fusion_kind(config_value<std::string>(j, "mode", where));
        if (j.contains("weights")) s.mode.weights = config_value<std::vector<double>>(j, "weights", where);
        return s;
    }
    if (op == "median") {
        reject_unknown_keys(j, {"op", "k"}, where);
        MedianStep s;
        if (j.contains("k")) s.k = config_value<int>(j, "k", where);
        if (s.k < 1 || s.k % 2 == 0) throw Error(ErrorKind::ConfigError, where + ": median k must be odd and >= 1");
        return s;
    }
    if (op == "gaussian") {
        reject_unknown_keys(j, {"op", "sigma"}, where);
        GaussianStep s;
        if (j.contains("sigma")) s.sigma = config_value<double>(j, "sigma", where);
        if (!(s.sigma >= 0.0)) throw Error(ErrorKind::ConfigError, where + ": sigma must be >= 0");
        return s;
    }
    if (op == "histmatch") {
        reject_unknown_keys(j, {"op", "reference", "roi"}, where);
        HistMatchStep s;
        s.reference = config_value<std::string>(j, "reference", where);
        if (j.contains("roi")) s.roi = parse_roi(config_value<std::string>(j, "roi", where));
        return s;
    }
    if (op == "composite") {
        reject_unknown_keys(j, {"op"}, where);
        return CompositeStep{};
    }
    throw Error(ErrorKind::ConfigError, where + ": unknown op '" + op + "'");
}

inline nlohmann::json step_to_json(const Step& step) {
    return std::visit(
        [](const auto& s) -> nlohmann::json {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, EnsembleStep>) {
                nlohmann::json j{{"op", "ensemble"}, {"mode", std::string(to_string(s.mode.kind))}};
                if (s.mode.weights) j["weights"] = *s.mode.weights;
                return j;
            } else if constexpr (std::is_same_v<T, MedianStep>) {
                return {{"op", "median"}, {"k", s.k}};
            } else if constexpr (std::is_same_v<T, GaussianStep>) {
                return {{"op", "gaussian"}, {"sigma", s.sigma}};
            } else if constexpr (std::is_same_v<T, HistMatchStep>) {
                return {{"op", "histmatch"}, {"reference", s.reference}, {"roi", s.roi == HistMatchRoi::MaskOnly ? "mask" : "volume"}};
            } else {
                return {{"op", "composite"}};
            }
        },
        step);
}

} // namespace detail

/// The best-scoring configuration: geometric-mean ensemble (equal weights), Gaussian
/// sigma 0.5, histogram match to the first prediction directory, composite.
inline std::vector<Step> default_steps(const std::vector<fs::path>& prediction_dirs) {
    std::vector<Step> steps;
    EnsembleStep e;
    e.mode.kind = FusionKind::GeometricMean;
    if (!prediction_dirs.empty())
        e.mode.weights = std::vector<double>(prediction_dirs.size(), 1.0 / static_cast<double>(prediction_dirs.size()));
    steps.emplace_back(e);
    steps.emplace_back(GaussianStep{0.5});
    steps.emplace_back(HistMatchStep{prediction_dirs.empty() ? std::string{} : method_id_of(prediction_dirs.front()),
                                     HistMatchRoi::MaskOnly});
    steps.emplace_back(CompositeStep{});
    return steps;
}

/// Structural checks that do not touch the filesystem.
inline void validate(const PipelineConfig& cfg) {
    if (cfg.steps.empty()) throw Error(ErrorKind::ConfigError, "steps must not be empty");
    if (cfg.io.prediction_dirs.empty()) throw Error(ErrorKind::ConfigError, "io.prediction_dirs must not be empty");
    if (cfg.jobs < 1) throw Error(ErrorKind::ConfigError, "jobs must be >= 1");

    std::set<std::string> ids;
    for (const auto& d : cfg.io.prediction_dirs) {
        const auto id = method_id_of(d);
        if (id.empty() || id == kPipelineMethodId)
            throw Error(ErrorKind::ConfigError, "prediction directory name '" + id + "' cannot be used as a method id");
        if (!ids.insert(id).second) throw Error(ErrorKind::ConfigError, "two prediction directories named " + id);
    }

    std::size_t ensembles = 0;
    for (std::size_t i = 0; i < cfg.steps.size(); ++i) {
        if (const auto* e = std::get_if<EnsembleStep>(&cfg.steps[i])) {
            if (i != 0) throw Error(ErrorKind::ConfigError, "ensemble must be the first step");
            ++ensembles;
            if (cfg.io.prediction_dirs.size() < 2)
                throw Error(ErrorKind::ConfigError, "ensemble step needs at least two prediction directories");
            detail::validate_weights(e->mode, cfg.io.prediction_dirs.size());
        }
        if (const auto* h = std::get_if<HistMatchStep>(&cfg.steps[i]); h && h->reference.empty())
            throw Error(ErrorKind::ConfigError, "histmatch.reference must not be empty");
    }
    if (ensembles == 0 && cfg.io.prediction_dirs.size() != 1)
        throw Error(ErrorKind::ConfigError, "without an ensemble step exactly one prediction directory is allowed");
    if (cfg.evaluation.enabled && cfg.evaluation.gt_dir.empty())
        throw Error(ErrorKind::ConfigError, "evaluation.enabled requires evaluation.gt_dir");
}

/// Parses the config document; unknown keys anywhere are errors. Missing "steps" means default_steps().
inline PipelineConfig parse_config(const nlohmann::json& j) {
    detail::reject_unknown_keys(j, {"steps", "io", "evaluation", "seed", "strict", "jobs"}, "config");
    PipelineConfig cfg;

    if (!j.contains("io")) throw Error(ErrorKind::ConfigError, "config needs an \"io\" section");
    const auto& io = j.at("io");
    detail::reject_unknown_keys(io, {"input_dir", "output_dir", "prediction_dirs"}, "io");
    cfg.io.input_dir = detail::config_value<std::string>(io, "input_dir", "io");
    cfg.io.output_dir = detail::config_value<std::string>(io, "output_dir", "io");
    for (const auto& d : detail::config_value<std::vector<std::string>>(io, "prediction_dirs", "io"))
        cfg.io.prediction_dirs.emplace_back(d);

    if (j.contains("steps")) {
        const auto& steps = j.at("steps");
        if (!steps.is_array()) throw Error(ErrorKind::ConfigError, "steps must be an array");
        for (std::size_t i = 0; i < steps.size(); ++i) cfg.steps.push_back(detail::parse_step(steps[i], i));
    } else {
        cfg.steps = default_steps(cfg.io.prediction_dirs);
    }

    if (j.contains("evaluation")) {
        const auto& ev = j.at("evaluation");
        detail::reject_unknown_keys(ev, {"enabled", "gt_dir", "ssim"}, "evaluation");
        cfg.evaluation.enabled = ev.value("enabled", false);
        if (ev.contains("gt_dir")) cfg.evaluation.gt_dir = detail::config_value<std::string>(ev, "gt_dir", "evaluation");
        if (ev.contains("ssim")) {
            const auto& s = ev.at("ssim");
            detail::reject_unknown_keys(s, {"window_size", "window_sigma", "k1", "k2"}, "evaluation.ssim");
            auto& p = cfg.evaluation.ssim;
            p.window_size = s.value("window_size", p.window_size);
            p.window_sigma = s.value("window_sigma", p.window_sigma);
            p.k1 = s.value("k1", p.k1);
            p.k2 = s.value("k2", p.k2);
        }
    }
    if (j.contains("seed")) cfg.seed = detail::config_value<std::uint64_t>(j, "seed", "config");
    if (j.contains("strict")) cfg.strict = detail::config_value<bool>(j, "strict", "config");
    if (j.contains("jobs")) cfg.jobs = detail::config_value<int>(j, "jobs", "config");
    validate(cfg);
    return cfg;
}

inline PipelineConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoFailure, "cannot open config " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::ConfigError, path.string() + ": " + e.what());
    }
    return parse_config(j);
}

inline nlohmann::json config_to_json(const PipelineConfig& cfg) {
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& s : cfg.steps) steps.push_back(detail::step_to_json(s));
    nlohmann::json preds = nlohmann::json::array();
    for (const auto& p : cfg.io.prediction_dirs) preds.push_back(p.string());
    nlohmann::json j{{"steps", steps},
                     {"io", {{"input_dir", cfg.io.input_dir.string()}, {"output_dir", cfg.io.output_dir.string()}, {"prediction_dirs", preds}}},
                     {"evaluation", {{"enabled", cfg.evaluation.enabled}, {"gt_dir", cfg.evaluation.gt_dir.string()}}},
                     {"strict", cfg.strict},
                     {"jobs", cfg.jobs}};
    if (cfg.seed) j["seed"] = *cfg.seed;
    return j;
}

// ---------------------------------------------------------------------------
// Case discovery

struct Discovery {
    std::vector<CaseRecord> cases;
    /// Case ids dropped in lenient mode, with the reason.
    std::vector<std::pair<std::string, std::string>> skipped;
};

/// One record per `<input_dir>/<id>/` holding `<id>-t1n-voided` and `<id>-mask`, whose
/// `<id>.nii[.gz]` exists in every prediction directory. Incomplete cases are skipped,
/// or raise in strict mode.
inline Discovery discover_cases(const IoConfig& io, bool strict, const std::optional<fs::path>& gt_dir = std::nullopt) {
    if (!fs::is_directory(io.input_dir)) throw Error(ErrorKind::LayoutError, io.input_dir.string() + " is not a directory");
    for (const auto& d : io.prediction_dirs)
        if (!fs::is_directory(d)) throw Error(ErrorKind::LayoutError, "prediction directory " + d.string() + " does not exist");
    if (gt_dir && !fs::is_directory(*gt_dir)) throw Error(ErrorKind::LayoutError, "gt directory " + gt_dir->string() + " does not exist");

    std::vector<std::string> ids;
    for (const auto& entry : fs::directory_iterator(io.input_dir))
        if (entry.is_directory()) ids.push_back(entry.path().filename().string());
    std::sort(ids.begin(), ids.end());

    Discovery found;
    auto skip = [&](const std::string& id, const std::string& why, ErrorKind kind) {
        if (strict) throw Error(kind, "case " + id + ": " + why);
        spdlog::warn("[{}] skipped: {}", id, why);
        found.skipped.emplace_back(id, why);
    };
    for (const auto& id : ids) {
        const auto dir = io.input_dir / id;
        CaseRecord rec;
        rec.case_id = id;
        rec.voided = find_nifti(dir, id + "-t1n-voided");
        rec.mask = find_nifti(dir, id + "-mask");
        if (rec.voided.empty() || rec.mask.empty()) {
            skip(id, "missing " + id + "-t1n-voided or " + id + "-mask", ErrorKind::LayoutError);
            continue;
        }
        std::string missing;
        for (const auto& d : io.prediction_dirs) {
            const auto p = find_nifti(d, id);
            if (p.empty()) missing += (missing.empty() ? "" : ", ") + method_id_of(d);
            else rec.predictions.emplace(method_id_of(d), p);
        }
        if (!missing.empty()) {
            skip(id, "no prediction from " + missing, ErrorKind::IncompleteGrid);
            continue;
        }
        if (gt_dir) {
            const auto g = find_nifti(*gt_dir, id + "-t1n");
            if (g.empty()) {
                skip(id, "no ground truth " + id + "-t1n", ErrorKind::LayoutError);
                continue;
            }
            rec.gt = g;
        }
        found.cases.push_back(std::move(rec));
    }
    if (found.cases.empty()) throw Error(ErrorKind::EmptyDataset, "no usable cases under " + io.input_dir.string());
    return found;
}

// ---------------------------------------------------------------------------
// Execution

struct CaseOutcome {
    fs::path output;
    std::vector<MetricReport> reports;
};

namespace detail {

inline Volume load_reference(const HistMatchStep& step, const CaseRecord& rec, const std::vector<Volume>& preds,
                             const std::map<std::string, std::size_t>& by_method) {
    if (const auto it = by_method.find(step.reference); it != by_method.end()) return preds[it->second];
    const fs::path ref(step.reference);
    if (fs::is_directory(ref)) {
        const auto p = find_nifti(ref, rec.case_id);
        if (p.empty()) throw Error(ErrorKind::LayoutError, "reference directory has no " + rec.case_id + ".nii[.gz]");
        return read_volume(p);
    }
    throw Error(ErrorKind::ConfigError, "histmatch reference '" + step.reference + "' is neither a method id nor a directory");
}

/// Values exactly as they will be stored (float32).
inline Volume as_stored(Volume v) {
    for (double& x : v.data) x = static_cast<double>(static_cast<float>(x));
    return v;
}

} // namespace detail

/// Runs every step for one case, writes `<output_dir>/<id>-inpainted.nii.gz`, and scores
/// the raw predictions plus the result when evaluation is on.
inline CaseOutcome process_case(const PipelineConfig& cfg, const CaseRecord& rec) {
    const Volume voided = read_volume(rec.voided);
    const Mask mask = read_mask(rec.mask);
    check_congruent(voided, mask);

    // Predictions in config order; by_method maps method id -> position.
    std::vector<Volume> ordered;
    std::map<std::string, std::size_t> by_method;
    for (const auto& d : cfg.io.prediction_dirs) {
        const auto id = method_id_of(d);
        ordered.push_back(read_volume(rec.predictions.at(id)));
        check_same_grid(voided, ordered.back());
        by_method.emplace(id, ordered.size() - 1);
    }

    std::optional<Volume> work;
    if (!std::holds_alternative<EnsembleStep>(cfg.steps.front())) work = ordered.front();
    for (const auto& step : cfg.steps) {
        std::visit(
            [&](const auto& s) {
                using T = std::decay_t<decltype(s)>;
                if constexpr (std::is_same_v<T, EnsembleStep>) {
                    work = ensemble(ordered, s.mode);
                } else if constexpr (std::is_same_v<T, MedianStep>) {
                    work = median_filter(*work, s.k);
                } else if constexpr (std::is_same_v<T, GaussianStep>) {
                    work = gaussian_smooth(*work, s.sigma);
                } else if constexpr (std::is_same_v<T, HistMatchStep>) {
                    const Volume ref = detail::load_reference(s, rec, ordered, by_method);
                    auto matched = histogram_match(*work, ref, mask, HistMatchSpec{s.roi});
                    if (matched.degenerate) spdlog::warn("[{}] histogram match: constant source ROI", rec.case_id);
                    work = std::move(matched.volume);
                } else {
                    work = composite(*work, voided, mask);
                }
            },
            step);
        spdlog::debug("[{}] finished step {}", rec.case_id, detail::step_to_json(step).dump());
    }
    // The compositing guarantee holds whatever the declared steps were.
    Volume result = composite(*work, voided, mask);
    for (double x : result.data)
        if (!std::isfinite(x)) throw Error(ErrorKind::NonFiniteVoxel, "pipeline produced a non-finite voxel");

    CaseOutcome outcome;
    outcome.output = cfg.io.output_dir / (rec.case_id + "-inpainted.nii.gz");
    write_volume(result, outcome.output, true);

    if (cfg.evaluation.enabled) {
        if (!rec.gt) throw Error(ErrorKind::LayoutError, "no ground truth for case " + rec.case_id);
        const Volume gt = read_volume(*rec.gt);
        check_congruent(gt, mask);
        for (const auto& [id, pos] : by_method)
            outcome.reports.push_back(evaluate_case(ordered[pos], gt, mask, cfg.evaluation.ssim, rec.case_id, id));
        outcome.reports.push_back(
            evaluate_case(detail::as_stored(std::move(result)), gt, mask, cfg.evaluation.ssim, rec.case_id, kPipelineMethodId));
    }
    spdlog::info("[{}] wrote {}", rec.case_id, outcome.output.string());
    return outcome;
}

/// Processes cases on `jobs` worker threads (cfg.jobs when 0). Cases are independent and
/// their results are gathered in case order, so outputs do not depend on the thread count.
inline RunSummary run_pipeline(const PipelineConfig& cfg, int jobs = 0) {
    validate(cfg);
    if (jobs <= 0) jobs = cfg.jobs;
    const auto gt_dir = cfg.evaluation.enabled ? std::optional<fs::path>(cfg.evaluation.gt_dir) : std::nullopt;
    const Discovery found = discover_cases(cfg.io, cfg.strict, gt_dir);

    std::error_code ec;
    fs::create_directories(cfg.io.output_dir, ec);
    if (ec) throw Error(ErrorKind::IoFailure, "cannot create " + cfg.io.output_dir.string());

    const std::size_t n = found.cases.size();
    std::vector<std::optional<CaseOutcome>> outcomes(n);
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                outcomes[i] = process_case(cfg, found.cases[i]);
            } catch (const std::exception& e) {
                spdlog::error("[{}] {}", found.cases[i].case_id, e.what());
                errors[i] = std::current_exception();
            }
        }
    };
    {
        std::vector<std::jthread> pool;
        const auto threads = std::min<std::size_t>(static_cast<std::size_t>(jobs), n);
        for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
        worker();
    }

    RunSummary summary;
    for (const auto& [id, why] : found.skipped) summary.skipped.push_back(id);
    for (std::size_t i = 0; i < n; ++i) {
        if (errors[i]) {
            if (cfg.strict) std::rethrow_exception(errors[i]);
            summary.failed.push_back(found.cases[i].case_id);
            continue;
        }
        summary.completed.push_back(found.cases[i].case_id);
        summary.outputs.push_back(outcomes[i]->output);
        for (auto& r : outcomes[i]->reports) summary.reports.push_back(std::move(r));
    }

    if (cfg.evaluation.enabled && !summary.reports.empty()) {
        summary.metrics_path = cfg.io.output_dir / "metrics.jsonl";
        write_reports_jsonl(summary.reports, *summary.metrics_path);
        summary.ranking_path = cfg.io.output_dir / "ranking.csv";
        export_ranks(rank_methods(summary.reports), *summary.ranking_path);
    }
    return summary;
}

} // namespace voxpost
