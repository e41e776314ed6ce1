#pragma once

// Rank-then-average scoring over (case x metric) cells. Lower score is better.

#include <voxpost/error.hpp>
#include <voxpost/metrics.hpp>

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace voxpost {

enum class RankedMetric { Mse = 0, Psnr = 1, Ssim = 2 };
inline constexpr std::size_t kRankedMetricCount = 3;

struct RankTable {
    /// Sorted lexicographically.
    std::vector<std::string> methods;
    std::vector<std::string> cases;
    /// Parallel to `methods`; each in [1, M].
    std::vector<double> scores;
    /// ranks[(case * 3 + metric) * M + method]
    std::vector<double> ranks;

    double rank(std::size_t c, RankedMetric metric, std::size_t method) const {
        return ranks[(c * kRankedMetricCount + static_cast<std::size_t>(metric)) * methods.size() + method];
    }

    double score_of(const std::string& method) const {
        const auto it = std::find(methods.begin(), methods.end(), method);
        if (it == methods.end()) throw Error(ErrorKind::InvalidArgument, "unknown method " + method);
        return scores[static_cast<std::size_t>(it - methods.begin())];
    }
};

/// Ranks of `values` (1 = best), ties sharing the mean of their positions.
/// `higher_is_better` flips the ordering; +inf is an ordinary largest value.
inline std::vector<double> average_ranks(std::span<const double> values, bool higher_is_better) {
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return higher_is_better ? values[a] > values[b] : values[a] < values[b];
    });
    std::vector<double> ranks(n);
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i + 1;
        while (j < n && values[order[j]] == values[order[i]]) ++j;
        // Positions i+1 .. j (1-based) share their mean.
        const double shared = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k) ranks[order[k]] = shared;
        i = j;
    }
    return ranks;
}

inline RankTable rank_methods(std::span<const MetricReport> reports) {
    std::map<std::pair<std::string, std::string>, const MetricReport*> grid;
    std::vector<std::string> cases, methods;
    for (const auto& r : reports) {
        for (double v : {r.mse, r.ssim})
            if (std::isnan(v)) throw Error(ErrorKind::InvalidArgument, "NaN metric for " + r.case_id + "/" + r.method_id);
        if (std::isnan(r.psnr)) throw Error(ErrorKind::InvalidArgument, "NaN psnr for " + r.case_id + "/" + r.method_id);
        if (!grid.emplace(std::pair{r.case_id, r.method_id}, &r).second)
            throw Error(ErrorKind::DuplicateReport, "two reports for case " + r.case_id + ", method " + r.method_id);
        cases.push_back(r.case_id);
        methods.push_back(r.method_id);
    }
    for (auto* v : {&cases, &methods}) {
        std::sort(v->begin(), v->end());
        v->erase(std::unique(v->begin(), v->end()), v->end());
    }
    if (methods.size() < 2) throw Error(ErrorKind::IncompleteGrid, "ranking needs at least two methods");
    if (cases.empty()) throw Error(ErrorKind::IncompleteGrid, "no cases to rank");
    for (const auto& c : cases)
        for (const auto& m : methods)
            if (!grid.contains({c, m})) throw Error(ErrorKind::IncompleteGrid, "missing report for case " + c + ", method " + m);

    RankTable t;
    t.methods = methods;
    t.cases = cases;
    const std::size_t M = methods.size();
    t.ranks.resize(cases.size() * kRankedMetricCount * M);
    t.scores.assign(M, 0.0);
    std::vector<double> values(M);
    for (std::size_t c = 0; c < cases.size(); ++c) {
        for (std::size_t k = 0; k < kRankedMetricCount; ++k) {
            for (std::size_t m = 0; m < M; ++m) {
                const MetricReport& r = *grid.at({cases[c], methods[m]});
                values[m] = k == 0 ? r.mse : k == 1 ? r.psnr : r.ssim;
            }
            const auto ranks = average_ranks(values, /*higher_is_better=*/k != 0);
            std::copy(ranks.begin(), ranks.end(), t.ranks.begin() + static_cast<std::ptrdiff_t>((c * kRankedMetricCount + k) * M));
        }
    }
    // Accumulate per method in (case, metric) order so the sum is reproducible.
    const double cells = static_cast<double>(cases.size() * kRankedMetricCount);
    for (std::size_t m = 0; m < M; ++m) {
        double acc = 0.0;
        for (std::size_t cell = 0; cell < cases.size() * kRankedMetricCount; ++cell) acc += t.ranks[cell * M + m];
        t.scores[m] = acc / cells;
    }
    return t;
}

/// (method, score) ascending by score, ties by method id.
inline std::vector<std::pair<std::string, double>> sorted_scores(const RankTable& t) {
    std::vector<std::pair<std::string, double>> rows;
    for (std::size_t m = 0; m < t.methods.size(); ++m) rows.emplace_back(t.methods[m], t.scores[m]);
    std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
        return a.second < b.second || (a.second == b.second && a.first < b.first);
    });
    return rows;
}

inline std::string format_score(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string ranks_csv(const RankTable& t) {
    std::string out = "method,score\n";
    for (const auto& [method, score] : sorted_scores(t)) out += method + "," + format_score(score) + "\n";
    return out;
}

inline void export_ranks(const RankTable& t, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorKind::IoFailure, "cannot open " + path.string());
    out << ranks_csv(t);
    if (!out) throw Error(ErrorKind::IoFailure, "write failed for " + path.string());
}

/// Parses the "method,score" CSV written by export_ranks.
inline std::vector<std::pair<std::string, double>> read_ranks_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoFailure, "cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "method,score") throw Error(ErrorKind::InvalidArgument, "missing CSV header");
    std::vector<std::pair<std::string, double>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto comma = line.rfind(',');
        if (comma == std::string::npos) throw Error(ErrorKind::InvalidArgument, "bad CSV row: " + line);
        rows.emplace_back(line.substr(0, comma), std::stod(line.substr(comma + 1)));
    }
    return rows;
}

} // namespace voxpost
