#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "clfa/adapter.hpp"
#include "clfa/backbone.hpp"
#include "clfa/error.hpp"
#include "clfa/pipeline.hpp"
#include "clfa/trajectory.hpp"
#include "clfa/util.hpp"

namespace clfa {

// ---------------------------------------------------------------------------
// Image-level AUC
// ---------------------------------------------------------------------------

struct ScoredSample {
    double score = 0.0;
    int label = 0;
};

struct ScoredSet {
    std::vector<ScoredSample> samples;
    int task_id = 0;
};

/// Tie-corrected Mann-Whitney AUC: the mean over (positive, negative) pairs
/// of full credit for a higher positive score and half credit for a tie.
/// Computed via average ranks, identical to the pair enumeration.
inline double roc_auc(const ScoredSet& scored) {
    std::size_t pos = 0, neg = 0;
    for (const auto& s : scored.samples) (s.label == 1 ? pos : neg)++;
    if (pos == 0 || neg == 0) raise(ErrorCode::SingleClass, "AUC needs both classes present");

    std::vector<std::size_t> idx(scored.samples.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return scored.samples[a].score < scored.samples[b].score;
    });

    // Sum of positive ranks with average ranks on tie groups, in half-units
    // so everything stays an exact integer.
    long long pos_rank_sum_x2 = 0;
    std::size_t i = 0;
    while (i < idx.size()) {
        std::size_t j = i;
        while (j < idx.size() && scored.samples[idx[j]].score == scored.samples[idx[i]].score) ++j;
        // ranks i+1 .. j (1-based); average rank x2 = (i + 1 + j)
        long long avg_x2 = static_cast<long long>(i) + 1 + static_cast<long long>(j);
        for (std::size_t k = i; k < j; ++k)
            if (scored.samples[idx[k]].label == 1) pos_rank_sum_x2 += avg_x2;
        i = j;
    }
    long long p = static_cast<long long>(pos), n = static_cast<long long>(neg);
    long long u_x2 = pos_rank_sum_x2 - p * (p + 1);  // 2 * (R_pos - P(P+1)/2)
    return static_cast<double>(u_x2) / static_cast<double>(2 * p * n);
}

// ---------------------------------------------------------------------------
// Cross-task AUC matrix
// ---------------------------------------------------------------------------

/// Square matrix of image-level AUCs in percent, (source task -> target
/// task). Cells whose target set is single-class are missing.
struct AUCMatrix {
    std::vector<int> task_ids;
    std::vector<double> values;  // row-major percent, NaN where missing
    std::vector<int> counts;     // samples per cell

    int k() const { return static_cast<int>(task_ids.size()); }
    double& at(int i, int j) { return values[static_cast<std::size_t>(i) * task_ids.size() + j]; }
    double at(int i, int j) const { return values[static_cast<std::size_t>(i) * task_ids.size() + j]; }
    bool present(int i, int j) const { return !std::isnan(at(i, j)); }
};

/// Pre-embedded evaluation samples of one target task.
struct EvalSample {
    tc::Tensor prefix;  // Backbone::prefix_to_first_tap output
    int label = 0;
};

/// Fills the source x target grid: cell (i, j) scores the task-i adapter
/// stack on task-j samples against task-j prototypes. Cells are independent
/// and run on up to `jobs` workers; output does not depend on the schedule.
inline AUCMatrix cross_task_matrix(const Backbone& backbone, const std::map<int, AdapterStack>& checkpoints,
                                   const std::map<int, std::vector<EvalSample>>& datasets,
                                   const std::map<int, tc::Tensor>& prototypes,
                                   PoolingMode aggregation = PoolingMode::Mean, int jobs = 1) {
    AUCMatrix m;
    for (const auto& [task, _] : checkpoints) m.task_ids.push_back(task);
    std::vector<int> targets;
    for (const auto& [task, _] : datasets) targets.push_back(task);
    if (targets != m.task_ids) {
        // Evaluate on the union grid only when both maps agree; the matrix is
        // square by contract.
        raise(ErrorCode::ConfigMismatch, "checkpoint and dataset task sets differ");
    }
    for (int t : m.task_ids)
        if (!prototypes.count(t)) raise(ErrorCode::ConfigMismatch, "missing prototypes for task " + std::to_string(t));

    const int k = m.k();
    m.values.assign(static_cast<std::size_t>(k) * k, std::nan(""));
    m.counts.assign(static_cast<std::size_t>(k) * k, 0);

    parallel_for(static_cast<std::size_t>(k) * k, jobs, [&](std::size_t cell) {
        const int i = static_cast<int>(cell) / k;
        const int j = static_cast<int>(cell) % k;
        const AdapterStack& stack = checkpoints.at(m.task_ids[static_cast<std::size_t>(i)]);
        const auto& samples = datasets.at(m.task_ids[static_cast<std::size_t>(j)]);
        const tc::Tensor& proto = prototypes.at(m.task_ids[static_cast<std::size_t>(j)]);
        ScoredSet scored;
        scored.task_id = m.task_ids[static_cast<std::size_t>(j)];
        for (const auto& s : samples)
            scored.samples.push_back({score_from_prefix(backbone, stack, s.prefix, proto, aggregation), s.label});
        m.counts[cell] = static_cast<int>(samples.size());
        try {
            m.values[cell] = 100.0 * roc_auc(scored);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::SingleClass) throw;  // single-class target: cell stays missing
        }
    });
    return m;
}

// ---------------------------------------------------------------------------
// Analytics
// ---------------------------------------------------------------------------

struct MatrixMeans {
    std::vector<double> row_means;
    std::vector<double> col_means;
    double grand_off_diagonal = std::nan("");
};

/// Row/column means (honoring the diagonal flag) and the grand mean, which
/// always excludes the diagonal. Missing cells are skipped.
inline MatrixMeans row_col_means(const AUCMatrix& m, bool include_diagonal = true) {
    const int k = m.k();
    MatrixMeans out;
    out.row_means.assign(static_cast<std::size_t>(k), std::nan(""));
    out.col_means.assign(static_cast<std::size_t>(k), std::nan(""));
    double grand = 0.0;
    std::size_t grand_n = 0;
    for (int i = 0; i < k; ++i) {
        double sum = 0.0;
        std::size_t n = 0;
        for (int j = 0; j < k; ++j) {
            if (!m.present(i, j)) continue;
            if (i != j) {
                grand += m.at(i, j);
                ++grand_n;
            }
            if (i == j && !include_diagonal) continue;
            sum += m.at(i, j);
            ++n;
        }
        if (n > 0) out.row_means[static_cast<std::size_t>(i)] = sum / static_cast<double>(n);
    }
    for (int j = 0; j < k; ++j) {
        double sum = 0.0;
        std::size_t n = 0;
        for (int i = 0; i < k; ++i) {
            if (!m.present(i, j)) continue;
            if (i == j && !include_diagonal) continue;
            sum += m.at(i, j);
            ++n;
        }
        if (n > 0) out.col_means[static_cast<std::size_t>(j)] = sum / static_cast<double>(n);
    }
    if (grand_n > 0) out.grand_off_diagonal = grand / static_cast<double>(grand_n);
    return out;
}

/// Element-wise A - B. Shapes and task ids must agree; a cell is missing if
/// it is missing in either input.
inline AUCMatrix diff_matrix(const AUCMatrix& a, const AUCMatrix& b) {
    if (a.task_ids != b.task_ids || a.values.size() != b.values.size())
        raise(ErrorCode::ShapeMismatch, "matrices differ in shape or task ids");
    AUCMatrix out = a;
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = a.values[i] - b.values[i];
    return out;
}

struct Improvement {
    int source_task = 0;
    int target_task = 0;
    double delta = 0.0;
};

/// Top-k off-diagonal cells of a diff matrix, by delta descending with
/// (source, target) ascending as the tie break.
inline std::vector<Improvement> top_k_improvements(const AUCMatrix& diff, std::size_t k) {
    std::vector<Improvement> all;
    const int n = diff.k();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            if (i == j || !diff.present(i, j)) continue;
            all.push_back({diff.task_ids[static_cast<std::size_t>(i)], diff.task_ids[static_cast<std::size_t>(j)],
                           diff.at(i, j)});
        }
    std::sort(all.begin(), all.end(), [](const Improvement& a, const Improvement& b) {
        if (a.delta != b.delta) return a.delta > b.delta;
        if (a.source_task != b.source_task) return a.source_task < b.source_task;
        return a.target_task < b.target_task;
    });
    if (all.size() > k) all.resize(k);
    return all;
}

struct CategoryStats {
    std::size_t count = 0;
    double min = std::nan(""), q1 = std::nan(""), median = std::nan(""), q3 = std::nan(""), max = std::nan("");
};

/// Buckets off-diagonal cells by (source category, target category), keeping
/// only values strictly above the threshold, and reports five-number
/// summaries with linear-interpolation quantiles. All nine buckets are
/// emitted, empty ones included.
inline std::map<std::pair<char, char>, CategoryStats> category_aggregate(
    const AUCMatrix& m, const std::map<int, TaskCategory>& categories, double threshold = 65.0) {
    const int k = m.k();
    for (int id : m.task_ids)
        if (!categories.count(id)) raise(ErrorCode::UncategorizedTask, "no category for task " + std::to_string(id));

    std::map<std::pair<char, char>, std::vector<double>> buckets;
    const char cats[3] = {'M', 'C', 'G'};
    for (char a : cats)
        for (char b : cats) buckets[{a, b}] = {};

    for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) {
            if (i == j || !m.present(i, j)) continue;
            double v = m.at(i, j);
            if (!(v > threshold)) continue;
            char a = static_cast<char>(categories.at(m.task_ids[static_cast<std::size_t>(i)]));
            char b = static_cast<char>(categories.at(m.task_ids[static_cast<std::size_t>(j)]));
            buckets[{a, b}].push_back(v);
        }

    std::map<std::pair<char, char>, CategoryStats> out;
    for (auto& [key, vals] : buckets) {
        CategoryStats s;
        s.count = vals.size();
        if (!vals.empty()) {
            std::sort(vals.begin(), vals.end());
            s.min = vals.front();
            s.q1 = linear_quantile_sorted(vals, 0.25);
            s.median = linear_quantile_sorted(vals, 0.5);
            s.q3 = linear_quantile_sorted(vals, 0.75);
            s.max = vals.back();
        }
        out[key] = s;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Report emission
// ---------------------------------------------------------------------------

namespace eval_detail {

inline std::string fmt2(double v) {
    if (std::isnan(v)) return "";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

/// Blue -> white -> red over [lo, hi]; missing cells render gray.
inline void heatmap_color(double v, double lo, double hi, unsigned char rgb[3]) {
    if (std::isnan(v)) {
        rgb[0] = rgb[1] = rgb[2] = 128;
        return;
    }
    double t = hi - lo < 1e-12 ? 0.5 : (v - lo) / (hi - lo);
    t = std::clamp(t, 0.0, 1.0);
    double r, g, b;
    if (t < 0.5) {  // blue to white
        double u = t / 0.5;
        r = u;
        g = u;
        b = 1.0;
    } else {  // white to red
        double u = (t - 0.5) / 0.5;
        r = 1.0;
        g = 1.0 - u;
        b = 1.0 - u;
    }
    rgb[0] = static_cast<unsigned char>(std::lround(255.0 * r));
    rgb[1] = static_cast<unsigned char>(std::lround(255.0 * g));
    rgb[2] = static_cast<unsigned char>(std::lround(255.0 * b));
}

inline std::ofstream open_out(const std::filesystem::path& p) {
    std::ofstream out(p, std::ios::binary);
    if (!out) raise(ErrorCode::IoError, "cannot write " + p.string());
    return out;
}

}  // namespace eval_detail

inline void write_matrix_csv(const AUCMatrix& m, const std::filesystem::path& path) {
    auto out = eval_detail::open_out(path);
    out << "task";
    for (int id : m.task_ids) out << "," << id;
    out << "\n";
    for (int i = 0; i < m.k(); ++i) {
        out << m.task_ids[static_cast<std::size_t>(i)];
        for (int j = 0; j < m.k(); ++j) out << "," << eval_detail::fmt2(m.at(i, j));
        out << "\n";
    }
}

/// Re-parses a matrix.csv (values quantized to 2 decimals, empty = missing).
inline AUCMatrix parse_matrix_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) raise(ErrorCode::MissingFile, "cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) raise(ErrorCode::IoError, "empty matrix csv");
    AUCMatrix m;
    {
        std::stringstream ss(line);
        std::string field;
        std::getline(ss, field, ',');  // "task"
        while (std::getline(ss, field, ',')) m.task_ids.push_back(std::stoi(field));
    }
    const int k = m.k();
    m.values.assign(static_cast<std::size_t>(k) * k, std::nan(""));
    m.counts.assign(static_cast<std::size_t>(k) * k, 0);
    int i = 0;
    while (std::getline(in, line) && i < k) {
        std::stringstream ss(line);
        std::string field;
        std::getline(ss, field, ',');  // row id
        for (int j = 0; j < k; ++j) {
            if (!std::getline(ss, field, ',')) field = "";
            if (!field.empty() && field != "\r") m.at(i, j) = std::stod(field);
        }
        ++i;
    }
    if (i != k) raise(ErrorCode::IoError, "matrix csv has too few rows");
    return m;
}

/// Writes matrix.csv, rowcol_means.csv, category_stats.csv, heatmap.ppm and
/// (when a baseline diff is supplied) top_k.csv into out_dir. Byte
/// deterministic given identical inputs.
inline void emit_report(const AUCMatrix& m, const AUCMatrix* diff, const std::map<int, TaskCategory>& categories,
                        const std::filesystem::path& out_dir, std::size_t top_k = 100,
                        double category_threshold = 65.0) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) raise(ErrorCode::IoError, "cannot create " + out_dir.string());

    write_matrix_csv(m, out_dir / "matrix.csv");

    {
        MatrixMeans incl = row_col_means(m, true);
        MatrixMeans excl = row_col_means(m, false);
        auto out = eval_detail::open_out(out_dir / "rowcol_means.csv");
        out << "task,row_mean_incl_diag,row_mean_excl_diag,col_mean_incl_diag,col_mean_excl_diag\n";
        for (int i = 0; i < m.k(); ++i) {
            out << m.task_ids[static_cast<std::size_t>(i)] << "," << eval_detail::fmt2(incl.row_means[static_cast<std::size_t>(i)])
                << "," << eval_detail::fmt2(excl.row_means[static_cast<std::size_t>(i)]) << ","
                << eval_detail::fmt2(incl.col_means[static_cast<std::size_t>(i)]) << ","
                << eval_detail::fmt2(excl.col_means[static_cast<std::size_t>(i)]) << "\n";
        }
        out << "grand_off_diagonal," << eval_detail::fmt2(incl.grand_off_diagonal) << ",,,\n";
    }

    {
        auto stats = category_aggregate(m, categories, category_threshold);
        auto out = eval_detail::open_out(out_dir / "category_stats.csv");
        out << "source_cat,target_cat,count,min,q1,median,q3,max\n";
        for (const auto& [key, s] : stats) {
            out << key.first << "," << key.second << "," << s.count << "," << eval_detail::fmt2(s.min) << ","
                << eval_detail::fmt2(s.q1) << "," << eval_detail::fmt2(s.median) << "," << eval_detail::fmt2(s.q3)
                << "," << eval_detail::fmt2(s.max) << "\n";
        }
    }

    if (diff) {
        auto ranked = top_k_improvements(*diff, top_k);
        auto out = eval_detail::open_out(out_dir / "top_k.csv");
        out << "rank,source_task,target_task,delta\n";
        for (std::size_t r = 0; r < ranked.size(); ++r)
            out << (r + 1) << "," << ranked[r].source_task << "," << ranked[r].target_task << ","
                << eval_detail::fmt2(ranked[r].delta) << "\n";
    }

    {
        // Heatmap: one 8x8 block per cell, colormap over the present range.
        const int k = m.k();
        const int block = 8;
        double lo = std::nan(""), hi = std::nan("");
        for (double v : m.values) {
            if (std::isnan(v)) continue;
            if (std::isnan(lo) || v < lo) lo = v;
            if (std::isnan(hi) || v > hi) hi = v;
        }
        if (std::isnan(lo)) lo = hi = 0.0;
        auto out = eval_detail::open_out(out_dir / "heatmap.ppm");
        out << "P6\n" << k * block << " " << k * block << "\n255\n";
        std::string bytes;
        bytes.reserve(static_cast<std::size_t>(k) * block * k * block * 3);
        for (int py = 0; py < k * block; ++py)
            for (int px = 0; px < k * block; ++px) {
                unsigned char rgb[3];
                eval_detail::heatmap_color(m.at(py / block, px / block), lo, hi, rgb);
                bytes.push_back(static_cast<char>(rgb[0]));
                bytes.push_back(static_cast<char>(rgb[1]));
                bytes.push_back(static_cast<char>(rgb[2]));
            }
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
}

}  // namespace clfa
