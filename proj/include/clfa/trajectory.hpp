#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "clfa/error.hpp"
#include "clfa/util.hpp"

namespace clfa {

// ---------------------------------------------------------------------------
// Core trajectory types
// ---------------------------------------------------------------------------

struct Sample {
    double t = 0.0;   // seconds
    double x = 0.0;   // tablet units
    double y = 0.0;   // tablet units
    double p = 0.0;   // pressure in [0,1]
    bool on_paper = true;

    bool operator==(const Sample&) const = default;
};

constexpr int kTaskCount = 25;
constexpr std::size_t kMinSamples = 8;

/// Timestamped pen samples for one subject x task.
struct RawTrajectory {
    std::string subject_id;
    int task_id = 1;       // 1..25
    int label = 0;         // 0 normal, 1 abnormal
    std::vector<Sample> samples;
    std::size_t dropped_count = 0;  // non-finite rows removed at parse time

    double duration() const {
        return samples.empty() ? 0.0 : samples.back().t - samples.front().t;
    }
};

/// Throws unless all trajectory invariants hold.
inline void validate_trajectory(const RawTrajectory& traj) {
    if (traj.task_id < 1 || traj.task_id > kTaskCount)
        raise(ErrorCode::InvalidArgument, "task_id out of range: " + std::to_string(traj.task_id));
    if (traj.label != 0 && traj.label != 1) raise(ErrorCode::InvalidArgument, "label must be 0 or 1");
    if (traj.samples.size() < kMinSamples)
        raise(ErrorCode::TooFewSamples, "trajectory has " + std::to_string(traj.samples.size()) + " samples, need >= " +
                                            std::to_string(kMinSamples));
    for (std::size_t i = 0; i < traj.samples.size(); ++i) {
        const Sample& s = traj.samples[i];
        if (s.p < 0.0 || s.p > 1.0) raise(ErrorCode::InvalidArgument, "pressure outside [0,1]");
        if (i > 0 && !(s.t > traj.samples[i - 1].t))
            raise(ErrorCode::NonMonotonicTime, "time not strictly increasing at row " + std::to_string(i));
    }
}

// ---------------------------------------------------------------------------
// Task table
// ---------------------------------------------------------------------------

enum class TaskCategory : char { Memory = 'M', Copy = 'C', Graphic = 'G' };

struct TaskMeta {
    int task_id = 0;
    std::string name;
    TaskCategory category = TaskCategory::Copy;
};

/// The 25 protocol tasks with their default category assignment. The map is
/// data, not behavior: callers may override categories via configuration.
inline const std::vector<TaskMeta>& task_table() {
    static const std::vector<TaskMeta> table = {
        {1, "signature", TaskCategory::Memory},
        {2, "horizontal line drawing", TaskCategory::Graphic},
        {3, "vertical line drawing", TaskCategory::Graphic},
        {4, "large circle drawing", TaskCategory::Graphic},
        {5, "small circle drawing", TaskCategory::Graphic},
        {6, "copied letter 'L' 'M' 'P'", TaskCategory::Copy},
        {7, "copied letters", TaskCategory::Copy},
        {8, "cursive letter writing", TaskCategory::Copy},
        {9, "cursive bigram writing", TaskCategory::Copy},
        {10, "copied word 'foglio'", TaskCategory::Copy},
        {11, "copied word 'foglio' on line", TaskCategory::Copy},
        {12, "copied word 'mamma'", TaskCategory::Copy},
        {13, "copied word 'mamma' on line", TaskCategory::Copy},
        {14, "written memory words", TaskCategory::Memory},
        {15, "reversed word 'bottiglia'", TaskCategory::Copy},
        {16, "reversed word 'casa'", TaskCategory::Copy},
        {17, "copied multi-word phrases", TaskCategory::Copy},
        {18, "written object name", TaskCategory::Memory},
        {19, "postal form copy", TaskCategory::Copy},
        {20, "dictated sentence writing", TaskCategory::Memory},
        {21, "complex shape drawing", TaskCategory::Graphic},
        {22, "copied phone number", TaskCategory::Copy},
        {23, "dictated phone number writing", TaskCategory::Memory},
        {24, "hand-drawn clock", TaskCategory::Graphic},
        {25, "paragraph transcription", TaskCategory::Copy},
    };
    return table;
}

inline const TaskMeta& task_meta(int task_id) {
    if (task_id < 1 || task_id > kTaskCount)
        raise(ErrorCode::InvalidArgument, "task_id out of range: " + std::to_string(task_id));
    return task_table()[static_cast<std::size_t>(task_id - 1)];
}

inline std::map<int, TaskCategory> default_category_map() {
    std::map<int, TaskCategory> m;
    for (const auto& t : task_table()) m[t.task_id] = t.category;
    return m;
}

// ---------------------------------------------------------------------------
// CSV interchange: header `t,x,y,p,on_paper`, one sample per row.
// ---------------------------------------------------------------------------

struct TrajectoryMeta {
    std::string subject_id;
    int task_id = 1;
    int label = 0;
};

namespace detail {

inline bool parse_double(std::string_view field, double& out) {
    if (field.empty()) return false;
    char* end = nullptr;
    std::string buf(field);
    out = std::strtod(buf.c_str(), &end);
    return end == buf.c_str() + buf.size();
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

}  // namespace detail

/// Parses the canonical CSV format. Rows with any non-finite numeric field
/// are dropped and counted; remaining rows must satisfy all trajectory
/// invariants.
inline RawTrajectory parse_trajectory_csv(std::istream& in, const TrajectoryMeta& meta) {
    std::string line;
    if (!std::getline(in, line)) raise(ErrorCode::MalformedHeader, "empty stream");
    if (std::string(detail::trim(line)) != "t,x,y,p,on_paper")
        raise(ErrorCode::MalformedHeader, "expected header 't,x,y,p,on_paper'");

    RawTrajectory traj;
    traj.subject_id = meta.subject_id;
    traj.task_id = meta.task_id;
    traj.label = meta.label;

    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        std::string_view rest = detail::trim(line);
        if (rest.empty()) continue;
        std::array<std::string_view, 5> fields;
        std::size_t count = 0;
        while (count < 5) {
            auto comma = rest.find(',');
            fields[count++] = detail::trim(comma == std::string_view::npos ? rest : rest.substr(0, comma));
            if (comma == std::string_view::npos) {
                rest = {};
                break;
            }
            rest = rest.substr(comma + 1);
        }
        if (count != 5 || !rest.empty())
            raise(ErrorCode::MalformedHeader, "row " + std::to_string(row) + ": expected 5 fields");

        Sample s;
        double pen = 0.0;
        bool ok = detail::parse_double(fields[0], s.t) && detail::parse_double(fields[1], s.x) &&
                  detail::parse_double(fields[2], s.y) && detail::parse_double(fields[3], s.p) &&
                  detail::parse_double(fields[4], pen);
        if (!ok) raise(ErrorCode::MalformedHeader, "row " + std::to_string(row) + ": unparseable field");
        if (!std::isfinite(s.t) || !std::isfinite(s.x) || !std::isfinite(s.y) || !std::isfinite(s.p) ||
            !std::isfinite(pen)) {
            ++traj.dropped_count;
            continue;
        }
        s.on_paper = pen != 0.0;
        traj.samples.push_back(s);
    }

    if (traj.samples.size() < kMinSamples)
        raise(ErrorCode::TooFewSamples, std::to_string(traj.samples.size()) + " valid rows, need >= " +
                                            std::to_string(kMinSamples));
    for (std::size_t i = 1; i < traj.samples.size(); ++i)
        if (!(traj.samples[i].t > traj.samples[i - 1].t))
            raise(ErrorCode::NonMonotonicTime, "time not strictly increasing at valid row " + std::to_string(i));
    validate_trajectory(traj);
    return traj;
}

inline RawTrajectory parse_trajectory_csv(const std::string& text, const TrajectoryMeta& meta) {
    std::istringstream in(text);
    return parse_trajectory_csv(in, meta);
}

/// Writes a trajectory so that re-parsing reproduces it exactly (%.17g keeps
/// every double round-trippable).
inline void serialize_trajectory_csv(const RawTrajectory& traj, std::ostream& out) {
    out << "t,x,y,p,on_paper\n";
    char buf[128];
    for (const Sample& s : traj.samples) {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%.17g,%d\n", s.t, s.x, s.y, s.p, s.on_paper ? 1 : 0);
        out << buf;
    }
}

inline std::string serialize_trajectory_csv(const RawTrajectory& traj) {
    std::ostringstream out;
    serialize_trajectory_csv(traj, out);
    return out.str();
}

// ---------------------------------------------------------------------------
// Stream splitting
// ---------------------------------------------------------------------------

struct StreamSplit {
    RawTrajectory paper;
    RawTrajectory air;
    RawTrajectory all;
};

/// Splits into pen-contact / in-air / full streams. The toolkit consumes the
/// paper stream; an empty one is an error.
inline StreamSplit split_streams(const RawTrajectory& traj) {
    StreamSplit out;
    out.paper.subject_id = out.air.subject_id = traj.subject_id;
    out.paper.task_id = out.air.task_id = traj.task_id;
    out.paper.label = out.air.label = traj.label;
    out.all = traj;
    for (const Sample& s : traj.samples) (s.on_paper ? out.paper : out.air).samples.push_back(s);
    if (out.paper.samples.empty()) raise(ErrorCode::EmptyStream, "trajectory has no pen-contact samples");
    return out;
}

// ---------------------------------------------------------------------------
// Optional preprocessing (applied between parsing and rendering)
// ---------------------------------------------------------------------------

/// Removes digitizer glitches: samples whose instantaneous speed exceeds the
/// median by 6x the IQR-derived robust scale (IQR/1.349). A zero scale means
/// the speed distribution is flat and nothing is removed.
inline RawTrajectory remove_speed_outliers(const RawTrajectory& traj, double factor = 6.0) {
    if (traj.samples.size() < 3) return traj;
    std::vector<double> speeds(traj.samples.size(), 0.0);
    for (std::size_t i = 1; i < traj.samples.size(); ++i) {
        const Sample& a = traj.samples[i - 1];
        const Sample& b = traj.samples[i];
        speeds[i] = std::hypot(b.x - a.x, b.y - a.y) / (b.t - a.t);
    }
    std::vector<double> sorted(speeds.begin() + 1, speeds.end());
    std::sort(sorted.begin(), sorted.end());
    double q1 = linear_quantile_sorted(sorted, 0.25);
    double q3 = linear_quantile_sorted(sorted, 0.75);
    double median = linear_quantile_sorted(sorted, 0.5);
    double scale = (q3 - q1) / 1.349;
    if (scale <= 0.0) return traj;
    double threshold = median + factor * scale;

    RawTrajectory out = traj;
    out.samples.clear();
    out.samples.push_back(traj.samples.front());
    for (std::size_t i = 1; i < traj.samples.size(); ++i)
        if (speeds[i] <= threshold) out.samples.push_back(traj.samples[i]);
    if (out.samples.size() < kMinSamples) return traj;  // refuse to gut the stroke
    return out;
}

/// Fills short time gaps (<= max_gap missing samples at the nominal rate)
/// with linear interpolation on the regular grid. Longer gaps are left as-is
/// and act as stroke splits downstream. Inserted samples count as on-paper
/// only when both neighbors are.
inline RawTrajectory interpolate_gaps(const RawTrajectory& traj, double fs_hz, int max_gap = 5) {
    if (fs_hz <= 0.0) raise(ErrorCode::InvalidArgument, "sampling rate must be positive");
    const double dt = 1.0 / fs_hz;
    RawTrajectory out = traj;
    out.samples.clear();
    for (std::size_t i = 0; i < traj.samples.size(); ++i) {
        if (i > 0) {
            const Sample& a = traj.samples[i - 1];
            const Sample& b = traj.samples[i];
            int missing = static_cast<int>(std::lround((b.t - a.t) * fs_hz)) - 1;
            if (missing >= 1 && missing <= max_gap) {
                for (int g = 1; g <= missing; ++g) {
                    double u = static_cast<double>(g) / (missing + 1);
                    Sample s;
                    s.t = a.t + g * dt;
                    s.x = a.x + u * (b.x - a.x);
                    s.y = a.y + u * (b.y - a.y);
                    s.p = a.p + u * (b.p - a.p);
                    s.on_paper = a.on_paper && b.on_paper;
                    if (s.t < b.t) out.samples.push_back(s);
                }
            }
        }
        out.samples.push_back(traj.samples[i]);
    }
    return out;
}

/// Standard cleanup chain: outlier drop, then gap interpolation.
inline RawTrajectory preprocess_trajectory(const RawTrajectory& traj, double fs_hz) {
    return interpolate_gaps(remove_speed_outliers(traj), fs_hz);
}

// ---------------------------------------------------------------------------
// Dataset manifest (JSON) and loading
// ---------------------------------------------------------------------------

struct ManifestEntry {
    std::string path;  // relative paths resolve against the manifest directory
    std::string subject_id;
    int task_id = 1;
    int label = 0;
};

struct DatasetManifest {
    double sampling_rate_hz = 200.0;
    std::vector<ManifestEntry> entries;
    std::filesystem::path base_dir;  // set when loaded from disk

    std::filesystem::path resolve(const ManifestEntry& e) const {
        std::filesystem::path p(e.path);
        return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
    }
};

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
    nlohmann::json j;
    j["sampling_rate_hz"] = m.sampling_rate_hz;
    j["entries"] = nlohmann::json::array();
    for (const auto& e : m.entries)
        j["entries"].push_back({{"path", e.path}, {"subject", e.subject_id}, {"task", e.task_id}, {"label", e.label}});
    return j;
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
    DatasetManifest m;
    m.sampling_rate_hz = j.at("sampling_rate_hz").get<double>();
    for (const auto& e : j.at("entries")) {
        ManifestEntry entry;
        entry.path = e.at("path").get<std::string>();
        entry.subject_id = e.at("subject").get<std::string>();
        entry.task_id = e.at("task").get<int>();
        entry.label = e.at("label").get<int>();
        if (entry.task_id < 1 || entry.task_id > kTaskCount)
            raise(ErrorCode::InvalidArgument, "manifest task out of range: " + std::to_string(entry.task_id));
        m.entries.push_back(std::move(entry));
    }
    return m;
}

inline void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) raise(ErrorCode::IoError, "cannot write " + path.string());
    out << manifest_to_json(m).dump(2) << "\n";
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) raise(ErrorCode::MissingFile, "cannot open manifest " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorCode::IoError, "manifest parse failure: " + std::string(e.what()));
    }
    DatasetManifest m = manifest_from_json(j);
    m.base_dir = path.parent_path();
    return m;
}

struct DatasetItem {
    RawTrajectory trajectory;
    int label = 0;
};

struct TaskGroup {
    std::vector<DatasetItem> items;
    std::size_t normal_count = 0;
    std::size_t abnormal_count = 0;
};

struct Dataset {
    std::map<int, TaskGroup> tasks;  // task_id -> items in manifest order
    double sampling_rate_hz = 200.0;
    std::vector<std::string> warnings;
};

/// Materializes all manifest entries, grouped per task in manifest order.
inline Dataset load_dataset(const DatasetManifest& manifest) {
    Dataset ds;
    ds.sampling_rate_hz = manifest.sampling_rate_hz;
    std::set<std::pair<std::string, int>> seen;
    for (const auto& e : manifest.entries) {
        auto key = std::make_pair(e.subject_id, e.task_id);
        if (!seen.insert(key).second)
            raise(ErrorCode::DuplicateEntry, "duplicate (subject, task) pair: (" + e.subject_id + ", " +
                                                 std::to_string(e.task_id) + ")");
        auto path = manifest.resolve(e);
        std::ifstream in(path);
        if (!in) raise(ErrorCode::MissingFile, "missing trajectory file " + path.string());
        RawTrajectory traj = parse_trajectory_csv(in, {e.subject_id, e.task_id, e.label});
        auto& group = ds.tasks[e.task_id];
        (e.label == 0 ? group.normal_count : group.abnormal_count)++;
        group.items.push_back({std::move(traj), e.label});
    }
    if (manifest.entries.empty()) ds.warnings.push_back("manifest has no entries");
    for (const auto& [task, group] : ds.tasks)
        if (group.normal_count == 0 || group.abnormal_count == 0)
            ds.warnings.push_back("task " + std::to_string(task) + " has a single label class");
    return ds;
}

}  // namespace clfa
