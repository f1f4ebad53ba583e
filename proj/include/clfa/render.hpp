#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "clfa/error.hpp"
#include "clfa/kinematics.hpp"
#include "clfa/trajectory.hpp"
#include "clfa/util.hpp"

namespace clfa {

/// Fixed-size RGB raster with intensities in [0,1]; background exactly 0.
struct RenderedImage {
    int size = 0;  // H == W
    std::vector<double> pixels;  // row-major, 3 channels interleaved

    double& at(int row, int col, int ch) { return pixels[(static_cast<std::size_t>(row) * size + col) * 3 + ch]; }
    double at(int row, int col, int ch) const { return pixels[(static_cast<std::size_t>(row) * size + col) * 3 + ch]; }
};

struct RenderOptions {
    int canvas_size = 240;
    int margin = 8;
    double radius_min = 1.0;  // px at pressure 0
    double radius_max = 3.0;  // px at pressure 1
    double gap_break_factor = 5.5;  // split strokes at dt > factor x median dt
};

struct PixelPoint {
    double x = 0.0, y = 0.0;
};

/// Aspect-ratio-preserving min-max map of points into
/// [margin, size - margin]^2, centered along the shorter axis.
inline std::vector<PixelPoint> normalize_canvas(const std::vector<PixelPoint>& points, int size, int margin) {
    if (points.size() < 2) raise(ErrorCode::DegenerateExtent, "need at least 2 points");
    if (size <= 2 * margin) raise(ErrorCode::InvalidArgument, "canvas smaller than margins");
    double min_x = points[0].x, max_x = points[0].x, min_y = points[0].y, max_y = points[0].y;
    for (const auto& p : points) {
        min_x = std::min(min_x, p.x);
        max_x = std::max(max_x, p.x);
        min_y = std::min(min_y, p.y);
        max_y = std::max(max_y, p.y);
    }
    double ext_x = max_x - min_x, ext_y = max_y - min_y;
    double ext = std::max(ext_x, ext_y);
    if (ext <= 0.0) raise(ErrorCode::DegenerateExtent, "all points identical");
    double scale = (size - 2.0 * margin) / ext;
    double off_x = margin + 0.5 * ((size - 2.0 * margin) - ext_x * scale);
    double off_y = margin + 0.5 * ((size - 2.0 * margin) - ext_y * scale);
    std::vector<PixelPoint> out;
    out.reserve(points.size());
    for (const auto& p : points) out.push_back({off_x + (p.x - min_x) * scale, off_y + (p.y - min_y) * scale});
    return out;
}

namespace render_detail {

/// Maps a series into [0,1] between its 5th and 95th percentiles, clipped.
/// A constant series maps to 0.
inline std::vector<double> robust_normalize(const std::vector<double>& v) {
    std::vector<double> sorted(v);
    std::sort(sorted.begin(), sorted.end());
    double p5 = linear_quantile_sorted(sorted, 0.05);
    double p95 = linear_quantile_sorted(sorted, 0.95);
    double den = std::max(p95 - p5, 1e-12);
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::clamp((v[i] - p5) / den, 0.0, 1.0);
    return out;
}

inline void stamp_disc(RenderedImage& img, double cx, double cy, double radius, double r, double g, double b) {
    int x0 = std::max(0, static_cast<int>(std::ceil(cx - radius)));
    int x1 = std::min(img.size - 1, static_cast<int>(std::floor(cx + radius)));
    int y0 = std::max(0, static_cast<int>(std::ceil(cy - radius)));
    int y1 = std::min(img.size - 1, static_cast<int>(std::floor(cy + radius)));
    double r2 = radius * radius;
    for (int py = y0; py <= y1; ++py)
        for (int px = x0; px <= x1; ++px) {
            double dx = px - cx, dy = py - cy;
            if (dx * dx + dy * dy > r2) continue;
            img.at(py, px, 0) = std::max(img.at(py, px, 0), r);
            img.at(py, px, 1) = std::max(img.at(py, px, 1), g);
            img.at(py, px, 2) = std::max(img.at(py, px, 2), b);
        }
}

}  // namespace render_detail

/// Rasterizes the pen-contact stream: discs of pressure-modulated radius are
/// stamped along each segment at <= 1 px spacing; channels carry the
/// robust-normalized kinematics (curvature -> R, speed -> G, |jerk| -> B);
/// the whole image is then scaled by the dominant-frequency boost and
/// clipped. Segments whose time gap marks a stroke split are not connected.
inline RenderedImage rasterize(const RawTrajectory& paper, const KinematicSeries& kin,
                               const RenderOptions& opts = {}) {
    const std::size_t n = paper.samples.size();
    if (kin.size() != n) raise(ErrorCode::ShapeMismatch, "kinematics length does not match trajectory");

    std::vector<PixelPoint> raw(n);
    for (std::size_t i = 0; i < n; ++i) raw[i] = {paper.samples[i].x, paper.samples[i].y};
    std::vector<PixelPoint> pts = normalize_canvas(raw, opts.canvas_size, opts.margin);

    std::vector<double> red = render_detail::robust_normalize(kin.curvature);
    std::vector<double> green = render_detail::robust_normalize(kin.speed);
    std::vector<double> blue = render_detail::robust_normalize(kin.jerk);

    // Median time step defines both the nominal rate and the stroke-split
    // threshold.
    std::vector<double> dts;
    dts.reserve(n - 1);
    for (std::size_t i = 1; i < n; ++i) dts.push_back(paper.samples[i].t - paper.samples[i - 1].t);
    double median_dt = linear_quantile(dts, 0.5);

    double boost = 1.0;
    if (n >= 16 && median_dt > 0.0) boost = frequency_boost(dominant_frequency(kin.speed, 1.0 / median_dt));

    RenderedImage img;
    img.size = opts.canvas_size;
    img.pixels.assign(static_cast<std::size_t>(opts.canvas_size) * opts.canvas_size * 3, 0.0);

    auto radius_of = [&](double p) { return opts.radius_min + p * (opts.radius_max - opts.radius_min); };

    for (std::size_t i = 0; i + 1 < n; ++i) {
        double dt = paper.samples[i + 1].t - paper.samples[i].t;
        if (median_dt > 0.0 && dt > opts.gap_break_factor * median_dt) {
            render_detail::stamp_disc(img, pts[i].x, pts[i].y, radius_of(paper.samples[i].p), red[i], green[i], blue[i]);
            continue;  // stroke split: do not bridge the gap
        }
        double dist = std::hypot(pts[i + 1].x - pts[i].x, pts[i + 1].y - pts[i].y);
        int steps = std::max(1, static_cast<int>(std::ceil(dist)));
        for (int s = 0; s <= steps; ++s) {
            double u = static_cast<double>(s) / steps;
            double cx = pts[i].x + u * (pts[i + 1].x - pts[i].x);
            double cy = pts[i].y + u * (pts[i + 1].y - pts[i].y);
            double pr = paper.samples[i].p + u * (paper.samples[i + 1].p - paper.samples[i].p);
            double r = red[i] + u * (red[i + 1] - red[i]);
            double g = green[i] + u * (green[i + 1] - green[i]);
            double b = blue[i] + u * (blue[i + 1] - blue[i]);
            render_detail::stamp_disc(img, cx, cy, radius_of(pr), r, g, b);
        }
    }

    for (double& v : img.pixels) v = std::min(v * boost, 1.0);
    return img;
}

/// Full per-trajectory pipeline: preprocess, split, kinematics on the paper
/// stream, rasterize.
inline RenderedImage render_trajectory(const RawTrajectory& traj, double fs_hz, const RenderOptions& opts = {}) {
    RawTrajectory clean = preprocess_trajectory(traj, fs_hz);
    StreamSplit split = split_streams(clean);
    if (split.paper.samples.size() < kMinSamples)
        raise(ErrorCode::TooFewSamples, "paper stream has fewer than 8 samples");
    KinematicSeries kin = compute_kinematics(split.paper);
    return rasterize(split.paper, kin, opts);
}

/// 8-bit binary portable pixmap dump, values quantized by round(255*v).
inline void write_ppm(const RenderedImage& img, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) raise(ErrorCode::IoError, "cannot write " + path.string());
    out << "P6\n" << img.size << " " << img.size << "\n255\n";
    std::string bytes;
    bytes.reserve(img.pixels.size());
    for (double v : img.pixels) bytes.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * v))));
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace clfa
