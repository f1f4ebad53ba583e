#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "clfa/trajectory.hpp"
#include "clfa/util.hpp"

// Deterministic synthetic handwriting for tests and benchmarks. Each task
// gets a category-appropriate template figure; the impaired condition adds
// tremor, baseline drift and pen hesitations on top of the identical base
// path, so the healthy output *is* the template traversal.

namespace clfa {

enum class Condition { Healthy, Impaired };

namespace synth_detail {

struct Pt {
    double x = 0.0, y = 0.0;
};

// Polyline figure with pen-up transitions between strokes.
struct Figure {
    std::vector<std::vector<Pt>> strokes;
};

inline Pt catmull_rom(const Pt& p0, const Pt& p1, const Pt& p2, const Pt& p3, double u) {
    double u2 = u * u, u3 = u2 * u;
    auto comp = [&](double a, double b, double c, double d) {
        return 0.5 * ((2.0 * b) + (-a + c) * u + (2.0 * a - 5.0 * b + 4.0 * c - d) * u2 + (-a + 3.0 * b - 3.0 * c + d) * u3);
    };
    return {comp(p0.x, p1.x, p2.x, p3.x), comp(p0.y, p1.y, p2.y, p3.y)};
}

/// Smooth open curve through seeded control points, densely sampled.
inline std::vector<Pt> spline_stroke(const std::vector<Pt>& ctrl, int per_segment) {
    std::vector<Pt> out;
    if (ctrl.size() < 2) return ctrl;
    for (std::size_t i = 0; i + 1 < ctrl.size(); ++i) {
        const Pt& p0 = ctrl[i == 0 ? 0 : i - 1];
        const Pt& p1 = ctrl[i];
        const Pt& p2 = ctrl[i + 1];
        const Pt& p3 = ctrl[std::min(i + 2, ctrl.size() - 1)];
        for (int s = 0; s < per_segment; ++s) out.push_back(catmull_rom(p0, p1, p2, p3, static_cast<double>(s) / per_segment));
    }
    out.push_back(ctrl.back());
    return out;
}

inline Figure line_figure(Rng& rng, bool vertical) {
    Figure fig;
    std::vector<Pt> ctrl;
    const int knots = 6;
    double wobble = rng.uniform(0.5, 2.0);
    for (int i = 0; i < knots; ++i) {
        double s = 100.0 * i / (knots - 1);
        double off = rng.symmetric(wobble);
        ctrl.push_back(vertical ? Pt{off, s} : Pt{s, off});
    }
    fig.strokes.push_back(spline_stroke(ctrl, 24));
    return fig;
}

inline Figure circle_figure(Rng& rng, double radius, int harmonics) {
    Figure fig;
    std::vector<Pt> pts;
    double phase = rng.uniform(0.0, 6.283185307179586);
    double a3 = harmonics > 0 ? rng.uniform(0.1, 0.25) : 0.0;
    double a5 = harmonics > 1 ? rng.uniform(0.05, 0.15) : 0.0;
    double p3 = rng.uniform(0.0, 6.283185307179586);
    const int n = 360;
    for (int i = 0; i <= n; ++i) {
        double th = phase + 6.283185307179586 * i / n;
        double r = radius * (1.0 + a3 * std::sin(3.0 * th + p3) + a5 * std::sin(5.0 * th - p3));
        pts.push_back({r * std::cos(th), r * std::sin(th)});
    }
    fig.strokes.push_back(std::move(pts));
    return fig;
}

inline Figure clock_figure(Rng& rng) {
    Figure fig = circle_figure(rng, 50.0, 0);
    double h = rng.uniform(0.0, 6.283185307179586);
    double m = h + rng.uniform(1.5, 4.5);
    fig.strokes.push_back({{0.0, 0.0}, {28.0 * std::cos(h), 28.0 * std::sin(h)}});
    fig.strokes.push_back({{0.0, 0.0}, {42.0 * std::cos(m), 42.0 * std::sin(m)}});
    return fig;
}

/// Letter-like glyph sequence: smooth splines in advancing glyph boxes.
inline Figure letters_figure(Rng& rng) {
    Figure fig;
    int glyphs = rng.uniform_int(2, 4);
    double advance = 0.0;
    for (int g = 0; g < glyphs; ++g) {
        std::vector<Pt> ctrl;
        int knots = rng.uniform_int(5, 7);
        for (int i = 0; i < knots; ++i) {
            ctrl.push_back({advance + rng.uniform(0.0, 32.0), rng.uniform(0.0, 48.0)});
        }
        fig.strokes.push_back(spline_stroke(ctrl, 16));
        advance += 44.0;
    }
    return fig;
}

/// Digit-like zigzag sequence: sharp-cornered polylines in advancing boxes.
inline Figure digits_figure(Rng& rng) {
    Figure fig;
    int digits = rng.uniform_int(3, 5);
    double advance = 0.0;
    for (int d = 0; d < digits; ++d) {
        std::vector<Pt> pts;
        int corners = rng.uniform_int(4, 6);
        for (int i = 0; i < corners; ++i) pts.push_back({advance + rng.uniform(0.0, 22.0), rng.uniform(0.0, 40.0)});
        fig.strokes.push_back(std::move(pts));
        advance += 30.0;
    }
    return fig;
}

inline Figure template_figure(std::uint64_t seed, int task_id) {
    Rng rng(mix64(seed, static_cast<std::uint64_t>(task_id) * 0x9d5ull + 17));
    switch (task_id) {
        case 2: return line_figure(rng, false);
        case 3: return line_figure(rng, true);
        case 4: return circle_figure(rng, 60.0, 0);
        case 5: return circle_figure(rng, 25.0, 0);
        case 21: return circle_figure(rng, 50.0, 2);
        case 24: return clock_figure(rng);
        default: break;
    }
    TaskCategory cat = task_meta(task_id).category;
    if (cat == TaskCategory::Copy) return letters_figure(rng);
    return digits_figure(rng);  // memory / dictation tasks
}

struct PathPoint {
    double x, y;
    bool on_paper;
};

/// Minimum-jerk ease: zero velocity at stroke ends, like a real pen stroke.
inline double min_jerk(double s) { return s * s * s * (10.0 + s * (-15.0 + 6.0 * s)); }

/// Traverses a figure at a smooth per-stroke pace, emitting n samples.
/// Pen-up transitions travel straight between strokes.
inline std::vector<PathPoint> traverse(const Figure& fig, std::size_t n) {
    struct Leg {
        std::vector<Pt> pts;
        bool on_paper;
        double length = 0.0;
    };
    std::vector<Leg> legs;
    for (std::size_t s = 0; s < fig.strokes.size(); ++s) {
        Leg leg{fig.strokes[s], true, 0.0};
        for (std::size_t i = 1; i < leg.pts.size(); ++i)
            leg.length += std::hypot(leg.pts[i].x - leg.pts[i - 1].x, leg.pts[i].y - leg.pts[i - 1].y);
        legs.push_back(std::move(leg));
        if (s + 1 < fig.strokes.size()) {
            Leg lift;
            lift.pts = {fig.strokes[s].back(), fig.strokes[s + 1].front()};
            lift.on_paper = false;
            lift.length = std::hypot(lift.pts[1].x - lift.pts[0].x, lift.pts[1].y - lift.pts[0].y);
            legs.push_back(std::move(lift));
        }
    }
    double total = 0.0;
    for (const auto& l : legs) total += std::max(l.length, 1e-9);

    // Time share proportional to length; lifts move faster (40% weight).
    std::vector<double> share(legs.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < legs.size(); ++i) {
        share[i] = std::max(legs[i].length, 1e-9) * (legs[i].on_paper ? 1.0 : 0.4);
        acc += share[i];
    }
    for (auto& s : share) s /= acc;

    auto eval_leg = [](const Leg& leg, double u) -> Pt {
        if (leg.pts.size() == 1) return leg.pts[0];
        double target = u * leg.length;
        double walked = 0.0;
        for (std::size_t i = 1; i < leg.pts.size(); ++i) {
            double seg = std::hypot(leg.pts[i].x - leg.pts[i - 1].x, leg.pts[i].y - leg.pts[i - 1].y);
            if (walked + seg >= target || i + 1 == leg.pts.size()) {
                double f = seg > 0.0 ? std::clamp((target - walked) / seg, 0.0, 1.0) : 0.0;
                return {leg.pts[i - 1].x + f * (leg.pts[i].x - leg.pts[i - 1].x),
                        leg.pts[i - 1].y + f * (leg.pts[i].y - leg.pts[i - 1].y)};
            }
            walked += seg;
        }
        return leg.pts.back();
    };

    std::vector<PathPoint> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        double tau = static_cast<double>(i) / static_cast<double>(n - 1);
        // find leg
        double start = 0.0;
        std::size_t li = 0;
        for (; li < legs.size(); ++li) {
            if (tau <= start + share[li] || li + 1 == legs.size()) break;
            start += share[li];
        }
        double local = share[li] > 0.0 ? std::clamp((tau - start) / share[li], 0.0, 1.0) : 0.0;
        Pt p = eval_leg(legs[li], min_jerk(local));
        out.push_back({p.x, p.y, legs[li].on_paper});
    }
    return out;
}

}  // namespace synth_detail

/// The deterministic base traversal both conditions share: positions, pen
/// state and sample count, before any impairment overlay.
inline RawTrajectory synth_base_path(std::uint64_t seed, int task_id, double fs_hz) {
    if (task_id < 1 || task_id > kTaskCount)
        raise(ErrorCode::InvalidArgument, "task_id out of range: " + std::to_string(task_id));
    if (fs_hz <= 0.0) raise(ErrorCode::InvalidArgument, "sampling rate must be positive");

    Rng rng(mix64(seed, static_cast<std::uint64_t>(task_id)));
    double duration = 2.5 + rng.uniform(0.0, 1.0);
    std::size_t n = std::max<std::size_t>(kMinSamples, static_cast<std::size_t>(std::lround(duration * fs_hz)));

    auto fig = synth_detail::template_figure(seed, task_id);
    auto path = synth_detail::traverse(fig, n);

    double p_base = 0.55 + rng.uniform(-0.05, 0.05);
    double p_freq = rng.uniform(0.2, 0.5);
    double p_phase = rng.uniform(0.0, 6.283185307179586);

    RawTrajectory traj;
    traj.subject_id = "synth-" + std::to_string(seed);
    traj.task_id = task_id;
    traj.label = 0;
    traj.samples.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Sample s;
        s.t = static_cast<double>(i) / fs_hz;
        s.x = path[i].x;
        s.y = path[i].y;
        s.on_paper = path[i].on_paper;
        double pr = p_base + 0.25 * std::sin(6.283185307179586 * p_freq * s.t + p_phase);
        s.p = s.on_paper ? std::clamp(pr, 0.05, 0.95) : 0.0;
        traj.samples.push_back(s);
    }
    return traj;
}

/// Synthesizes one subject x task trajectory. Healthy returns the base path
/// unchanged. Impaired superimposes additive 4-8 Hz tremor, slow baseline
/// drift and windowed pen hesitations; the base control points are the same
/// for both conditions of a given (seed, task).
inline RawTrajectory synth_subject(std::uint64_t seed, Condition condition, int task_id, double fs_hz = 200.0) {
    RawTrajectory traj = synth_base_path(seed, task_id, fs_hz);
    if (condition == Condition::Healthy) {
        validate_trajectory(traj);
        return traj;
    }

    traj.label = 1;
    Rng rng(mix64(mix64(seed, static_cast<std::uint64_t>(task_id)), 0x1317ull));
    const std::size_t n = traj.samples.size();
    const double duration = traj.samples.back().t;

    // Scale overlay amplitudes to the figure's mean speed so the tremor tone
    // dominates the in-band spectrum regardless of template size.
    double mean_speed = 0.0;
    for (std::size_t i = 1; i < n; ++i)
        mean_speed += std::hypot(traj.samples[i].x - traj.samples[i - 1].x, traj.samples[i].y - traj.samples[i - 1].y) /
                      (traj.samples[i].t - traj.samples[i - 1].t);
    mean_speed /= static_cast<double>(n - 1);

    double tremor_hz = rng.uniform(4.5, 7.5);
    double omega = 6.283185307179586 * tremor_hz;
    double tremor_amp = 0.9 * mean_speed / omega;  // speed oscillation ~ 0.9 x mean speed
    double axis_phase = rng.uniform(0.35, 1.2);    // avoid the constant-speed circular case
    double phase0 = rng.uniform(0.0, 6.283185307179586);

    double drift_x = rng.symmetric(3.0);
    double drift_y = rng.symmetric(5.0);
    double drift_freq = rng.uniform(0.1, 0.3);
    double drift_phase = rng.uniform(0.0, 6.283185307179586);

    // Hesitations: short windows where the pen freezes at the window-entry
    // point. Implemented as an additive cancellation term so the impaired
    // sequence stays base + overlay.
    int pauses = rng.uniform_int(1, 3);
    struct Pause {
        double start, len;
    };
    std::vector<Pause> windows;
    for (int k = 0; k < pauses; ++k)
        windows.push_back({rng.uniform(0.15, 0.8) * duration, rng.uniform(0.08, 0.22)});

    double p_flutter_hz = rng.uniform(3.0, 6.0);
    double p_flutter_phase = rng.uniform(0.0, 6.283185307179586);

    std::vector<Sample> base = traj.samples;
    for (std::size_t i = 0; i < n; ++i) {
        Sample& s = traj.samples[i];
        double t = s.t;
        s.x += tremor_amp * std::sin(omega * t + phase0) + drift_x * t / duration +
               2.0 * std::sin(6.283185307179586 * drift_freq * t + drift_phase);
        s.y += tremor_amp * std::sin(omega * t + phase0 + axis_phase) + drift_y * t / duration;
        if (s.on_paper) {
            double pr = s.p - 0.08 + 0.12 * std::sin(6.283185307179586 * p_flutter_hz * t + p_flutter_phase);
            s.p = std::clamp(pr, 0.05, 0.95);
        }
        for (const auto& w : windows) {
            if (t < w.start || t > w.start + w.len) continue;
            double u = (t - w.start) / w.len;
            double win = u < 0.2 ? u / 0.2 : (u > 0.8 ? (1.0 - u) / 0.2 : 1.0);  // trapezoid taper
            // anchor at the base position where the pause began
            std::size_t k0 = static_cast<std::size_t>(std::min<double>(static_cast<double>(n - 1), std::floor(w.start * fs_hz)));
            s.x -= win * (base[i].x - base[k0].x);
            s.y -= win * (base[i].y - base[k0].y);
        }
    }
    validate_trajectory(traj);
    return traj;
}

}  // namespace clfa
