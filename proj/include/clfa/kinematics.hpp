#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "clfa/error.hpp"
#include "clfa/trajectory.hpp"

namespace clfa {

/// Per-sample kinematic descriptors, all the same length as the source
/// samples. Acceleration and jerk are magnitudes.
struct KinematicSeries {
    std::vector<double> vx;
    std::vector<double> vy;
    std::vector<double> speed;
    std::vector<double> accel;
    std::vector<double> jerk;
    std::vector<double> curvature;
    std::vector<double> pressure;

    std::size_t size() const { return speed.size(); }
};

constexpr double kCurvatureSpeedGuard = 1e-6;  // canvas units/s

namespace detail {

/// Central differences on interior points, one-sided at the ends. Handles a
/// non-uniform time grid.
inline std::vector<double> differentiate(const std::vector<double>& f, const std::vector<double>& t) {
    const std::size_t n = f.size();
    std::vector<double> d(n, 0.0);
    if (n < 2) return d;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t lo = i == 0 ? 0 : i - 1;
        std::size_t hi = i + 1 == n ? n - 1 : i + 1;
        double dt = t[hi] - t[lo];
        if (dt <= 0.0) raise(ErrorCode::DegenerateTime, "non-positive time step");
        d[i] = (f[hi] - f[lo]) / dt;
    }
    return d;
}

}  // namespace detail

/// Velocity, acceleration, jerk, curvature and pressure from a trajectory.
/// Curvature kappa = |x'y'' - y'x''| / speed^3, zeroed where speed is below
/// the guard.
inline KinematicSeries compute_kinematics(const RawTrajectory& traj) {
    const std::size_t n = traj.samples.size();
    if (n < kMinSamples) raise(ErrorCode::TooFewSamples, "need at least 8 samples");

    std::vector<double> t(n), x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
        t[i] = traj.samples[i].t;
        x[i] = traj.samples[i].x;
        y[i] = traj.samples[i].y;
        if (i > 0 && !(t[i] > t[i - 1])) raise(ErrorCode::DegenerateTime, "time not strictly increasing");
    }

    KinematicSeries k;
    k.vx = detail::differentiate(x, t);
    k.vy = detail::differentiate(y, t);
    std::vector<double> ax = detail::differentiate(k.vx, t);
    std::vector<double> ay = detail::differentiate(k.vy, t);
    std::vector<double> jx = detail::differentiate(ax, t);
    std::vector<double> jy = detail::differentiate(ay, t);

    k.speed.resize(n);
    k.accel.resize(n);
    k.jerk.resize(n);
    k.curvature.resize(n);
    k.pressure.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        k.speed[i] = std::hypot(k.vx[i], k.vy[i]);
        k.accel[i] = std::hypot(ax[i], ay[i]);
        k.jerk[i] = std::hypot(jx[i], jy[i]);
        if (k.speed[i] < kCurvatureSpeedGuard) {
            k.curvature[i] = 0.0;
        } else {
            double cross = k.vx[i] * ay[i] - k.vy[i] * ax[i];
            k.curvature[i] = std::fabs(cross) / (k.speed[i] * k.speed[i] * k.speed[i]);
        }
        k.pressure[i] = traj.samples[i].p;
    }
    return k;
}

/// Argmax of the magnitude spectrum of the mean-removed signal over the
/// [0.5, 20] Hz band. Ties resolve to the lowest bin, so a flat spectrum
/// reports the band floor.
inline double dominant_frequency(const std::vector<double>& signal, double fs_hz) {
    const std::size_t n = signal.size();
    if (n < 16) raise(ErrorCode::SeriesTooShort, "need at least 16 samples for a spectrum");
    if (fs_hz <= 0.0) raise(ErrorCode::InvalidArgument, "sampling rate must be positive");

    double mean = 0.0;
    for (double v : signal) mean += v;
    mean /= static_cast<double>(n);

    const double bin_hz = fs_hz / static_cast<double>(n);
    std::size_t k_lo = static_cast<std::size_t>(std::ceil(0.5 / bin_hz - 1e-12));
    std::size_t k_hi = static_cast<std::size_t>(std::floor(20.0 / bin_hz + 1e-12));
    k_lo = std::max<std::size_t>(k_lo, 1);
    k_hi = std::min<std::size_t>(k_hi, n / 2);
    if (k_lo > k_hi) raise(ErrorCode::SeriesTooShort, "no spectral bins inside [0.5, 20] Hz");

    double best_mag = -1.0;
    std::size_t best_k = k_lo;
    for (std::size_t k = k_lo; k <= k_hi; ++k) {
        double re = 0.0, im = 0.0;
        const double w = -6.283185307179586 * static_cast<double>(k) / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            double v = signal[i] - mean;
            re += v * std::cos(w * static_cast<double>(i));
            im += v * std::sin(w * static_cast<double>(i));
        }
        double mag = re * re + im * im;
        if (mag > best_mag) {
            best_mag = mag;
            best_k = k;
        }
    }
    return static_cast<double>(best_k) * bin_hz;
}

/// Global intensity boost from the dominant frequency: 1.0 at or below the
/// band floor, 1.5 at the 20 Hz ceiling, linear in between.
inline double frequency_boost(double dominant_hz) {
    double t = (dominant_hz - 0.5) / 19.5;
    t = std::clamp(t, 0.0, 1.0);
    return 1.0 + 0.5 * t;
}

}  // namespace clfa
