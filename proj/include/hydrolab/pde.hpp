#pragma once

// Explicit finite differences for df/dt = A : D^2 sigma(f) on the periodic
// unit torus in d = 1 or 2.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <numbers>
#include <span>
#include <vector>

#include "hydrolab/errors.hpp"
#include "hydrolab/thermo.hpp"

namespace hydrolab {

using DiffusionMatrix = std::array<std::array<double, 2>, 2>;

/// Grid values f(i/M) (d = 1) or f(i/M, j/M) row-major (d = 2).
struct MacroProfile {
  int dim = 1;
  int M = 0;
  std::vector<double> values;
  double delta_floor = 0.0;

  std::size_t points() const noexcept { return values.size(); }
  double mean() const {
    double s = 0.0;
    for (double v : values) s += v;
    return s / static_cast<double>(values.size());
  }
  double min() const { return *std::min_element(values.begin(), values.end()); }
  double max() const { return *std::max_element(values.begin(), values.end()); }
};

/// Samples f on the grid; f receives (u1, u2) with u2 = 0 in d = 1.
inline MacroProfile make_profile(int dim, int M, const std::function<double(double, double)>& f) {
  if (dim != 1 && dim != 2) throw ValidationError("dim", "dimension must be 1 or 2");
  if (M < 3) throw ValidationError("M", "grid needs at least 3 points per axis");
  MacroProfile p{dim, M, {}, 0.0};
  const double h = 1.0 / M;
  if (dim == 1) {
    p.values.resize(static_cast<std::size_t>(M));
    for (int i = 0; i < M; ++i) p.values[static_cast<std::size_t>(i)] = f(i * h, 0.0);
  } else {
    p.values.resize(static_cast<std::size_t>(M) * M);
    for (int i = 0; i < M; ++i)
      for (int j = 0; j < M; ++j) p.values[static_cast<std::size_t>(i) * M + j] = f(i * h, j * h);
  }
  return p;
}

/// rho + (a/d) sum_i cos(2 pi u_i).
inline MacroProfile cosine_profile(int dim, int M, double rho, double amplitude) {
  const double two_pi = 2.0 * std::numbers::pi;
  return make_profile(dim, M, [&](double u, double v) {
    if (dim == 1) return rho + amplitude * std::cos(two_pi * u);
    return rho + 0.5 * amplitude * (std::cos(two_pi * u) + std::cos(two_pi * v));
  });
}

inline double trace(const DiffusionMatrix& A, int dim) { return dim == 1 ? A[0][0] : A[0][0] + A[1][1]; }

/// 0.25 h^2 / (tr(A) sup sigma'), h = 1/M.
inline double cfl_dt(const DiffusionMatrix& A, int dim, double sigma_prime_max, int M) {
  return 0.25 / (static_cast<double>(M) * M * trace(A, dim) * sigma_prime_max);
}

namespace detail {

/// out = f + dt * A : D_h^2 s, where s = sigma(f) is precomputed.
inline void explicit_update(int dim, int M, const DiffusionMatrix& A, double dt, std::span<const double> f,
                            std::span<const double> s, std::span<double> out) {
  const double inv_h2 = static_cast<double>(M) * M;
  if (dim == 1) {
    const double c = dt * A[0][0] * inv_h2;
    const auto m = static_cast<std::size_t>(M);
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t ip = i + 1 == m ? 0 : i + 1;
      const std::size_t im = i == 0 ? m - 1 : i - 1;
      out[i] = f[i] + c * (s[ip] - 2.0 * s[i] + s[im]);
    }
    return;
  }
  const auto m = static_cast<std::size_t>(M);
  const double c11 = dt * A[0][0] * inv_h2;
  const double c22 = dt * A[1][1] * inv_h2;
  const double c12 = dt * (A[0][1] + A[1][0]) * inv_h2 * 0.25;
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t ip = i + 1 == m ? 0 : i + 1;
    const std::size_t im = i == 0 ? m - 1 : i - 1;
    for (std::size_t j = 0; j < m; ++j) {
      const std::size_t jp = j + 1 == m ? 0 : j + 1;
      const std::size_t jm = j == 0 ? m - 1 : j - 1;
      const std::size_t k = i * m + j;
      double v = f[k] + c11 * (s[ip * m + j] - 2.0 * s[k] + s[im * m + j]) + c22 * (s[i * m + jp] - 2.0 * s[k] + s[i * m + jm]);
      if (c12 != 0.0) v += c12 * (s[ip * m + jp] - s[ip * m + jm] - s[im * m + jp] + s[im * m + jm]);
      out[k] = v;
    }
  }
}

inline void enforce_nonnegative(std::span<double> values) {
  for (double& v : values) {
    if (v >= 0.0) continue;
    if (v < -1e-12) throw NegativityError("density dropped to " + std::to_string(v));
    std::cerr << "warning: clamping density " << v << " to 0\n";
    v = 0.0;
  }
}

}  // namespace detail

/// One forward-Euler step. Throws CflError when dt exceeds cfl_dt for the
/// profile's value range.
template <SigmaMap Sigma>
MacroProfile step_explicit(const MacroProfile& f, const DiffusionMatrix& A, const Sigma& sigma, double dt) {
  const double bound = cfl_dt(A, f.dim, sigma.derivative_bound(f.min(), f.max()), f.M);
  if (!(dt > 0.0) || dt > bound * (1.0 + 1e-12))
    throw CflError("dt=" + std::to_string(dt) + " exceeds the stability bound " + std::to_string(bound));
  std::vector<double> s(f.values.size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = sigma(f.values[i]);
  MacroProfile out = f;
  detail::explicit_update(f.dim, f.M, A, dt, f.values, s, out.values);
  detail::enforce_nonnegative(out.values);
  return out;
}

struct PdeSnapshot {
  double t = 0.0;
  MacroProfile profile;
  double sup_deviation = 0.0;  // |f_t - mean(f_0)|_inf
};

struct PdeRun {
  std::vector<PdeSnapshot> snapshots;
  double dt = 0.0;  // largest step used
  double cfl_ratio = 0.0;
  std::uint64_t steps = 0;
};

/// Integrates to t_end, recording the requested snapshot times (t_end when
/// none are given). Steps are shortened so every snapshot is hit exactly.
template <SigmaMap Sigma>
PdeRun solve(const MacroProfile& f0, const DiffusionMatrix& A, const Sigma& sigma, double t_end,
             std::span<const double> snapshot_times = {}) {
  if (f0.values.empty()) throw ValidationError("profile", "empty initial profile");
  for (double v : f0.values)
    if (!(v >= 0.0) || !std::isfinite(v)) throw ValidationError("profile", "initial profile must be finite and non-negative");
  if (f0.delta_floor > 0.0 && f0.min() < f0.delta_floor) throw FloorError("initial profile falls below the positivity floor");
  if (!(t_end >= 0.0)) throw ValidationError("t_end", "t_end must be non-negative");

  std::vector<double> times(snapshot_times.begin(), snapshot_times.end());
  if (times.empty()) times.push_back(t_end);
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  for (double t : times)
    if (t < 0.0 || t > t_end) throw ValidationError("times", "snapshot times must lie in [0, t_end]");

  const double f_inf = f0.mean();
  // the maximum principle keeps values inside the initial range
  const double cfl = cfl_dt(A, f0.dim, sigma.derivative_bound(f0.min(), f0.max()), f0.M);

  PdeRun run;
  std::vector<double> f = f0.values;
  std::vector<double> s(f.size());
  std::vector<double> next(f.size());
  double t = 0.0;
  auto record = [&](double at) {
    PdeSnapshot snap{at, f0, 0.0};
    snap.profile.values = f;
    for (double v : f) snap.sup_deviation = std::max(snap.sup_deviation, std::abs(v - f_inf));
    run.snapshots.push_back(std::move(snap));
  };
  for (double target : times) {
    const double span = target - t;
    if (span > 0.0) {
      const auto n = static_cast<std::uint64_t>(std::ceil(span / cfl * (1.0 - 1e-12)));
      const double dt = span / static_cast<double>(n);
      run.dt = std::max(run.dt, dt);
      run.cfl_ratio = std::max(run.cfl_ratio, dt / cfl);
      for (std::uint64_t k = 0; k < n; ++k) {
        for (std::size_t i = 0; i < f.size(); ++i) s[i] = sigma(f[i]);
        detail::explicit_update(f0.dim, f0.M, A, dt, f, s, next);
        detail::enforce_nonnegative(next);
        f.swap(next);
      }
      run.steps += n;
      t = target;
    }
    record(target);
  }
  return run;
}

/// (2/M) sum_i f_i cos(2 pi k i / M): amplitude of the k-th cosine mode (d = 1).
inline double cosine_mode_amplitude(const MacroProfile& p, int k = 1) {
  const double two_pi = 2.0 * std::numbers::pi;
  double s = 0.0;
  for (int i = 0; i < p.M; ++i) s += p.values[static_cast<std::size_t>(i)] * std::cos(two_pi * k * i / p.M);
  return 2.0 * s / p.M;
}

/// sigma tabulated over [0, 2 max f] for a given rate.
inline SigmaTable make_sigma_table(const ThermoTable& thermo, double max_density, int points = 2048) {
  return SigmaTable(thermo, 2.0 * std::max(max_density, 1e-3), points);
}

}  // namespace hydrolab
