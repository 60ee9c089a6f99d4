#pragma once

// Estimators linking particle simulations to the macroscopic equation:
// circular W1 between grid measures, Fourier test-function gaps, relative
// entropy and entropy production of local Gibbs states, jump-count tails,
// random-walk survival and log-log rate fits.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <numbers>
#include <numeric>
#include <span>
#include <vector>

#include "hydrolab/errors.hpp"
#include "hydrolab/kmc.hpp"
#include "hydrolab/lattice.hpp"
#include "hydrolab/parallel.hpp"
#include "hydrolab/pde.hpp"
#include "hydrolab/rng.hpp"
#include "hydrolab/thermo.hpp"

namespace hydrolab {

/// W1 on the unit circle between two mass distributions on the grid i/M.
/// The optimal transport plan on the circle shifts the CDF difference by its
/// median, so W1 = (1/M) sum_i |c_i - median(c)|.
inline double w1_profile_1d(std::span<const double> empirical, std::span<const double> target) {
  if (empirical.size() != target.size() || empirical.empty()) throw ShapeError("W1 needs two measures on the same grid");
  const double mass_e = std::accumulate(empirical.begin(), empirical.end(), 0.0);
  const double mass_t = std::accumulate(target.begin(), target.end(), 0.0);
  const double scale = std::max(std::abs(mass_t), 1e-300);
  const double rel = std::abs(mass_e - mass_t) / scale;
  if (rel > 1e-6) throw MassMismatchError("W1 masses differ by a relative " + std::to_string(rel));
  double factor = 1.0;
  if (rel > 1e-9) {
    std::cerr << "warning: W1 renormalizing a relative mass discrepancy of " << rel << '\n';
    factor = mass_t / mass_e;
  }
  std::vector<double> c(empirical.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    acc += factor * empirical[i] - target[i];
    c[i] = acc;
  }
  std::vector<double> sorted = c;
  auto mid = sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2);
  std::nth_element(sorted.begin(), mid, sorted.end());
  const double median = *mid;
  double w = 0.0;
  for (double v : c) w += std::abs(v - median);
  return w / static_cast<double>(c.size());
}

/// First K real Fourier test functions sampled at the sites x/N: the constant,
/// then cos and sin of increasing frequency along each axis in turn.
inline std::vector<std::vector<double>> fourier_test_functions(const Torus& torus, int K) {
  std::vector<std::vector<double>> family;
  const double two_pi = 2.0 * std::numbers::pi;
  const int n = torus.side();
  auto add = [&](auto&& fn) {
    if (static_cast<int>(family.size()) >= K) return;
    std::vector<double> phi(torus.sites());
    for (std::size_t x = 0; x < phi.size(); ++x) {
      const Displacement c = torus.coords(x);
      phi[x] = fn(static_cast<double>(c[0]) / n, static_cast<double>(c[1]) / n);
    }
    family.push_back(std::move(phi));
  };
  add([](double, double) { return 1.0; });
  for (int freq = 1; static_cast<int>(family.size()) < K; ++freq) {
    for (int axis = 0; axis < torus.dim(); ++axis) {
      add([&](double u, double v) { return std::cos(two_pi * freq * (axis == 0 ? u : v)); });
      add([&](double u, double v) { return std::sin(two_pi * freq * (axis == 0 ? u : v)); });
    }
  }
  return family;
}

struct GapStats {
  double mean = 0.0;
  double stderr_ = 0.0;
  double tail_fraction = 0.0;  // replicas with gap > eps
};

/// For each test function phi, statistics over replicas of
/// |<alpha_eta^N, phi> - <f, phi>_N|, with <f, phi>_N the grid quadrature.
inline std::vector<GapStats> test_function_gap(std::span<const Configuration> replicas, std::span<const double> site_density,
                                               const std::vector<std::vector<double>>& family, double eps) {
  std::vector<GapStats> out(family.size());
  if (replicas.empty()) return out;
  for (std::size_t k = 0; k < family.size(); ++k) {
    const auto& phi = family[k];
    if (phi.size() != site_density.size()) throw ShapeError("test function grid does not match the profile");
    double target = 0.0;
    for (std::size_t x = 0; x < phi.size(); ++x) target += site_density[x] * phi[x];
    target /= static_cast<double>(phi.size());
    double s = 0.0, s2 = 0.0;
    std::size_t above = 0;
    for (const auto& c : replicas) {
      const double gap = std::abs(empirical_pairing(c, phi) - target);
      s += gap;
      s2 += gap * gap;
      if (gap > eps) ++above;
    }
    const double r = static_cast<double>(replicas.size());
    out[k].mean = s / r;
    out[k].stderr_ = r > 1 ? std::sqrt(std::max(0.0, (s2 - s * s / r) / (r - 1.0)) / r) : 0.0;
    out[k].tail_fraction = static_cast<double>(above) / r;
  }
  return out;
}

/// Per-point density of the relative entropy between local Gibbs states:
/// f ln(sigma(f)/sigma(f_inf)) + ln(Z(sigma(f_inf)) / Z(sigma(f))), 0 ln 0 = 0.
struct GibbsEntropyDensity {
  GibbsEntropyDensity(const ThermoTable& thermo, double f_inf)
      : thermo_(&thermo), sigma_inf_(fugacity_sigma(thermo, f_inf)), log_z_inf_(log_partition_z(thermo, sigma_inf_)) {}

  double operator()(double f) const {
    if (!(f >= 0.0)) throw RangeError("density must be non-negative");
    const double lam = fugacity_sigma(*thermo_, f);
    const double log_z = log_partition_z(*thermo_, lam);
    const double first = f == 0.0 ? 0.0 : f * (std::log(lam) - std::log(sigma_inf_));
    return first + log_z_inf_ - log_z;
  }

 private:
  const ThermoTable* thermo_;
  double sigma_inf_;
  double log_z_inf_;
};

/// H^N(theta_f | theta_{f_inf}) = N^{-d} sum_x [entropy density at f_x].
inline double gibbs_relative_entropy(std::span<const double> f, double f_inf, const ThermoTable& thermo) {
  if (f.empty()) return 0.0;
  const GibbsEntropyDensity density(thermo, f_inf);
  double s = 0.0;
  for (double v : f) s += density(v);
  return std::max(0.0, s / static_cast<double>(f.size()));
}

/// Grid quadrature of int A : grad sigma(f) (x) grad sigma(f) / sigma(f) du
/// with centered differences.
inline double entropy_production(const MacroProfile& f, const DiffusionMatrix& A, const ThermoTable& thermo,
                                 double delta = 0.0) {
  const double floor = std::max(delta, f.delta_floor);
  if (f.min() < floor || f.min() <= 0.0) throw FloorError("entropy production needs a profile bounded away from 0");
  std::vector<double> s(f.values.size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = fugacity_sigma(thermo, f.values[i]);
  const auto m = static_cast<std::size_t>(f.M);
  const double inv_2h = 0.5 * f.M;
  double total = 0.0;
  if (f.dim == 1) {
    for (std::size_t i = 0; i < m; ++i) {
      const double g = (s[(i + 1) % m] - s[(i + m - 1) % m]) * inv_2h;
      total += A[0][0] * g * g / s[i];
    }
  } else {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        const double g1 = (s[((i + 1) % m) * m + j] - s[((i + m - 1) % m) * m + j]) * inv_2h;
        const double g2 = (s[i * m + (j + 1) % m] - s[i * m + (j + m - 1) % m]) * inv_2h;
        const double q = A[0][0] * g1 * g1 + (A[0][1] + A[1][0]) * g1 * g2 + A[1][1] * g2 * g2;
        total += q / s[i * m + j];
      }
  }
  return total / static_cast<double>(s.size());
}

struct EntropyDissipationReport {
  std::vector<double> times;
  std::vector<double> free_energy;
  std::vector<double> production;   // at interior snapshots
  std::vector<double> dfdt;         // centered finite differences
  double max_abs_mismatch = 0.0;
  double max_rel_mismatch = 0.0;    // over snapshots with production > 1e-12
  bool free_energy_non_increasing = true;
};

/// Compares the centered time derivative of the free energy along a run with
/// minus the entropy production at interior snapshots.
inline EntropyDissipationReport entropy_dissipation_check(const PdeRun& run, const DiffusionMatrix& A,
                                                          const ThermoTable& thermo) {
  EntropyDissipationReport rep;
  if (run.snapshots.empty()) return rep;
  const double f_inf = run.snapshots.front().profile.mean();
  for (const auto& snap : run.snapshots) {
    rep.times.push_back(snap.t);
    rep.free_energy.push_back(gibbs_relative_entropy(snap.profile.values, f_inf, thermo));
  }
  for (std::size_t k = 1; k < rep.free_energy.size(); ++k)
    if (rep.free_energy[k] > rep.free_energy[k - 1] + 1e-14) rep.free_energy_non_increasing = false;
  for (std::size_t k = 1; k + 1 < run.snapshots.size(); ++k) {
    const double d = (rep.free_energy[k + 1] - rep.free_energy[k - 1]) / (rep.times[k + 1] - rep.times[k - 1]);
    const double p = entropy_production(run.snapshots[k].profile, A, thermo);
    rep.dfdt.push_back(d);
    rep.production.push_back(p);
    const double mismatch = std::abs(d + p);
    rep.max_abs_mismatch = std::max(rep.max_abs_mismatch, mismatch);
    if (p > 1e-12) rep.max_rel_mismatch = std::max(rep.max_rel_mismatch, mismatch / p);
  }
  return rep;
}

enum class JumpRateMode { constant_min, uniform };

struct JumpTailResult {
  std::uint64_t replicas = 0;
  std::uint64_t hits = 0;  // replicas with at most beta t N^2 jumps
  double threshold = 0.0;
  double tail = 0.0;
};

inline constexpr std::size_t kReplicaBlock = 1024;

/// Jump chain over the rescaled horizon T = t N^2 with per-jump rates
/// g1 (constant_min) or uniform in [g1, g2]; estimates P(#jumps <= beta T).
inline JumpTailResult jump_count_tail(double g1, double g2, double beta, double tN2, std::uint64_t replicas,
                                      std::uint64_t seed, JumpRateMode mode, int threads = 1) {
  if (!(g1 > 0.0) || g2 < g1) throw ValidationError("g1", "need 0 < g1 <= g2");
  if (!(beta > 0.0)) throw ValidationError("beta", "beta must be positive");
  if (!(tN2 > 0.0)) throw ValidationError("tN2", "horizon must be positive");
  JumpTailResult res;
  res.replicas = replicas;
  res.threshold = beta * tN2;
  const std::size_t blocks = (replicas + kReplicaBlock - 1) / kReplicaBlock;
  std::vector<std::uint64_t> hits(blocks, 0);
  parallel_for(blocks, threads, [&](std::size_t b) {
    RngStream rng(seed, b);
    const std::uint64_t lo = b * kReplicaBlock;
    const std::uint64_t hi = std::min<std::uint64_t>(replicas, lo + kReplicaBlock);
    for (std::uint64_t r = lo; r < hi; ++r) {
      double t = 0.0;
      double count = 0.0;
      bool hit = true;
      for (;;) {
        const double rate = mode == JumpRateMode::constant_min ? g1 : g1 + (g2 - g1) * rng.uniform();
        t += rng.exponential(rate);
        if (t > tN2) break;
        count += 1.0;
        if (count > res.threshold) {
          hit = false;
          break;
        }
      }
      if (hit) ++hits[b];
    }
  });
  res.hits = std::accumulate(hits.begin(), hits.end(), std::uint64_t{0});
  res.tail = replicas ? static_cast<double>(res.hits) / static_cast<double>(replicas) : 0.0;
  return res;
}

/// exp(-T (g1 - beta + beta ln(beta / g1))) for beta < g1, else 1: the
/// Poisson lower-tail bound that dominates the jump count when all rates are
/// at least g1.
inline double chernoff_bound(double g1, double beta, double tN2) {
  if (!(beta < g1)) return 1.0;
  return std::exp(-tN2 * (g1 - beta + beta * std::log(beta / g1)));
}

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

/// Ordinary least squares of y on x.
inline LinearFit fit_linear(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeError("fit needs matching abscissae and ordinates");
  if (x.size() < 2) throw DegenerateFitError("fit needs at least 2 points");
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
    syy += y[i] * y[i];
  }
  const double vxx = sxx - sx * sx / n;
  const double vxy = sxy - sx * sy / n;
  const double vyy = syy - sy * sy / n;
  if (vxx <= 0.0) throw DegenerateFitError("fit needs distinct abscissae");
  LinearFit fit;
  fit.slope = vxy / vxx;
  fit.intercept = (sy - fit.slope * sx) / n;
  fit.r2 = vyy > 0.0 ? vxy * vxy / (vxx * vyy) : 1.0;
  return fit;
}

struct RateFit {
  std::vector<double> abscissae;
  std::vector<double> errors;
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

/// Least squares of log(error) on log(abscissa) over at least 4 points.
inline RateFit fit_rate(std::span<const double> abscissae, std::span<const double> errors) {
  if (abscissae.size() != errors.size()) throw ShapeError("fit needs matching abscissae and errors");
  if (abscissae.size() < 4) throw DegenerateFitError("fit needs at least 4 points");
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < abscissae.size(); ++i) {
    if (!(errors[i] > 0.0)) throw DegenerateFitError("fit excludes zero or negative errors");
    if (!(abscissae[i] > 0.0)) throw DegenerateFitError("fit needs positive abscissae");
    lx.push_back(std::log(abscissae[i]));
    ly.push_back(std::log(errors[i]));
  }
  const LinearFit lin = fit_linear(lx, ly);
  return {{abscissae.begin(), abscissae.end()}, {errors.begin(), errors.end()}, lin.slope, lin.intercept, lin.r2};
}

struct SurvivalCurve {
  int dim = 1;
  std::vector<std::uint64_t> steps;  // 0, 1, 2, 4, ..., 2^max_exp
  std::vector<double> survival;
  double slope = 0.0;              // d = 1: log-log slope over the fit range
  double log_coefficient = 0.0;    // d = 2: c in survival ~ c / ln n, minimax relative fit
  double max_rel_residual = 0.0;   // of the fitted model over the fit range
  int fit_from_exp = 6;
};

/// Simple symmetric random walk on Z^d started at distance 1 from the origin;
/// survival(n) = P(no visit to 0 within n steps).
inline SurvivalCurve rw_no_return(int d, int max_exp, std::uint64_t replicas, std::uint64_t seed, int threads = 1,
                                  int fit_from_exp = 6) {
  if (d != 1 && d != 2) throw ValidationError("dim", "random walk dimension must be 1 or 2");
  if (max_exp < 0 || max_exp > 30) throw ValidationError("n_max_exp", "max exponent must lie in [0, 30]");
  const std::uint64_t n_max = std::uint64_t{1} << max_exp;
  const std::size_t blocks = (replicas + kReplicaBlock - 1) / kReplicaBlock;
  // per block: counts of first hitting times bucketed by the dyadic grid
  std::vector<std::vector<std::uint64_t>> alive(blocks, std::vector<std::uint64_t>(static_cast<std::size_t>(max_exp) + 2, 0));
  parallel_for(blocks, threads, [&](std::size_t b) {
    RngStream rng(seed, b);
    const std::uint64_t lo = b * kReplicaBlock;
    const std::uint64_t hi = std::min<std::uint64_t>(replicas, lo + kReplicaBlock);
    auto& counts = alive[b];
    for (std::uint64_t r = lo; r < hi; ++r) {
      std::int64_t x = 1, y = 0;
      std::uint64_t hit = n_max + 1;
      std::uint64_t word = 0;
      int left = 0;
      for (std::uint64_t n = 1; n <= n_max; ++n) {
        if (left == 0) {
          word = rng.bits();
          left = 64;
        }
        if (d == 1) {
          x += (word & 1) ? 1 : -1;
          word >>= 1;
          left -= 1;
          if (x == 0) {
            hit = n;
            break;
          }
        } else {
          switch (word & 3) {
            case 0: ++x; break;
            case 1: --x; break;
            case 2: ++y; break;
            default: --y; break;
          }
          word >>= 2;
          left -= 2;
          if (x == 0 && y == 0) {
            hit = n;
            break;
          }
        }
      }
      // index 0 is n = 0; index j + 1 is n = 2^j
      ++counts[0];
      for (int j = 0; j <= max_exp; ++j)
        if (hit > (std::uint64_t{1} << j)) ++counts[static_cast<std::size_t>(j) + 1];
    }
  });
  SurvivalCurve curve;
  curve.dim = d;
  curve.fit_from_exp = fit_from_exp;
  curve.steps.push_back(0);
  for (int j = 0; j <= max_exp; ++j) curve.steps.push_back(std::uint64_t{1} << j);
  for (std::size_t k = 0; k < curve.steps.size(); ++k) {
    std::uint64_t total = 0;
    for (const auto& c : alive) total += c[k];
    curve.survival.push_back(replicas ? static_cast<double>(total) / static_cast<double>(replicas) : 1.0);
  }
  if (max_exp - fit_from_exp + 1 < 4 || replicas == 0) return curve;

  std::vector<double> ns, ss;
  for (int j = fit_from_exp; j <= max_exp; ++j) {
    ns.push_back(static_cast<double>(std::uint64_t{1} << j));
    ss.push_back(curve.survival[static_cast<std::size_t>(j) + 1]);
  }
  if (d == 1) {
    const RateFit fit = fit_rate(ns, ss);
    curve.slope = fit.slope;
    for (std::size_t i = 0; i < ns.size(); ++i) {
      const double model = std::exp(fit.intercept) * std::pow(ns[i], fit.slope);
      curve.max_rel_residual = std::max(curve.max_rel_residual, std::abs(ss[i] - model) / ss[i]);
    }
  } else {
    // Chebyshev fit in relative terms: with q_i = 1 / (S_i ln n_i) the
    // residuals are |1 - c q_i|, minimized in max by c = 2 / (q_min + q_max).
    double q_min = std::numeric_limits<double>::infinity(), q_max = 0.0;
    for (std::size_t i = 0; i < ns.size(); ++i) {
      if (!(ss[i] > 0.0)) throw DegenerateFitError("survival reached 0 inside the fit range");
      const double q = 1.0 / (ss[i] * std::log(ns[i]));
      q_min = std::min(q_min, q);
      q_max = std::max(q_max, q);
    }
    curve.log_coefficient = 2.0 / (q_min + q_max);
    for (std::size_t i = 0; i < ns.size(); ++i) {
      const double model = curve.log_coefficient / std::log(ns[i]);
      curve.max_rel_residual = std::max(curve.max_rel_residual, std::abs(ss[i] - model) / ss[i]);
    }
  }
  return curve;
}

}  // namespace hydrolab
