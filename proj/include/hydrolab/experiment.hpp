#pragma once

// Replica-level experiments shared by the CLI and the acceptance suite. Each
// replica owns one RngStream keyed by (root_seed, stream_id) and writes into
// its own slot, and reductions run in stream order, so results do not depend
// on the worker count.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "hydrolab/analysis.hpp"
#include "hydrolab/kmc.hpp"
#include "hydrolab/lattice.hpp"
#include "hydrolab/parallel.hpp"
#include "hydrolab/pde.hpp"
#include "hydrolab/thermo.hpp"

namespace hydrolab {

struct MeanStderr {
  double mean = 0.0;
  double stderr_ = 0.0;
};

inline MeanStderr mean_stderr(std::span<const double> xs) {
  MeanStderr out;
  if (xs.empty()) return out;
  const double n = static_cast<double>(xs.size());
  out.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - out.mean) * (x - out.mean);
    out.stderr_ = std::sqrt(ss / (n - 1.0) / n);
  }
  return out;
}

/// Site densities of a profile function evaluated at x/N.
inline std::vector<double> site_densities(const Torus& torus, const std::function<double(double, double)>& f) {
  std::vector<double> out(torus.sites());
  const double n = torus.side();
  for (std::size_t x = 0; x < out.size(); ++x) {
    const Displacement c = torus.coords(x);
    out[x] = f(c[0] / n, c[1] / n);
  }
  return out;
}

/// Picks a uniformly random occupied site z and a kernel neighbour z', and
/// returns eta^{z z'}.
inline Configuration one_jump_partner(const Configuration& eta, const TransitionKernel& kernel, RngStream& rng,
                                      std::size_t* from = nullptr, std::size_t* to = nullptr) {
  if (eta.total_mass() == 0) throw FrozenError(0);
  std::size_t z;
  do z = static_cast<std::size_t>(rng.below(eta.size()));
  while (eta[z] == 0);
  const std::size_t zp = eta.torus().shift(z, kernel.sample(rng.uniform()));
  Configuration zeta = eta;
  zeta.apply_jump(z, zp);
  if (from) *from = z;
  if (to) *to = zp;
  return zeta;
}

// ---------------------------------------------------------------------------
// Coupling experiments

struct ContractionReport {
  std::uint64_t events = 0;
  std::uint64_t violations = 0;       // events where the l1 distance grew
  std::uint64_t cache_mismatches = 0; // incremental l1 or rate caches disagreeing with recomputation
  std::uint64_t joint = 0;
  std::uint64_t eta_only = 0;
  std::uint64_t zeta_only = 0;
  std::uint64_t pairs = 0;            // independent starting pairs used
};

/// Runs the coupled dynamics from independent local Gibbs pairs with densities
/// rho_eta and rho_zeta until at least min_events events, checking the l1
/// distance at every event.
inline ContractionReport coupling_contraction(const RateFunction& rate, int d, int N, std::uint64_t min_events,
                                              std::uint64_t seed, double rho_eta = 1.0, double rho_zeta = 1.5) {
  const ThermoTable thermo(rate);
  const Torus torus(d, N);
  const TransitionKernel kernel = nearest_neighbour_kernel(d);
  const LocalGibbsSampler sample_eta(thermo, torus, std::vector<double>(torus.sites(), rho_eta));
  const LocalGibbsSampler sample_zeta(thermo, torus, std::vector<double>(torus.sites(), rho_zeta));
  ContractionReport rep;
  for (std::uint64_t pair = 0; rep.events < min_events; ++pair) {
    RngStream rng(seed, pair);
    Configuration eta = sample_eta.sample(rng);
    Configuration zeta = sample_zeta.sample(rng);
    CoupledState s(std::move(eta), std::move(zeta), std::move(rng));
    ++rep.pairs;
    const std::uint64_t budget = std::min<std::uint64_t>(min_events - rep.events, 200000);
    for (std::uint64_t k = 0; k < budget; ++k) {
      if (s.l1 == 0 || !(s.total_rate() > 0.0)) break;
      const std::int64_t before = s.l1;
      const Event e = coupled_step(s, kernel);
      ++rep.events;
      if (s.l1 > before) ++rep.violations;
      switch (e.tag) {
        case EventTag::joint: ++rep.joint; break;
        case EventTag::eta_only: ++rep.eta_only; break;
        case EventTag::zeta_only: ++rep.zeta_only; break;
        default: break;
      }
      if (k % 4096 == 0) {
        if (s.l1 != l1_distance(s.eta, s.zeta)) ++rep.cache_mismatches;
        if (std::abs(s.eta.total_rate() - s.eta.recomputed_rate()) > 1e-9) ++rep.cache_mismatches;
      }
    }
  }
  return rep;
}

struct SupportReport {
  std::uint64_t trajectories = 0;
  std::uint64_t events = 0;
  std::uint64_t violations = 0;     // distance outside {0, 2}
  std::uint64_t resurrections = 0;  // distance left 0
  std::uint64_t absorbed = 0;       // trajectories that reached 0
};

/// From (eta, eta^{zz'}) with eta ~ local Gibbs at density rho, checks at
/// every coupled event that the l1 distance stays in {0, 2} and that 0 is
/// absorbing.
inline SupportReport support_stability(const RateFunction& rate, int d, int N, std::uint64_t trajectories, double t_end,
                                       std::uint64_t seed, int threads = 1, double rho = 1.0) {
  const ThermoTable thermo(rate);
  const Torus torus(d, N);
  const TransitionKernel kernel = nearest_neighbour_kernel(d);
  const LocalGibbsSampler sampler(thermo, torus, std::vector<double>(torus.sites(), rho));
  std::vector<SupportReport> per(trajectories);
  parallel_for(trajectories, threads, [&](std::size_t r) {
    RngStream rng(seed, r);
    Configuration eta = sampler.sample(rng);
    if (eta.total_mass() == 0) eta.set(0, 1);
    Configuration zeta = one_jump_partner(eta, kernel, rng);
    CoupledState s(std::move(eta), std::move(zeta), std::move(rng));
    SupportReport& rep = per[r];
    rep.trajectories = 1;
    bool absorbed = s.l1 == 0;
    if (s.l1 != 0 && s.l1 != 2) ++rep.violations;
    run_coupled_until(s, kernel, t_end, {}, {}, [&](const Event&, const CoupledState& st) {
      ++rep.events;
      if (st.l1 != 0 && st.l1 != 2) ++rep.violations;
      if (absorbed && st.l1 != 0) ++rep.resurrections;
      if (st.l1 == 0) absorbed = true;
    });
    if (s.l1 != l1_distance(s.eta, s.zeta)) ++rep.violations;
    rep.absorbed = absorbed ? 1 : 0;
  });
  SupportReport total;
  for (const auto& p : per) {
    total.trajectories += p.trajectories;
    total.events += p.events;
    total.violations += p.violations;
    total.resurrections += p.resurrections;
    total.absorbed += p.absorbed;
  }
  return total;
}

struct CheckpointStats {
  double t = 0.0;
  double mean = 0.0;
  double stderr_ = 0.0;
};

/// d = 1, nearest-neighbour kernel: mean jump distance J(eta_t, zeta_t) over
/// replicas started one nearest-neighbour jump apart (J = 1).
inline std::vector<CheckpointStats> jump_distance_martingale(const RateFunction& rate, int N, std::uint64_t replicas,
                                                             std::span<const double> checkpoints, std::uint64_t seed,
                                                             int threads = 1, double rho = 1.0) {
  const ThermoTable thermo(rate);
  const Torus torus(1, N);
  const TransitionKernel kernel = nearest_neighbour_kernel(1);
  const LocalGibbsSampler sampler(thermo, torus, std::vector<double>(torus.sites(), rho));
  std::vector<double> times(checkpoints.begin(), checkpoints.end());
  std::sort(times.begin(), times.end());
  std::vector<std::vector<double>> values(replicas, std::vector<double>(times.size(), 0.0));
  parallel_for(replicas, threads, [&](std::size_t r) {
    RngStream rng(seed, r);
    Configuration eta = sampler.sample(rng);
    if (eta.total_mass() == 0) eta.set(0, 1);
    Configuration zeta = one_jump_partner(eta, kernel, rng);
    CoupledState s(std::move(eta), std::move(zeta), std::move(rng));
    std::size_t k = 0;
    run_coupled_until(s, kernel, times.back(), times, [&](double, const CoupledState& st) {
      values[r][k++] = jump_distance_1d(st.eta, st.zeta);
    });
  });
  std::vector<CheckpointStats> out;
  for (std::size_t k = 0; k < times.size(); ++k) {
    std::vector<double> col(replicas);
    for (std::size_t r = 0; r < replicas; ++r) col[r] = values[r][k];
    const MeanStderr ms = mean_stderr(col);
    out.push_back({times[k], ms.mean, ms.stderr_});
  }
  return out;
}

/// Total variation between the pooled one-site law after running from the
/// constant local Gibbs state and n_{sigma(rho)}, with the CLT band
/// 3 * 1/2 sum_k sqrt(2 p_k (1 - p_k) / (pi n)).
struct StationarityReport {
  double tv = 0.0;
  double band = 0.0;
  std::uint64_t samples = 0;
};

inline StationarityReport stationarity_check(const RateFunction& rate, int N, double rho, std::uint64_t replicas, double t,
                                             std::uint64_t seed, int threads = 1) {
  const ThermoTable thermo(rate);
  const Torus torus(1, N);
  const TransitionKernel kernel = nearest_neighbour_kernel(1);
  const LocalGibbsSampler sampler(thermo, torus, std::vector<double>(torus.sites(), rho));
  const OneSitePmf& law = sampler.law(0);
  const std::size_t bins = law.probs.size() + 1;
  std::vector<std::vector<std::uint64_t>> hist(replicas, std::vector<std::uint64_t>(bins, 0));
  parallel_for(replicas, threads, [&](std::size_t r) {
    RngStream rng(seed, r);
    SimState s(sampler.sample(rng), std::move(rng));
    run_until(s, kernel, t);
    for (std::size_t x = 0; x < s.config.size(); ++x)
      ++hist[r][std::min<std::size_t>(static_cast<std::size_t>(s.config[x]), bins - 1)];
  });
  StationarityReport rep;
  std::vector<double> counts(bins, 0.0);
  for (const auto& h : hist)
    for (std::size_t k = 0; k < bins; ++k) counts[k] += static_cast<double>(h[k]);
  rep.samples = replicas * torus.sites();
  const double n = static_cast<double>(rep.samples);
  for (std::size_t k = 0; k < bins; ++k) {
    const double p = k < law.probs.size() ? law.probs[k] : 0.0;
    rep.tv += 0.5 * std::abs(counts[k] / n - p);
    rep.band += 0.5 * std::sqrt(2.0 * p * (1.0 - p) / (std::numbers::pi * n));
  }
  rep.band *= 3.0;
  return rep;
}

// ---------------------------------------------------------------------------
// Hydrodynamic limit

struct HydroConfig {
  RateFunction rate = RateFunction::linear();
  int dim = 1;
  std::vector<int> sizes{32, 64, 128, 256};
  std::uint64_t replicas = 200;
  double rho = 1.0;
  double amplitude = 0.5;
  std::vector<double> times{0.01, 0.05, 0.1};
  std::uint64_t seed = 1;
  int threads = 1;
  int bootstrap = 1000;
  int fourier_modes = 8;
  int pde_min_points = 0;  // 0: 256 in d = 1, 96 in d = 2
};

struct HydroRow {
  int N = 0;
  double t = 0.0;
  double w1_mean = 0.0;
  double w1_stderr = 0.0;
  double gap_mean = 0.0;
  double gap_stderr = 0.0;
};

/// Replica-mean density against the PDE target along the first axis; in
/// d = 2 both are averaged over the second coordinate.
struct HydroProfile {
  int N = 0;
  double t = 0.0;
  std::vector<double> empirical;
  std::vector<double> pde;
};

struct HydroSummary {
  std::vector<HydroRow> rows;
  std::vector<HydroProfile> profiles;
  std::vector<double> sizes;
  std::vector<double> sup_w1;  // per N: max over snapshots of the replica-mean W1
  // d = 2: per axis marginal, per N, max over snapshots of the replica-mean W1
  std::array<std::vector<double>, 2> sup_w1_axis;
  RateFit fit;
  double slope_ci_low = 0.0;
  double slope_ci_high = 0.0;
  double decrease_confidence = 0.0;  // bootstrap fraction with sup_w1 strictly decreasing in N
  bool strictly_decreasing = false;
  double mean_rel_mass_discrepancy = 0.0;
};

namespace detail {

/// W1 between one replica and the target: directly in d = 1, averaged over
/// the two axis marginals in d = 2 (each stored in axis_w1 when given). The
/// empirical measure is rescaled to the target mass first.
inline double replica_w1(const Configuration& c, std::span<const double> target_density, double* rel_mass = nullptr,
                         double* axis_w1 = nullptr) {
  const Torus& torus = c.torus();
  const int n = torus.side();
  const double scale = 1.0 / static_cast<double>(torus.sites());
  double mass_t = 0.0;
  for (double v : target_density) mass_t += v * scale;
  const double mass_e = static_cast<double>(c.total_mass()) * scale;
  if (rel_mass) *rel_mass = std::abs(mass_e - mass_t) / mass_t;
  const double factor = mass_e > 0.0 ? mass_t / mass_e : 0.0;
  if (torus.dim() == 1) {
    std::vector<double> e(c.size()), t(c.size());
    for (std::size_t x = 0; x < c.size(); ++x) {
      e[x] = factor * static_cast<double>(c[x]) * scale;
      t[x] = target_density[x] * scale;
    }
    return w1_profile_1d(e, t);
  }
  double w = 0.0;
  for (int axis = 0; axis < 2; ++axis) {
    std::vector<double> e(static_cast<std::size_t>(n), 0.0), t(static_cast<std::size_t>(n), 0.0);
    for (std::size_t x = 0; x < c.size(); ++x) {
      const auto i = static_cast<std::size_t>(torus.coords(x)[static_cast<std::size_t>(axis)]);
      e[i] += factor * static_cast<double>(c[x]) * scale;
      t[i] += target_density[x] * scale;
    }
    const double wa = w1_profile_1d(e, t);
    if (axis_w1) axis_w1[axis] = wa;
    w += 0.5 * wa;
  }
  return w;
}

}  // namespace detail

inline HydroSummary run_hydro(const HydroConfig& cfg) {
  if (cfg.sizes.size() < 2) throw ValidationError("N", "hydro needs at least two system sizes");
  if (cfg.replicas < 2) throw ValidationError("replicas", "hydro needs at least two replicas");
  if (cfg.times.empty()) throw ValidationError("times", "hydro needs snapshot times");
  if (!(cfg.rho - cfg.amplitude > 0.0)) throw ValidationError("amplitude", "cosine profile must stay positive");

  const ThermoTable thermo(cfg.rate);
  const TransitionKernel kernel = nearest_neighbour_kernel(cfg.dim);
  const DiffusionMatrix A = kernel.A;
  std::vector<double> times = cfg.times;
  std::sort(times.begin(), times.end());
  const double t_end = times.back();
  const int min_points = cfg.pde_min_points > 0 ? cfg.pde_min_points : (cfg.dim == 1 ? 256 : 96);
  const std::size_t n_times = times.size();

  HydroSummary out;
  // w1[size][replica][time]
  std::vector<std::vector<std::vector<double>>> w1_all;
  double mass_disc_sum = 0.0;
  std::size_t mass_disc_count = 0;

  for (std::size_t si = 0; si < cfg.sizes.size(); ++si) {
    const int N = cfg.sizes[si];
    const Torus torus(cfg.dim, N);
    const int stride = (min_points + N - 1) / N;
    const int M = N * stride;

    const MacroProfile f0 = cosine_profile(cfg.dim, M, cfg.rho, cfg.amplitude);
    const SigmaTable sigma = make_sigma_table(thermo, f0.max());
    const PdeRun run = solve(f0, A, sigma, t_end, times);
    std::vector<std::vector<double>> targets(n_times, std::vector<double>(torus.sites()));
    for (std::size_t k = 0; k < n_times; ++k) {
      const auto& vals = run.snapshots[k].profile.values;
      for (std::size_t x = 0; x < torus.sites(); ++x) {
        const Displacement c = torus.coords(x);
        const std::size_t gi = cfg.dim == 1 ? static_cast<std::size_t>(c[0] * stride)
                                            : static_cast<std::size_t>(c[0] * stride) * M + static_cast<std::size_t>(c[1] * stride);
        targets[k][x] = vals[gi];
      }
    }
    const std::vector<double> init = site_densities(torus, [&](double u, double v) {
      const double two_pi = 2.0 * std::numbers::pi;
      if (cfg.dim == 1) return cfg.rho + cfg.amplitude * std::cos(two_pi * u);
      return cfg.rho + 0.5 * cfg.amplitude * (std::cos(two_pi * u) + std::cos(two_pi * v));
    });
    const LocalGibbsSampler sampler(thermo, torus, init);
    const auto family = fourier_test_functions(torus, cfg.fourier_modes);
    std::vector<std::vector<double>> target_pairings(n_times, std::vector<double>(family.size()));
    for (std::size_t k = 0; k < n_times; ++k)
      for (std::size_t j = 0; j < family.size(); ++j) {
        double s = 0.0;
        for (std::size_t x = 0; x < torus.sites(); ++x) s += targets[k][x] * family[j][x];
        target_pairings[k][j] = s / static_cast<double>(torus.sites());
      }

    std::vector<std::vector<double>> w1(cfg.replicas, std::vector<double>(n_times));
    std::vector<std::vector<double>> gap(cfg.replicas, std::vector<double>(n_times));
    std::vector<std::vector<double>> disc(cfg.replicas, std::vector<double>(n_times));
    std::vector<std::vector<std::array<double, 2>>> axis(cfg.replicas, std::vector<std::array<double, 2>>(n_times));
    const auto n_side = static_cast<std::size_t>(N);
    const double per_row = static_cast<double>(torus.sites() / n_side);
    std::vector<std::vector<std::vector<double>>> marg(cfg.replicas,
                                                        std::vector<std::vector<double>>(n_times, std::vector<double>(n_side)));
    parallel_for(cfg.replicas, cfg.threads, [&](std::size_t r) {
      const std::uint64_t stream = (static_cast<std::uint64_t>(N) << 32) | static_cast<std::uint64_t>(r);
      RngStream rng(cfg.seed, stream);
      SimState s(sampler.sample(rng), std::move(rng));
      std::size_t k = 0;
      run_until(s, kernel, t_end, times, [&](double, const Configuration& c) {
        w1[r][k] = detail::replica_w1(c, targets[k], &disc[r][k], axis[r][k].data());
        double worst = 0.0;
        for (std::size_t j = 0; j < family.size(); ++j)
          worst = std::max(worst, std::abs(empirical_pairing(c, family[j]) - target_pairings[k][j]));
        gap[r][k] = worst;
        for (std::size_t x = 0; x < c.size(); ++x)
          marg[r][k][static_cast<std::size_t>(torus.coords(x)[0])] += static_cast<double>(c[x]) / per_row;
        ++k;
      });
    });

    double sup = 0.0;
    for (std::size_t k = 0; k < n_times; ++k) {
      std::vector<double> wc(cfg.replicas), gc(cfg.replicas);
      for (std::size_t r = 0; r < cfg.replicas; ++r) {
        wc[r] = w1[r][k];
        gc[r] = gap[r][k];
        mass_disc_sum += disc[r][k];
        ++mass_disc_count;
      }
      const MeanStderr wm = mean_stderr(wc);
      const MeanStderr gm = mean_stderr(gc);
      out.rows.push_back({N, times[k], wm.mean, wm.stderr_, gm.mean, gm.stderr_});
      HydroProfile prof{N, times[k], std::vector<double>(n_side, 0.0), std::vector<double>(n_side, 0.0)};
      for (std::size_t r = 0; r < cfg.replicas; ++r)
        for (std::size_t i = 0; i < n_side; ++i) prof.empirical[i] += marg[r][k][i] / static_cast<double>(cfg.replicas);
      for (std::size_t x = 0; x < torus.sites(); ++x)
        prof.pde[static_cast<std::size_t>(torus.coords(x)[0])] += targets[k][x] / per_row;
      out.profiles.push_back(std::move(prof));
      sup = std::max(sup, wm.mean);
    }
    out.sizes.push_back(N);
    out.sup_w1.push_back(sup);
    if (cfg.dim == 2)
      for (std::size_t a = 0; a < 2; ++a) {
        double sup_a = 0.0;
        for (std::size_t k = 0; k < n_times; ++k) {
          double m = 0.0;
          for (std::size_t r = 0; r < cfg.replicas; ++r) m += axis[r][k][a];
          sup_a = std::max(sup_a, m / static_cast<double>(cfg.replicas));
        }
        out.sup_w1_axis[a].push_back(sup_a);
      }
    w1_all.push_back(std::move(w1));
  }
  out.mean_rel_mass_discrepancy = mass_disc_count ? mass_disc_sum / static_cast<double>(mass_disc_count) : 0.0;

  out.strictly_decreasing = true;
  for (std::size_t i = 1; i < out.sup_w1.size(); ++i)
    if (!(out.sup_w1[i] < out.sup_w1[i - 1])) out.strictly_decreasing = false;
  if (out.sizes.size() >= 4) out.fit = fit_rate(out.sizes, out.sup_w1);

  // bootstrap over replicas, independently per system size
  if (cfg.bootstrap > 0) {
    RngStream rng(cfg.seed, 0xB0075742ULL);
    std::uint64_t decreasing = 0;
    std::vector<double> slopes;
    std::vector<double> sup_b(cfg.sizes.size());
    std::vector<double> acc(n_times);
    for (int b = 0; b < cfg.bootstrap; ++b) {
      for (std::size_t si = 0; si < cfg.sizes.size(); ++si) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::uint64_t r = 0; r < cfg.replicas; ++r) {
          const auto& row = w1_all[si][rng.below(cfg.replicas)];
          for (std::size_t k = 0; k < n_times; ++k) acc[k] += row[k];
        }
        sup_b[si] = *std::max_element(acc.begin(), acc.end()) / static_cast<double>(cfg.replicas);
      }
      bool dec = true;
      for (std::size_t i = 1; i < sup_b.size(); ++i)
        if (!(sup_b[i] < sup_b[i - 1])) dec = false;
      if (dec) ++decreasing;
      if (sup_b.size() >= 4) slopes.push_back(fit_rate(out.sizes, sup_b).slope);
    }
    out.decrease_confidence = static_cast<double>(decreasing) / cfg.bootstrap;
    if (!slopes.empty()) {
      std::sort(slopes.begin(), slopes.end());
      const auto at = [&](double q) {
        const auto idx = static_cast<std::size_t>(std::floor(q * static_cast<double>(slopes.size() - 1)));
        return slopes[idx];
      };
      out.slope_ci_low = at(0.025);
      out.slope_ci_high = at(0.975);
    }
  }
  return out;
}

}  // namespace hydrolab
