// Acceptance suite: one PASS/FAIL line per criterion, each with its runtime
// budget. Exits 1 if any criterion fails. `acceptance <substring>...` runs
// only the criteria whose name contains one of the substrings.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "hydrolab/cli.hpp"

using namespace hydrolab;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  std::string name;
  double budget_s;
  std::function<Outcome()> run;
};

std::string num(double v, int digits = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

std::string list(const std::vector<double>& xs, int digits = 3) {
  std::string s = "[";
  for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? ", " : "") + num(xs[i], digits);
  return s + "]";
}

double rel(double got, double want) { return want == 0.0 ? std::abs(got) : std::abs(got - want) / std::abs(want); }

const std::vector<RateFunction>& rates() {
  static const std::vector<RateFunction> r{RateFunction::linear(), RateFunction::indicator(), RateFunction::piecewise()};
  return r;
}

const DiffusionMatrix kHalf{{{0.5, 0.0}, {0.0, 0.0}}};

bool strictly_decreasing(const std::vector<double>& xs) {
  for (std::size_t i = 1; i < xs.size(); ++i)
    if (!(xs[i] < xs[i - 1])) return false;
  return true;
}

// ---------------------------------------------------------------------------

Outcome thermo_closed_forms() {
  const ThermoTable lin(RateFunction::linear()), ind(RateFunction::indicator());
  double worst = 0.0, round_trip = 0.0;
  int points = 0;
  // Poisson: Z = e^l, R = l, sigma = id, p_k = e^-l l^k / k!, E e^{th eta} = exp(l (e^th - 1))
  for (int i = 1; i <= 24; ++i, ++points) {
    const double l = 0.125 * i;
    worst = std::max({worst, rel(partition_z(lin, l), std::exp(l)), rel(mean_density(lin, l), l),
                      rel(fugacity_sigma(lin, l), l)});
    const auto pmf = one_site_pmf(lin, l);
    for (std::size_t k = 0; k < pmf.probs.size(); ++k) {
      const double p = std::exp(static_cast<double>(k) * std::log(l) - l - std::lgamma(static_cast<double>(k) + 1.0));
      if (p > 1e-30) worst = std::max(worst, rel(pmf.probs[k], p));
    }
    for (double th : {-0.5, 0.3}) worst = std::max(worst, rel(exp_moment(lin, l, th), std::exp(l * (std::exp(th) - 1))));
    round_trip = std::max(round_trip, rel(fugacity_sigma(lin, mean_density(lin, l)), l));
  }
  // geometric: Z = 1/(1-l), R = l/(1-l), sigma(rho) = rho/(1+rho), p_k = (1-l) l^k
  for (int i = 1; i <= 24; ++i, ++points) {
    const double l = 0.0375 * i;
    const double rho = l / (1 - l);
    worst = std::max({worst, rel(partition_z(ind, l), 1 / (1 - l)), rel(mean_density(ind, l), rho),
                      rel(fugacity_sigma(ind, rho), rho / (1 + rho))});
    const auto pmf = one_site_pmf(ind, l);
    for (std::size_t k = 0; k < pmf.probs.size(); ++k) {
      const double p = (1 - l) * std::pow(l, static_cast<double>(k));
      if (p > 1e-30) worst = std::max(worst, rel(pmf.probs[k], p));
    }
    for (double th : {-0.5, 0.02})
      worst = std::max(worst, rel(exp_moment(ind, l, th), (1 - l) / (1 - l * std::exp(th))));
    round_trip = std::max(round_trip, rel(fugacity_sigma(ind, mean_density(ind, l)), l));
  }
  return {worst <= 1e-8 && round_trip <= 1e-8,
          std::to_string(points) + " grid points; max rel error " + num(worst) + "; round trip " + num(round_trip)};
}

Outcome coupling_contraction_all() {
  std::uint64_t events = 0, violations = 0, mismatches = 0;
  std::uint64_t seed = 101;
  for (const auto& g : rates())
    for (int d : {1, 2}) {
      const auto rep = coupling_contraction(g, d, d == 1 ? 64 : 16, 50000, seed++);
      events += rep.events;
      violations += rep.violations;
      mismatches += rep.cache_mismatches;
    }
  return {events >= 100000 && violations == 0 && mismatches == 0,
          std::to_string(events) + " events, " + std::to_string(violations) + " l1 increases, " +
              std::to_string(mismatches) + " cache mismatches"};
}

Outcome support_stability_all() {
  SupportReport total;
  std::uint64_t seed = 201;
  for (const auto& g : rates())
    for (int d : {1, 2}) {
      const auto rep = support_stability(g, d, d == 1 ? 32 : 8, d == 1 ? 4000 : 1000, 0.05, seed++, worker_count());
      total.trajectories += rep.trajectories;
      total.events += rep.events;
      total.violations += rep.violations;
      total.resurrections += rep.resurrections;
      total.absorbed += rep.absorbed;
    }
  return {total.trajectories >= 10000 && total.violations == 0 && total.resurrections == 0 && total.absorbed > 0,
          std::to_string(total.trajectories) + " trajectories, " + std::to_string(total.events) + " events, " +
              std::to_string(total.violations) + " off-support, " + std::to_string(total.resurrections) +
              " left 0, " + std::to_string(total.absorbed) + " absorbed"};
}

Outcome jump_distance_martingale_all() {
  const std::vector<double> checkpoints{0.001, 0.002, 0.005, 0.01, 0.02};
  bool ok = true;
  double worst = 0.0;
  std::uint64_t seed = 301;
  for (const auto& g : rates()) {
    const auto stats = jump_distance_martingale(g, 64, 2000, checkpoints, seed++, worker_count());
    for (const auto& c : stats) {
      const double z = c.stderr_ > 0.0 ? std::abs(c.mean - 1.0) / c.stderr_ : (c.mean == 1.0 ? 0.0 : 1e9);
      worst = std::max(worst, z);
      if (z > 4.0) ok = false;
    }
  }
  return {ok, "3 rates x 2000 replicas x 5 checkpoints; max |E J - 1| / stderr = " + num(worst)};
}

/// E[g(eta_0) | sum = S] under the product of 1/g(k)! weights, by enumeration.
double brute_canonical(const RateFunction& g, int n, int S) {
  std::vector<int> eta(static_cast<std::size_t>(n), 0);
  double num_ = 0.0, den = 0.0;
  for (;;) {
    int total = 0;
    double w = 1.0;
    for (int v : eta) {
      total += v;
      for (int j = 1; j <= v; ++j) w /= g(j);
    }
    if (total == S) {
      num_ += w * g(eta[0]);
      den += w;
    }
    int i = 0;
    while (i < n && eta[static_cast<std::size_t>(i)] == S) eta[static_cast<std::size_t>(i++)] = 0;
    if (i == n) break;
    ++eta[static_cast<std::size_t>(i)];
  }
  return num_ / den;
}

Outcome equivalence_of_ensembles() {
  const auto lin = RateFunction::linear(), ind = RateFunction::indicator();
  const ThermoTable tl(lin), ti(ind);
  double linear_worst = 0.0;
  for (double m : {0.5, 1.0, 2.0}) {
    for (int ell = 2; ell <= 64; ++ell) linear_worst = std::max(linear_worst, equivalence_error(lin, tl, ell, 1, m).abs_error);
    for (int ell = 2; ell <= 8; ++ell) linear_worst = std::max(linear_worst, equivalence_error(lin, tl, ell, 2, m).abs_error);
  }
  double closed_worst = 0.0;
  std::vector<double> ells, errs;
  for (int ell = 2; ell <= 64; ++ell) {
    const auto r = equivalence_error(ind, ti, ell, 1, 1.0);
    const double n = r.n_sites, S = r.S;
    closed_worst = std::max(closed_worst, std::abs(r.abs_error - S / ((S + n - 1) * (S + n))));
    ells.push_back(ell);
    errs.push_back(r.abs_error);
  }
  const double slope = fit_rate(ells, errs).slope;
  double brute_worst = 0.0;
  for (const auto& g : rates())
    for (int n = 2; n <= 4; ++n) {
      const auto table = build_canonical(g, n, 8);
      for (int S = 0; S <= 8; ++S) {
        const double fast = canonical_expectation(table, S, [&](std::int64_t k) { return g(k); });
        brute_worst = std::max(brute_worst, std::abs(fast - brute_canonical(g, n, S)));
      }
    }
  return {linear_worst <= 1e-12 && closed_worst <= 1e-12 && slope >= -1.3 && slope <= -0.7 && brute_worst <= 1e-12,
          "linear max error " + num(linear_worst) + "; indicator closed-form gap " + num(closed_worst) + ", slope " +
              num(slope, 4) + "; brute-force gap " + num(brute_worst)};
}

Outcome local_limit() {
  const auto lin = RateFunction::linear();
  const ThermoTable tl(lin);
  bool ok = true;
  std::string detail;
  for (int d : {1, 2}) {
    const std::vector<int> sides = d == 1 ? std::vector<int>{16, 64, 256} : std::vector<int>{4, 8, 16};
    std::vector<double> centered, raw;
    for (int ell : sides) {
      const auto e = canonical_mass_pmf_vs_gaussian(lin, tl, ell, d, 1.0);
      centered.push_back(e.sup_error_centered);
      raw.push_back(e.sup_error_raw);
    }
    std::vector<double> ratios;
    for (std::size_t i = 1; i < centered.size(); ++i) {
      ratios.push_back(centered[i - 1] / centered[i]);
      if (ratios.back() < 1.7) ok = false;
    }
    detail += "d=" + std::to_string(d) + " centered " + list(centered) + " ratios " + list(ratios) + " raw " + list(raw) + "; ";
  }
  return {ok, detail};
}

Outcome pde_solver() {
  const int M = 256;
  std::vector<double> times;
  for (int k = 1; k <= 20; ++k) times.push_back(0.005 * k);
  const auto heat = solve(cosine_profile(1, M, 1.0, 0.5), kHalf, IdentitySigma{}, 0.1, times);
  const double decay = rel(cosine_mode_amplitude(heat.snapshots.back().profile, 1), 0.5 * std::exp(-2 * std::numbers::pi * std::numbers::pi * 0.1));

  double mass_err = 0.0;
  bool max_principle = true;
  for (const auto& g : rates()) {
    const ThermoTable thermo(g);
    for (int d : {1, 2}) {
      const auto f0 = cosine_profile(d, d == 1 ? M : 64, 1.0, 0.5);
      const DiffusionMatrix A = nearest_neighbour_kernel(d).A;
      const auto run = solve(f0, A, make_sigma_table(thermo, f0.max()), 0.1, times);
      double lo = f0.min(), hi = f0.max();
      for (const auto& s : run.snapshots) {
        mass_err = std::max(mass_err, std::abs(s.profile.mean() - f0.mean()));
        if (s.profile.min() < lo - 1e-15 || s.profile.max() > hi + 1e-15) max_principle = false;
        lo = s.profile.min();
        hi = s.profile.max();
      }
    }
  }
  std::vector<double> errors, factors;
  for (int m : {32, 64, 128}) {
    const auto run = solve(cosine_profile(1, m, 1.0, 0.5), kHalf, IdentitySigma{}, 0.1);
    errors.push_back(std::abs(cosine_mode_amplitude(run.snapshots.back().profile, 1) -
                              0.5 * std::exp(-2 * std::numbers::pi * std::numbers::pi * 0.1)));
  }
  bool order = true;
  for (std::size_t i = 1; i < errors.size(); ++i) {
    factors.push_back(errors[i - 1] / errors[i]);
    if (factors.back() < 3.0 || factors.back() > 5.0) order = false;
  }
  return {decay <= 0.01 && mass_err <= 1e-10 && max_principle && order,
          "mode decay rel error " + num(decay) + "; mass drift " + num(mass_err) + "; maximum principle " +
              (max_principle ? "holds" : "violated") + "; convergence factors " + list(factors)};
}

Outcome entropy_identity() {
  std::vector<double> times;
  for (int k = 0; k <= 50; ++k) times.push_back(0.002 * k);
  bool monotone = true;
  double heat_mismatch = 0.0;
  for (const auto& g : rates()) {
    const ThermoTable thermo(g);
    const auto f0 = cosine_profile(1, 256, 1.0, 0.5);
    const bool is_heat = g.kind() == RateKind::linear;
    const auto run = is_heat ? solve(f0, kHalf, IdentitySigma{}, 0.1, times)
                             : solve(f0, kHalf, make_sigma_table(thermo, f0.max()), 0.1, times);
    const auto rep = entropy_dissipation_check(run, kHalf, thermo);
    monotone = monotone && rep.free_energy_non_increasing;
    if (is_heat) heat_mismatch = rep.max_rel_mismatch;
  }
  return {monotone && heat_mismatch <= 0.01,
          std::string("free energy ") + (monotone ? "non-increasing" : "INCREASED") + " on all runs; heat-case max rel mismatch " +
              num(heat_mismatch)};
}

Outcome hydro_1d() {
  bool ok = true;
  std::string detail;
  std::uint64_t seed = 901;
  for (const auto& g : {RateFunction::linear(), RateFunction::piecewise()}) {
    HydroConfig cfg;
    cfg.rate = g;
    cfg.seed = seed++;
    cfg.threads = worker_count();
    const auto h = run_hydro(cfg);
    const bool pass = h.strictly_decreasing && h.decrease_confidence >= 0.95 && h.fit.slope <= -0.3;
    ok = ok && pass;
    detail += g.name() + ": sup W1 " + list(h.sup_w1) + ", bootstrap confidence " + num(h.decrease_confidence) + ", slope " +
              num(h.fit.slope) + " CI [" + num(h.slope_ci_low) + ", " + num(h.slope_ci_high) + "]; ";
  }
  return {ok, detail};
}

Outcome hydro_2d() {
  HydroConfig cfg;
  cfg.dim = 2;
  cfg.sizes = {16, 32, 48};
  cfg.replicas = 100;
  cfg.seed = 1001;
  cfg.threads = worker_count();
  const auto h = run_hydro(cfg);
  const bool ok = strictly_decreasing(h.sup_w1_axis[0]) && strictly_decreasing(h.sup_w1_axis[1]);
  return {ok, "axis 1 " + list(h.sup_w1_axis[0]) + ", axis 2 " + list(h.sup_w1_axis[1]) + ", averaged bootstrap confidence " +
                  num(h.decrease_confidence)};
}

Outcome jump_tail() {
  const double bound = chernoff_bound(1.0, 0.25, 400.0);
  const auto c = jump_count_tail(1.0, 1.0, 0.25, 400.0, 10000, 1101, JumpRateMode::constant_min, worker_count());
  const auto u = jump_count_tail(1.0, 2.0, 0.25, 400.0, 10000, 1102, JumpRateMode::uniform, worker_count());
  return {c.hits == 0 && u.hits == 0 && bound <= 1e-20,
          std::to_string(c.hits) + " + " + std::to_string(u.hits) + " of 2 x 10000 replicas below " + num(c.threshold) +
              " jumps; Chernoff bound " + num(bound)};
}

Outcome random_walk_returns() {
  const auto one = rw_no_return(1, 14, 100000, 1201, worker_count());
  const auto two = rw_no_return(2, 14, 100000, 1202, worker_count());
  return {std::abs(one.slope + 0.5) <= 0.1 && two.max_rel_residual <= 0.15,
          "d=1 slope " + num(one.slope, 4) + "; d=2 c = " + num(two.log_coefficient, 4) + ", max rel residual " +
              num(two.max_rel_residual)};
}

/// Runs the CLI in-process and returns the written files by name.
std::map<std::string, std::string> cli_files(const std::vector<std::string>& args, const std::filesystem::path& root, int threads,
                                             std::string* dir_name) {
  std::vector<std::string> full{"hydrolab"};
  full.insert(full.end(), args.begin(), args.end());
  full.insert(full.end(), {"--out", root.string(), "--threads", std::to_string(threads)});
  std::vector<const char*> argv;
  for (const auto& a : full) argv.push_back(a.c_str());
  std::ostringstream out, err;
  if (cli::dispatch(static_cast<int>(argv.size()), argv.data(), out, err) != 0) throw std::runtime_error(err.str());
  const std::filesystem::path dir = out.str().substr(0, out.str().find('\n'));
  *dir_name = dir.filename().string();
  std::map<std::string, std::string> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    std::ifstream in(e.path(), std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    files[e.path().filename().string()] = s.str();
  }
  return files;
}

Outcome determinism() {
  const std::vector<std::vector<std::string>> commands{
      {"thermo", "--rate", "piecewise", "--lambda", "0:3:0.25"},
      {"simulate", "--rate", "piecewise", "--N", "32", "--times", "0.01,0.02", "--events", "true"},
      {"couple", "--rate", "indicator", "--N", "32", "--replicas", "40", "--times", "0.005,0.01"},
      {"pde", "--rate", "piecewise", "--M", "64", "--times", "0.01,0.05"},
      {"hydro", "--rate", "linear", "--N", "16,32", "--replicas", "16", "--bootstrap", "50"},
      {"hydro", "--rate", "linear", "--dim", "2", "--N", "8,12", "--replicas", "8", "--bootstrap", "20"},
      {"ensembles", "--rate", "piecewise", "--ell", "2,4,8", "--m", "1.5"},
      {"rwreturn", "--dim", "2", "--max_exp", "10", "--replicas", "5000"},
      {"jumps", "--beta", "0.9", "--tN2", "10,20", "--replicas", "5000", "--mode", "uniform", "--g2", "2"},
  };
  const auto root = std::filesystem::temp_directory_path() / "hydrolab_acceptance_determinism";
  std::filesystem::remove_all(root);
  int identical = 0;
  std::string failures;
  for (const auto& cmd : commands) {
    std::string a_dir, b_dir, c_dir;
    const auto a = cli_files(cmd, root / "a", 1, &a_dir);
    const auto b = cli_files(cmd, root / "b", 3, &b_dir);
    const auto c = cli_files(cmd, root / "c", 1, &c_dir);
    if (a == b && a == c && a_dir == b_dir && a_dir == c_dir)
      ++identical;
    else
      failures += " " + cmd[0];
  }
  std::filesystem::remove_all(root);
  return {identical == static_cast<int>(commands.size()),
          std::to_string(identical) + "/" + std::to_string(commands.size()) +
              " runs byte-identical across re-runs and 1 vs 3 workers" + (failures.empty() ? "" : "; differing:" + failures)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {"thermo closed forms", 1.0, thermo_closed_forms},
      {"coupling contraction", 30.0, coupling_contraction_all},
      {"support stability", 60.0, support_stability_all},
      {"jump-distance martingale", 120.0, jump_distance_martingale_all},
      {"equivalence of ensembles", 30.0, equivalence_of_ensembles},
      {"local limit expansion", 30.0, local_limit},
      {"pde solver", 10.0, pde_solver},
      {"entropy identity", 10.0, entropy_identity},
      {"hydrodynamic limit d=1", 600.0, hydro_1d},
      {"hydrodynamic limit d=2", 900.0, hydro_2d},
      {"jump-count tail", 30.0, jump_tail},
      {"random-walk returns", 120.0, random_walk_returns},
      {"determinism", 120.0, determinism},
  };
  std::vector<std::string> filters(argv + 1, argv + argc);
  int failed = 0;
  for (const auto& c : criteria) {
    if (!filters.empty() &&
        std::none_of(filters.begin(), filters.end(), [&](const std::string& f) { return c.name.find(f) != std::string::npos; }))
      continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_budget = secs <= c.budget_s;
    const bool pass = o.pass && in_budget;
    if (!pass) ++failed;
    std::printf("%s  %s  (%.2fs / %.0fs budget%s)  %s\n", pass ? "PASS" : "FAIL", c.name.c_str(), secs, c.budget_s,
                in_budget ? "" : ", OVER BUDGET", o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
