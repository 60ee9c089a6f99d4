#pragma once

// Canonical ensembles of the zero-range process: exact partition values
// Z_{n,S} = sum over configurations of n sites with total S of prod 1/g(eta)!,
// canonical one-site expectations, and the local limit comparison of the
// total-mass law with Gaussian densities.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "hydrolab/errors.hpp"
#include "hydrolab/thermo.hpp"

namespace hydrolab {

/// logZ[n][S] for 0 <= n <= n_sites, 0 <= S <= s_max, built by the
/// convolution recursion in log space.
class CanonicalTable {
 public:
  CanonicalTable(RateFunction rate, int n_sites, int s_max)
      : rate_(std::move(rate)), n_sites_(n_sites), s_max_(s_max) {
    if (n_sites < 1) throw ValidationError("n_sites", "need at least one site");
    if (s_max < 0) throw ValidationError("S_max", "maximal mass must be non-negative");
    const auto width = static_cast<std::size_t>(s_max) + 1;
    log_fact_.resize(width);
    log_fact_[0] = 0.0;
    for (std::size_t k = 1; k < width; ++k) log_fact_[k] = log_fact_[k - 1] + std::log(rate_(static_cast<std::int64_t>(k)));

    const double neg_inf = -std::numeric_limits<double>::infinity();
    log_z_.assign((static_cast<std::size_t>(n_sites) + 1) * width, neg_inf);
    log_z_[0] = 0.0;  // empty lattice: only S = 0
    std::vector<double> terms(width);
    for (int n = 1; n <= n_sites; ++n) {
      const double* prev = &log_z_[static_cast<std::size_t>(n - 1) * width];
      double* row = &log_z_[static_cast<std::size_t>(n) * width];
      for (std::size_t S = 0; S < width; ++S) {
        double peak = neg_inf;
        for (std::size_t k = 0; k <= S; ++k) {
          terms[k] = prev[S - k] - log_fact_[k];
          peak = std::max(peak, terms[k]);
        }
        double acc = 0.0;
        for (std::size_t k = 0; k <= S; ++k) acc += std::exp(terms[k] - peak);
        row[S] = peak + std::log(acc);
      }
    }
  }

  const RateFunction& rate() const noexcept { return rate_; }
  int n_sites() const noexcept { return n_sites_; }
  int s_max() const noexcept { return s_max_; }

  double log_z(int n, int S) const {
    if (n < 0 || n > n_sites_ || S < 0 || S > s_max_) throw RangeError("canonical table index out of range");
    return log_z_[static_cast<std::size_t>(n) * (static_cast<std::size_t>(s_max_) + 1) + static_cast<std::size_t>(S)];
  }
  double log_factorial(int k) const { return log_fact_[static_cast<std::size_t>(k)]; }

 private:
  RateFunction rate_;
  int n_sites_;
  int s_max_;
  std::vector<double> log_fact_;
  std::vector<double> log_z_;
};

inline CanonicalTable build_canonical(const RateFunction& rate, int n_sites, int s_max) {
  return CanonicalTable(rate, n_sites, s_max);
}

/// E[h(eta_0)] under the uniform-weight canonical law on n_sites sites with
/// total mass S: sum_k h(k) / g(k)! * Z_{n-1,S-k} / Z_{n,S}.
inline double canonical_expectation(const CanonicalTable& table, int S, const std::function<double(std::int64_t)>& h) {
  if (S < 0 || S > table.s_max()) throw RangeError("total mass outside the canonical table");
  const int n = table.n_sites();
  if (n < 2) throw RangeError("canonical expectation needs at least two sites");
  const double denom = table.log_z(n, S);
  double e = 0.0;
  for (int k = 0; k <= S; ++k) {
    const double rest = table.log_z(n - 1, S - k);
    if (rest == -std::numeric_limits<double>::infinity()) continue;
    e += h(k) * std::exp(rest - table.log_factorial(k) - denom);
  }
  return e;
}

struct EquivalenceResult {
  int ell = 0;
  int n_sites = 0;
  int S = 0;
  double density = 0.0;   // S / n_sites
  double rounding = 0.0;  // S - m n_sites
  double canonical = 0.0;
  double sigma_at_density = 0.0;
  double abs_error = 0.0;
};

inline int ipow(int base, int exp) {
  int r = 1;
  for (int i = 0; i < exp; ++i) r *= base;
  return r;
}

/// |E_canonical[g(eta_0)] - sigma(S/n)| on a cube of ell^d sites with S the
/// integer nearest to m ell^d; sigma is taken at the realized density.
inline EquivalenceResult equivalence_error(const RateFunction& rate, const ThermoTable& thermo, int ell, int d, double m) {
  if (ell < 1) throw ValidationError("ell", "block side must be positive");
  if (!(m >= 0.0)) throw ValidationError("m", "density must be non-negative");
  EquivalenceResult r;
  r.ell = ell;
  r.n_sites = ipow(ell, d);
  if (r.n_sites < 2) throw RangeError("equivalence error needs at least two sites");
  r.S = static_cast<int>(std::lround(m * r.n_sites));
  r.rounding = r.S - m * r.n_sites;
  r.density = static_cast<double>(r.S) / r.n_sites;
  const CanonicalTable table(rate, r.n_sites, r.S);
  r.canonical = canonical_expectation(table, r.S, [&](std::int64_t k) { return rate(k); });
  r.sigma_at_density = fugacity_sigma(thermo, r.density);
  r.abs_error = std::abs(r.canonical - r.sigma_at_density);
  return r;
}

/// Exact law of the total mass on ell^d sites under the product measure with
/// density m, against two Gaussian densities in k = S0 - S:
///   centered: exp(-k^2 / (2 v n)) / sqrt(2 pi v n), v = Var(eta_0)
///   raw:      exp(-k^2 / (c2 n)) / sqrt(4 pi c2 n), c2 = E[eta_0^2] / 2
struct LltEntry {
  int ell = 0;
  int n_sites = 0;
  int S0 = 0;
  bool skipped = false;
  double variance = 0.0;
  double c2 = 0.0;
  double sup_error_centered = 0.0;
  double sup_error_raw = 0.0;
  double central_rel_error_centered = 0.0;
  double central_rel_error_raw = 0.0;
  std::string better;  // "centered" or "raw"
};

inline LltEntry canonical_mass_pmf_vs_gaussian(const RateFunction& rate, const ThermoTable& thermo, int ell, int d,
                                               double m) {
  LltEntry e;
  e.ell = ell;
  e.n_sites = ipow(ell, d);
  e.S0 = static_cast<int>(std::lround(m * e.n_sites));
  if (e.n_sites == 1) {
    e.skipped = true;
    return e;
  }
  const double lambda = fugacity_sigma(thermo, m);
  const SeriesMoments mom = series_moments(thermo, lambda);
  e.variance = mom.variance();
  e.c2 = 0.5 * mom.second;
  const double n = e.n_sites;
  const int window = static_cast<int>(std::ceil(4.0 * std::sqrt(e.variance * n))) + 1;
  const CanonicalTable table(rate, e.n_sites, e.S0 + window);
  const double log_lambda = std::log(lambda);
  const double two_pi = 2.0 * std::numbers::pi;
  for (int k = -window; k <= window; ++k) {
    const int S = e.S0 - k;
    if (S < 0) continue;
    const double exact = std::exp(S * log_lambda + table.log_z(e.n_sites, S) - n * mom.log_z);
    const double centered = std::exp(-k * k / (2.0 * e.variance * n)) / std::sqrt(two_pi * e.variance * n);
    const double raw = std::exp(-k * k / (e.c2 * n)) / std::sqrt(2.0 * two_pi * e.c2 * n);
    e.sup_error_centered = std::max(e.sup_error_centered, std::abs(exact - centered));
    e.sup_error_raw = std::max(e.sup_error_raw, std::abs(exact - raw));
    if (k == 0) {
      e.central_rel_error_centered = std::abs(centered / exact - 1.0);
      e.central_rel_error_raw = std::abs(raw / exact - 1.0);
    }
  }
  e.better = e.sup_error_centered <= e.sup_error_raw ? "centered" : "raw";
  return e;
}

/// Probability that the block mean on n sites leaves [m0, m1] under the
/// product measure with density m.
inline double mass_window_tail(const RateFunction& rate, const ThermoTable& thermo, int n_sites, double m, double m0,
                               double m1) {
  const double lambda = fugacity_sigma(thermo, m);
  const double log_zl = log_partition_z(thermo, lambda);
  const int s_hi = static_cast<int>(std::ceil(m1 * n_sites));
  const int s_max = 3 * s_hi + 60;
  const CanonicalTable table(rate, n_sites, s_max);
  const double log_lambda = std::log(lambda);
  double tail = 0.0;
  for (int S = 0; S <= s_max; ++S) {
    const double mean = static_cast<double>(S) / n_sites;
    if (mean >= m0 && mean <= m1) continue;
    tail += std::exp(S * log_lambda + table.log_z(n_sites, S) - n_sites * log_zl);
  }
  return tail;
}

}  // namespace hydrolab
