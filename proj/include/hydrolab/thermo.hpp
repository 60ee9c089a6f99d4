#pragma once

// One-site thermodynamics of the zero-range process: the rate function g,
// the partition function Z(lambda) = sum_k lambda^k / g(k)!, the density map
// R(lambda) = lambda Z'/Z, its inverse sigma (the fugacity), the one-site laws
// and their exponential moments.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "hydrolab/errors.hpp"

namespace hydrolab {

enum class RateKind { linear, indicator, piecewise, tabulated };

/// Jump rate g : N -> R_+. Cheap to copy; cached values are shared.
class RateFunction {
 public:
  static constexpr std::int64_t kCacheSize = 4096;

  static RateFunction linear() { return RateFunction(RateKind::linear, "linear", {}); }
  static RateFunction indicator() { return RateFunction(RateKind::indicator, "indicator", {}); }
  /// g(k) = k + max(0, k - 2): slope 1 then 2.
  static RateFunction piecewise() { return RateFunction(RateKind::piecewise, "piecewise", {}); }

  /// values[k] = g(k) for k = 0..K. Beyond K the last increment is repeated.
  static RateFunction tabulated(std::vector<double> values, std::string name = "tabulated") {
    if (values.size() < 2) throw ValidationError("rate", "tabulated rate needs g(0) and g(1)");
    return RateFunction(RateKind::tabulated, std::move(name), std::move(values));
  }

  /// Whitespace-separated "k g(k)" pairs, k = 0, 1, 2, ... contiguous; '#' starts a comment.
  static RateFunction from_stream(std::istream& in, std::string name = "tabulated") {
    std::vector<double> values;
    std::string line;
    while (std::getline(in, line)) {
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      std::istringstream ls(line);
      long long k = 0;
      double g = 0.0;
      while (ls >> k) {
        if (!(ls >> g)) throw ValidationError("rate", "odd number of fields in rate table");
        if (k != static_cast<long long>(values.size()))
          throw ValidationError("rate", "rate table must list k = 0, 1, 2, ... in order");
        values.push_back(g);
      }
      if (!ls.eof()) throw ValidationError("rate", "non-numeric entry in rate table");
    }
    return tabulated(std::move(values), std::move(name));
  }

  /// "linear", "indicator", "piecewise", or a path to a rate table.
  static RateFunction from_name(const std::string& name) {
    if (name == "linear") return linear();
    if (name == "indicator") return indicator();
    if (name == "piecewise") return piecewise();
    std::ifstream in(name);
    if (!in) throw ValidationError("rate", "unknown rate '" + name + "' (not a built-in name or readable file)");
    return from_stream(in, name);
  }

  double operator()(std::int64_t k) const {
    if (k < static_cast<std::int64_t>(cache_->size())) return (*cache_)[static_cast<std::size_t>(k)];
    return eval(k);
  }

  RateKind kind() const noexcept { return kind_; }
  const std::string& name() const noexcept { return name_; }
  int n0() const noexcept { return n0_; }
  double c_g() const noexcept { return c_g_; }
  double lip() const noexcept { return lip_; }
  /// Whether g(k + n0) - g(k) >= c_g > 0 holds on the cached range.
  bool satisfies_gap() const noexcept { return c_g_ > 0.0; }
  /// All values are integers, so sums of rates are exact in double.
  bool integral_valued() const noexcept { return integral_; }
  /// max_k g(k) / k, used to bound rate-weighted series tails.
  double linear_growth() const noexcept { return growth_; }

 private:
  RateFunction(RateKind kind, std::string name, std::vector<double> table)
      : kind_(kind), name_(std::move(name)), table_(std::move(table)) {
    auto cache = std::make_shared<std::vector<double>>(static_cast<std::size_t>(kCacheSize));
    for (std::int64_t k = 0; k < kCacheSize; ++k) (*cache)[static_cast<std::size_t>(k)] = eval(k);
    cache_ = std::move(cache);
    validate_and_measure();
  }

  double eval(std::int64_t k) const {
    switch (kind_) {
      case RateKind::linear:
        return static_cast<double>(k);
      case RateKind::indicator:
        return k >= 1 ? 1.0 : 0.0;
      case RateKind::piecewise:
        return static_cast<double>(k + std::max<std::int64_t>(0, k - 2));
      case RateKind::tabulated: {
        const auto last = static_cast<std::int64_t>(table_.size()) - 1;
        if (k <= last) return table_[static_cast<std::size_t>(k)];
        const double step = table_[static_cast<std::size_t>(last)] - table_[static_cast<std::size_t>(last - 1)];
        return table_[static_cast<std::size_t>(last)] + step * static_cast<double>(k - last);
      }
    }
    return 0.0;
  }

  void validate_and_measure() {
    const auto& g = *cache_;
    if (g[0] != 0.0) throw ValidationError("rate", "g(0) must be 0");
    integral_ = true;
    lip_ = 0.0;
    growth_ = 0.0;
    for (std::size_t k = 1; k < g.size(); ++k) {
      if (!std::isfinite(g[k]) || g[k] <= 0.0)
        throw ValidationError("rate", "g(" + std::to_string(k) + ") must be positive and finite");
      if (g[k] < g[k - 1]) throw ValidationError("rate", "g must be non-decreasing (fails at k=" + std::to_string(k) + ")");
      lip_ = std::max(lip_, g[k] - g[k - 1]);
      growth_ = std::max(growth_, g[k] / static_cast<double>(k));
      if (g[k] != std::floor(g[k])) integral_ = false;
    }
    // smallest offset n0 <= 16 with a positive uniform gap
    n0_ = 1;
    c_g_ = 0.0;
    for (int n0 = 1; n0 <= 16; ++n0) {
      double gap = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k + static_cast<std::size_t>(n0) < g.size(); ++k)
        gap = std::min(gap, g[k + static_cast<std::size_t>(n0)] - g[k]);
      if (gap > 0.0) {
        n0_ = n0;
        c_g_ = gap;
        break;
      }
    }
  }

  RateKind kind_;
  std::string name_;
  std::vector<double> table_;
  std::shared_ptr<const std::vector<double>> cache_;
  int n0_ = 1;
  double c_g_ = 0.0;
  double lip_ = 0.0;
  double growth_ = 0.0;
  bool integral_ = true;
};

/// Log-factorials ln g(k)! up to K_max plus the truncation policy. Immutable.
class ThermoTable {
 public:
  explicit ThermoTable(RateFunction rate, int k_max = 512, double tail_tol = 1e-14)
      : rate_(std::move(rate)), k_max_(k_max), tail_tol_(tail_tol) {
    if (k_max < 2) throw ValidationError("kmax", "K_max must be at least 2");
    if (!(tail_tol > 0.0)) throw ValidationError("tail_tol", "tail tolerance must be positive");
    log_factorials_.resize(static_cast<std::size_t>(k_max) + 1);
    log_factorials_[0] = 0.0;
    for (int k = 1; k <= k_max; ++k)
      log_factorials_[static_cast<std::size_t>(k)] = log_factorials_[static_cast<std::size_t>(k) - 1] + std::log(rate_(k));
  }

  const RateFunction& rate() const noexcept { return rate_; }
  int k_max() const noexcept { return k_max_; }
  double tail_tol() const noexcept { return tail_tol_; }
  const std::vector<double>& log_factorials() const noexcept { return log_factorials_; }
  double log_factorial(int k) const { return log_factorials_[static_cast<std::size_t>(k)]; }

 private:
  RateFunction rate_;
  int k_max_;
  double tail_tol_;
  std::vector<double> log_factorials_;
};

/// Moments of the one-site law n_lambda from a single certified series pass.
struct SeriesMoments {
  double log_z = 0.0;
  double mean = 0.0;       // E[eta] = R(lambda)
  double second = 0.0;     // E[eta^2]
  double mean_rate = 0.0;  // E[g(eta)]
  int stop = 0;            // last index summed

  double variance() const { return second - mean * mean; }
};

namespace detail {

inline void check_lambda(double lambda) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda))
    throw RangeError("fugacity must be finite and non-negative, got " + std::to_string(lambda));
}

}  // namespace detail

/// Sums the series for Z and its first two moments. Terms are accumulated by
/// the ratio recurrence with rescaling, and the tail beyond the stop index is
/// bounded geometrically using that lambda / g(k) is non-increasing.
inline SeriesMoments series_moments(const ThermoTable& table, double lambda) {
  detail::check_lambda(lambda);
  SeriesMoments out;
  if (lambda == 0.0) return out;

  const RateFunction& g = table.rate();
  const double stop_tol = 0.01 * table.tail_tol();
  const double growth = std::max(g.linear_growth(), 1.0);
  const double rescale = 1e-250;
  const double log_rescale = std::log(1e250);

  double log_scale = 0.0;
  double term = 1.0;
  double s0 = 1.0, s1 = 0.0, s2 = 0.0, sg = 0.0;
  double worst_tail = std::numeric_limits<double>::infinity();
  int k = 1;
  for (; k <= table.k_max(); ++k) {
    const double gk = g(k);
    const double dk = static_cast<double>(k);
    term *= lambda / gk;
    s0 += term;
    s1 += dk * term;
    s2 += dk * dk * term;
    sg += gk * term;
    if (s0 > 1e250) {
      term *= rescale;
      s0 *= rescale;
      s1 *= rescale;
      s2 *= rescale;
      sg *= rescale;
      log_scale += log_rescale;
    }
    worst_tail = std::numeric_limits<double>::infinity();
    const double r = lambda / g(k + 1);
    if (r >= 1.0) continue;
    const double r1 = r * (dk + 2.0) / (dk + 1.0);
    const double r2 = r1 * (dk + 2.0) / (dk + 1.0);
    if (r2 >= 1.0) continue;
    const double tail0 = term * r / (1.0 - r) / s0;
    const double tail1 = term * (dk + 1.0) * r / (1.0 - r1) / s1;
    const double tail2 = term * (dk + 1.0) * (dk + 1.0) * r / (1.0 - r2) / s2;
    worst_tail = std::max({tail0, tail1, tail2, growth * tail1 * s1 / sg});
    if (worst_tail <= stop_tol) break;
  }
  if (k > table.k_max()) {
    k = table.k_max();
    if (!(worst_tail <= table.tail_tol()))
      throw TruncationError("series tail at K_max=" + std::to_string(table.k_max()) + " not certified for lambda=" +
                            std::to_string(lambda));
  }
  out.log_z = log_scale + std::log(s0);
  out.mean = s1 / s0;
  out.second = s2 / s0;
  out.mean_rate = sg / s0;
  out.stop = k;
  return out;
}

inline double log_partition_z(const ThermoTable& table, double lambda) { return series_moments(table, lambda).log_z; }

/// Z(lambda) = sum_k lambda^k / g(k)!.
inline double partition_z(const ThermoTable& table, double lambda) { return std::exp(log_partition_z(table, lambda)); }

/// R(lambda), the mean occupation under n_lambda.
inline double mean_density(const ThermoTable& table, double lambda) { return series_moments(table, lambda).mean; }

/// dR/dlambda = Var(eta) / lambda, with the limit 1/g(1) at lambda = 0.
inline double mean_density_derivative(const ThermoTable& table, double lambda) {
  if (lambda == 0.0) return 1.0 / table.rate()(1);
  return series_moments(table, lambda).variance() / lambda;
}

/// sigma(rho): the fugacity with R(sigma) = rho. Bracket doubling from 1, then
/// bisection.
inline double fugacity_sigma(const ThermoTable& table, double rho, double tol = 1e-12) {
  if (!(rho >= 0.0) || !std::isfinite(rho)) throw RangeError("density must be finite and non-negative");
  if (!(tol > 0.0)) throw ValidationError("tol", "tolerance must be positive");
  if (rho == 0.0) return 0.0;

  // Doubling from 1; an uncertified probe becomes a ceiling and the probe
  // retreats halfway towards the last certified point.
  double lo = 0.0;
  double hi = 1.0;
  double ceiling = std::numeric_limits<double>::infinity();
  for (;;) {
    double r = 0.0;
    try {
      r = mean_density(table, hi);
    } catch (const TruncationError&) {
      ceiling = hi;
      hi = 0.5 * (lo + ceiling);
      if (ceiling - lo <= 1e-15 * ceiling)
        throw BracketError("no upper bracket for rho=" + std::to_string(rho) + " inside the certified region");
      continue;
    }
    if (r >= rho) break;
    lo = hi;
    hi = std::isinf(ceiling) ? 2.0 * hi : 0.5 * (lo + ceiling);
    if (std::isfinite(ceiling) && ceiling - lo <= 1e-15 * ceiling)
      throw BracketError("no upper bracket for rho=" + std::to_string(rho) + " inside the certified region");
  }
  const double stop = tol * 0.01;
  for (int it = 0; it < 2000; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    const double r = mean_density(table, mid);
    if (std::abs(r - rho) <= stop) return mid;
    (r < rho ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

/// The one-site law n_lambda truncated at the certified stop index.
struct OneSitePmf {
  double lambda = 0.0;
  std::vector<double> probs;
  std::vector<double> cdf;

  double mean() const {
    double m = 0.0;
    for (std::size_t k = 0; k < probs.size(); ++k) m += static_cast<double>(k) * probs[k];
    return m;
  }

  /// Inverse-CDF draw from u in (0, 1).
  std::int64_t sample(double u) const {
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    if (it == cdf.end()) --it;
    return static_cast<std::int64_t>(it - cdf.begin());
  }
};

inline OneSitePmf one_site_pmf(const ThermoTable& table, double lambda) {
  const SeriesMoments mom = series_moments(table, lambda);
  OneSitePmf pmf;
  pmf.lambda = lambda;
  if (lambda == 0.0) {
    pmf.probs = {1.0};
    pmf.cdf = {1.0};
    return pmf;
  }
  const double log_lambda = std::log(lambda);
  pmf.probs.resize(static_cast<std::size_t>(mom.stop) + 1);
  pmf.cdf.resize(pmf.probs.size());
  double acc = 0.0;
  for (int k = 0; k <= mom.stop; ++k) {
    const double p = std::exp(k * log_lambda - table.log_factorial(k) - mom.log_z);
    pmf.probs[static_cast<std::size_t>(k)] = p;
    acc += p;
    pmf.cdf[static_cast<std::size_t>(k)] = acc;
  }
  return pmf;
}

/// E_{n_lambda}[exp(theta * eta)] = Z(lambda e^theta) / Z(lambda).
inline double exp_moment(const ThermoTable& table, double lambda, double theta) {
  if (theta == 0.0) {
    detail::check_lambda(lambda);
    return 1.0;
  }
  const double shifted = lambda * std::exp(theta);
  return std::exp(log_partition_z(table, shifted) - log_partition_z(table, lambda));
}

/// Empirical range of sigma' on a density grid, from centered differences.
/// Lambda_est = min(min sigma', 1 / max sigma').
struct SigmaSlopeBounds {
  double min_slope = 0.0;
  double max_slope = 0.0;
  double lambda_est = 0.0;
};

inline SigmaSlopeBounds estimate_sigma_slopes(const ThermoTable& table, double rho_max, int points = 200) {
  SigmaSlopeBounds b{std::numeric_limits<double>::infinity(), 0.0, 0.0};
  const double h = rho_max / points;
  double prev = fugacity_sigma(table, 0.0);
  for (int i = 1; i <= points; ++i) {
    const double cur = fugacity_sigma(table, i * h);
    const double slope = (cur - prev) / h;
    b.min_slope = std::min(b.min_slope, slope);
    b.max_slope = std::max(b.max_slope, slope);
    prev = cur;
  }
  b.lambda_est = std::min(b.min_slope, 1.0 / b.max_slope);
  return b;
}

/// A map rho -> sigma(rho) with a bound on sigma' over a value range.
template <class M>
concept SigmaMap = requires(const M& m, double x) {
  { m(x) } -> std::convertible_to<double>;
  { m.derivative_bound(x, x) } -> std::convertible_to<double>;
};

struct IdentitySigma {
  double operator()(double rho) const noexcept { return rho; }
  double derivative_bound(double, double) const noexcept { return 1.0; }
};

/// sigma tabulated on a uniform grid over [0, rho_max], evaluated by cubic
/// Hermite interpolation with exact node derivatives sigma' = 1 / R'(sigma),
/// limited (Fritsch-Carlson) so the interpolant stays monotone.
class SigmaTable {
 public:
  SigmaTable(const ThermoTable& table, double rho_max, int points = 2048)
      : rho_max_(rho_max), h_(rho_max / (points - 1)) {
    if (!(rho_max > 0.0)) throw ValidationError("rho_max", "sigma table needs a positive range");
    values_.resize(static_cast<std::size_t>(points));
    slopes_.resize(values_.size());
    for (int i = 0; i < points; ++i) {
      const double rho = i * h_;
      const double lam = fugacity_sigma(table, rho);
      values_[static_cast<std::size_t>(i)] = lam;
      slopes_[static_cast<std::size_t>(i)] = 1.0 / mean_density_derivative(table, lam);
    }
    for (std::size_t i = 0; i + 1 < values_.size(); ++i) {
      const double secant = (values_[i + 1] - values_[i]) / h_;
      if (secant <= 0.0) {
        slopes_[i] = slopes_[i + 1] = 0.0;
        continue;
      }
      const double a = slopes_[i] / secant;
      const double b = slopes_[i + 1] / secant;
      const double norm = a * a + b * b;
      if (norm > 9.0) {
        const double tau = 3.0 / std::sqrt(norm);
        slopes_[i] = tau * a * secant;
        slopes_[i + 1] = tau * b * secant;
      }
    }
  }

  double rho_max() const noexcept { return rho_max_; }

  double operator()(double rho) const {
    if (!(rho >= -1e-12) || rho > rho_max_ * (1.0 + 1e-9))
      throw RangeError("density " + std::to_string(rho) + " outside the sigma table range");
    rho = std::clamp(rho, 0.0, rho_max_);
    auto i = static_cast<std::size_t>(rho / h_);
    if (i + 1 >= values_.size()) i = values_.size() - 2;
    const double t = (rho - static_cast<double>(i) * h_) / h_;
    const double t2 = t * t;
    const double t3 = t2 * t;
    return (2 * t3 - 3 * t2 + 1) * values_[i] + (t3 - 2 * t2 + t) * h_ * slopes_[i] +
           (-2 * t3 + 3 * t2) * values_[i + 1] + (t3 - t2) * h_ * slopes_[i + 1];
  }

  /// Largest node slope over the cells meeting [lo, hi].
  double derivative_bound(double lo, double hi) const {
    lo = std::clamp(lo, 0.0, rho_max_);
    hi = std::clamp(hi, 0.0, rho_max_);
    const auto first = static_cast<std::size_t>(lo / h_);
    const auto last = std::min(values_.size() - 1, static_cast<std::size_t>(hi / h_) + 1);
    double m = 0.0;
    for (std::size_t i = first; i <= last; ++i) m = std::max(m, slopes_[i]);
    return m;
  }

 private:
  double rho_max_;
  double h_;
  std::vector<double> values_;
  std::vector<double> slopes_;
};

}  // namespace hydrolab
