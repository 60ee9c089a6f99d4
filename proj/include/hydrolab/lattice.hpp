#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "hydrolab/errors.hpp"
#include "hydrolab/thermo.hpp"

namespace hydrolab {

using Displacement = std::array<int, 2>;

/// Discrete torus (Z/NZ)^d, d in {1, 2}, row-major site indexing: in d = 2
/// the site (i, j) has index i * N + j, with i the first axis.
class Torus {
 public:
  Torus(int d, int n) : d_(d), n_(n) {
    if (d != 1 && d != 2) throw ValidationError("dim", "dimension must be 1 or 2");
    if (n < 1) throw ValidationError("N", "side length must be positive");
  }

  int dim() const noexcept { return d_; }
  int side() const noexcept { return n_; }
  std::size_t sites() const noexcept { return d_ == 1 ? static_cast<std::size_t>(n_) : static_cast<std::size_t>(n_) * n_; }

  Displacement coords(std::size_t site) const {
    if (d_ == 1) return {static_cast<int>(site), 0};
    return {static_cast<int>(site / static_cast<std::size_t>(n_)), static_cast<int>(site % static_cast<std::size_t>(n_))};
  }

  std::size_t index(Displacement c) const {
    const int i = wrap(c[0]);
    if (d_ == 1) return static_cast<std::size_t>(i);
    return static_cast<std::size_t>(i) * static_cast<std::size_t>(n_) + static_cast<std::size_t>(wrap(c[1]));
  }

  std::size_t shift(std::size_t site, Displacement dx) const {
    Displacement c = coords(site);
    c[0] += dx[0];
    c[1] += dx[1];
    return index(c);
  }

  int wrap(int v) const noexcept {
    const int r = v % n_;
    return r < 0 ? r + n_ : r;
  }

  /// Lattice (edge-count) distance on the torus.
  int distance(std::size_t a, std::size_t b) const {
    const Displacement ca = coords(a);
    const Displacement cb = coords(b);
    int dist = 0;
    for (int ax = 0; ax < d_; ++ax) {
      const int diff = std::abs(ca[static_cast<std::size_t>(ax)] - cb[static_cast<std::size_t>(ax)]);
      dist += std::min(diff, n_ - diff);
    }
    return dist;
  }

  friend bool operator==(const Torus&, const Torus&) = default;

 private:
  int d_;
  int n_;
};

enum class Scaling { parabolic, hyperbolic };

struct KernelJump {
  Displacement dx{0, 0};
  double p = 0.0;
};

/// Finite-range transition function p with its drift gamma and the diffusion
/// matrix A, a_ij = 1/2 sum_x p(x) x_i x_j.
struct TransitionKernel {
  int dim = 1;
  std::vector<KernelJump> support;
  std::vector<double> cdf;
  std::array<double, 2> gamma{0.0, 0.0};
  std::array<std::array<double, 2>, 2> A{};
  bool symmetric = false;

  double trace_a() const { return dim == 1 ? A[0][0] : A[0][0] + A[1][1]; }

  const Displacement& sample(double u) const {
    std::size_t i = 0;
    while (i + 1 < cdf.size() && cdf[i] <= u) ++i;
    return support[i].dx;
  }
};

inline TransitionKernel validate_kernel(int dim, std::vector<KernelJump> support, Scaling scaling = Scaling::parabolic) {
  if (dim != 1 && dim != 2) throw ValidationError("dim", "dimension must be 1 or 2");
  if (support.empty()) throw NormalizationError("kernel support is empty");
  TransitionKernel k;
  k.dim = dim;
  double total = 0.0;
  for (auto& j : support) {
    if (dim == 1) j.dx[1] = 0;
    if (j.dx[0] == 0 && j.dx[1] == 0) throw NormalizationError("kernel puts mass on the zero displacement");
    if (!(j.p > 0.0)) throw NormalizationError("kernel probabilities must be positive");
    total += j.p;
  }
  if (std::abs(total - 1.0) > 1e-12) throw NormalizationError("kernel probabilities sum to " + std::to_string(total));
  double acc = 0.0;
  for (const auto& j : support) {
    acc += j.p;
    k.cdf.push_back(acc);
    for (int a = 0; a < 2; ++a) {
      k.gamma[static_cast<std::size_t>(a)] += j.p * j.dx[static_cast<std::size_t>(a)];
      for (int b = 0; b < 2; ++b)
        k.A[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] +=
            0.5 * j.p * j.dx[static_cast<std::size_t>(a)] * j.dx[static_cast<std::size_t>(b)];
    }
  }
  k.cdf.back() = 1.0;
  k.symmetric = true;
  for (const auto& j : support) {
    double mirror = 0.0;
    for (const auto& o : support)
      if (o.dx[0] == -j.dx[0] && o.dx[1] == -j.dx[1]) mirror += o.p;
    if (std::abs(mirror - j.p) > 1e-12) k.symmetric = false;
  }
  if (scaling == Scaling::parabolic && (k.gamma[0] != 0.0 || k.gamma[1] != 0.0))
    throw AsymmetryError("parabolic scaling needs zero mean displacement, got gamma=(" + std::to_string(k.gamma[0]) +
                         ", " + std::to_string(k.gamma[1]) + ")");
  k.support = std::move(support);
  return k;
}

/// Symmetric nearest-neighbour kernel: p = 1/(2d) on each of the 2d neighbours.
inline TransitionKernel nearest_neighbour_kernel(int dim) {
  if (dim == 1) return validate_kernel(1, {{{1, 0}, 0.5}, {{-1, 0}, 0.5}});
  return validate_kernel(2, {{{1, 0}, 0.25}, {{-1, 0}, 0.25}, {{0, 1}, 0.25}, {{0, -1}, 0.25}});
}

/// Occupation numbers on a torus with cached total mass and total rate.
class Configuration {
 public:
  Configuration(Torus torus, std::vector<std::int64_t> eta, RateFunction rate)
      : torus_(torus), eta_(std::move(eta)), rate_(std::move(rate)) {
    if (eta_.size() != torus_.sites()) throw ShapeError("configuration size does not match the torus");
    for (auto v : eta_)
      if (v < 0) throw ValidationError("eta", "occupation numbers must be non-negative");
    recompute_caches();
  }

  Configuration(Torus torus, RateFunction rate)
      : Configuration(torus, std::vector<std::int64_t>(torus.sites(), 0), std::move(rate)) {}

  const Torus& torus() const noexcept { return torus_; }
  const RateFunction& rate() const noexcept { return rate_; }
  std::span<const std::int64_t> eta() const noexcept { return eta_; }
  std::int64_t operator[](std::size_t x) const { return eta_[x]; }
  std::size_t size() const noexcept { return eta_.size(); }
  std::int64_t total_mass() const noexcept { return mass_; }
  double total_rate() const noexcept { return rate_sum_ + rate_comp_; }
  double site_rate(std::size_t x) const { return rate_(eta_[x]); }

  /// eta <- eta^{xy}: one particle moves from x to y.
  void apply_jump(std::size_t x, std::size_t y) {
    if (eta_[x] < 1) throw EmptySiteError("jump from empty site " + std::to_string(x));
    if (x == y) return;
    const std::int64_t ex = eta_[x];
    const std::int64_t ey = eta_[y];
    add_rate(rate_(ex - 1) - rate_(ex));
    add_rate(rate_(ey + 1) - rate_(ey));
    eta_[x] = ex - 1;
    eta_[y] = ey + 1;
  }

  void set(std::size_t x, std::int64_t value) {
    if (value < 0) throw ValidationError("eta", "occupation numbers must be non-negative");
    mass_ += value - eta_[x];
    add_rate(rate_(value) - rate_(eta_[x]));
    eta_[x] = value;
  }

  /// Full recomputation of the caches.
  void recompute_caches() {
    mass_ = 0;
    rate_sum_ = 0.0;
    rate_comp_ = 0.0;
    for (auto v : eta_) {
      mass_ += v;
      add_rate(rate_(v));
    }
  }

  /// Sum of g(eta_x) computed from scratch (for coherence checks).
  double recomputed_rate() const {
    double s = 0.0, c = 0.0;
    for (auto v : eta_) neumaier_add(s, c, rate_(v));
    return s + c;
  }

  friend bool operator==(const Configuration& a, const Configuration& b) {
    return a.torus_ == b.torus_ && a.eta_ == b.eta_;
  }

 private:
  static void neumaier_add(double& sum, double& comp, double v) {
    const double t = sum + v;
    if (std::abs(sum) >= std::abs(v))
      comp += (sum - t) + v;
    else
      comp += (v - t) + sum;
    sum = t;
  }
  void add_rate(double v) { neumaier_add(rate_sum_, rate_comp_, v); }

  Torus torus_;
  std::vector<std::int64_t> eta_;
  RateFunction rate_;
  std::int64_t mass_ = 0;
  double rate_sum_ = 0.0;
  double rate_comp_ = 0.0;
};

/// sum_x |a_x - b_x|.
inline std::int64_t l1_distance(const Configuration& a, const Configuration& b) {
  if (!(a.torus() == b.torus())) throw ShapeError("l1_distance on different tori");
  std::int64_t d = 0;
  for (std::size_t x = 0; x < a.size(); ++x) d += std::abs(a[x] - b[x]);
  return d;
}

/// (2l+1)^{-d} sum over the periodic cube {y : |y - x|_inf <= l} of h(eta_y).
inline double block_average(const Configuration& config, const std::function<double(std::int64_t)>& h, std::size_t center,
                            int half_width) {
  const Torus& t = config.torus();
  if (half_width < 0 || 2 * half_width + 1 > t.side()) throw ShapeError("block does not fit in the torus");
  if (center >= t.sites()) throw ShapeError("block center outside the torus");
  double sum = 0.0;
  std::size_t count = 0;
  if (t.dim() == 1) {
    for (int i = -half_width; i <= half_width; ++i, ++count) sum += h(config[t.shift(center, {i, 0})]);
  } else {
    for (int i = -half_width; i <= half_width; ++i)
      for (int j = -half_width; j <= half_width; ++j, ++count) sum += h(config[t.shift(center, {i, j})]);
  }
  return sum / static_cast<double>(count);
}

/// <alpha_eta^N, phi> = N^{-d} sum_x eta_x phi(x/N), phi given per site.
inline double empirical_pairing(const Configuration& config, std::span<const double> phi) {
  if (phi.size() != config.size()) throw ShapeError("test function grid does not match the torus");
  double s = 0.0;
  for (std::size_t x = 0; x < config.size(); ++x) s += static_cast<double>(config[x]) * phi[x];
  return s / static_cast<double>(config.size());
}

/// Snapshot CSV: header "site_index,eta".
inline void write_snapshot(std::ostream& out, const Configuration& config) {
  out << "site_index,eta\n";
  for (std::size_t x = 0; x < config.size(); ++x) out << x << ',' << config[x] << '\n';
}

inline std::vector<std::int64_t> read_snapshot(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "site_index,eta") throw ValidationError("snapshot", "missing header site_index,eta");
  std::vector<std::int64_t> eta;
  while (std::getline(in, line)) {
    if (line.empty()) break;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw ValidationError("snapshot", "malformed row '" + line + "'");
    const auto idx = std::stoull(line.substr(0, comma));
    if (idx != eta.size()) throw ValidationError("snapshot", "site indices must be contiguous from 0");
    eta.push_back(std::stoll(line.substr(comma + 1)));
  }
  return eta;
}

}  // namespace hydrolab
