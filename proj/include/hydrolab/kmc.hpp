#pragma once

// Event-driven simulation of the zero-range process under parabolic scaling
// (generator multiplied by N^2) and of the standard (basic) coupling of two
// copies. Departure sites are drawn from Fenwick trees over per-site rates.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <ostream>
#include <span>
#include <vector>

#include "hydrolab/errors.hpp"
#include "hydrolab/fenwick.hpp"
#include "hydrolab/lattice.hpp"
#include "hydrolab/rng.hpp"
#include "hydrolab/thermo.hpp"

namespace hydrolab {

enum class EventTag { single, joint, eta_only, zeta_only };

inline const char* to_string(EventTag tag) {
  switch (tag) {
    case EventTag::single: return "single";
    case EventTag::joint: return "joint";
    case EventTag::eta_only: return "eta-only";
    case EventTag::zeta_only: return "zeta-only";
  }
  return "?";
}

struct Event {
  double t = 0.0;
  std::size_t from = 0;
  std::size_t to = 0;
  EventTag tag = EventTag::single;
};

inline void write_event_header(std::ostream& out) { out << "t,site_from,site_to,tag\n"; }

/// Non-integral rates accumulate rounding in the trees; rebuild this often.
inline constexpr std::uint64_t kRebuildInterval = 1u << 20;

/// One ZRP replica: configuration, macroscopic clock, rate index, random stream.
struct SimState {
  SimState(Configuration c, RngStream r, double t0 = 0.0) : config(std::move(c)), time(t0), rng(std::move(r)) {
    rate_index.reset(config.size());
    for (std::size_t x = 0; x < config.size(); ++x) rate_index.set(x, config.site_rate(x));
  }

  Configuration config;
  double time = 0.0;
  FenwickTree rate_index;
  RngStream rng;
  std::uint64_t events = 0;

  void refresh(std::size_t x) { rate_index.set(x, config.site_rate(x)); }
};

namespace detail {

inline double speedup(const Torus& t) { return static_cast<double>(t.side()) * t.side(); }

/// Applies one jump at the already-advanced clock.
inline Event apply_single(SimState& s, const TransitionKernel& kernel, double total) {
  const std::size_t x = s.rate_index.find(s.rng.uniform() * total);
  const std::size_t y = s.config.torus().shift(x, kernel.sample(s.rng.uniform()));
  s.config.apply_jump(x, y);
  s.refresh(x);
  s.refresh(y);
  if (++s.events % kRebuildInterval == 0 && !s.config.rate().integral_valued()) {
    s.rate_index.rebuild();
    s.config.recompute_caches();
  }
  return {s.time, x, y, EventTag::single};
}

}  // namespace detail

/// Advances the clock by Exp(N^2 sum_x g(eta_x)), then moves one particle.
inline Event step(SimState& s, const TransitionKernel& kernel) {
  const double total = s.config.total_rate();
  if (!(total > 0.0)) throw FrozenError(s.events);
  s.time += s.rng.exponential(detail::speedup(s.config.torus()) * total);
  return detail::apply_single(s, kernel, total);
}

using SnapshotObserver = std::function<void(double, const Configuration&)>;
using EventSink = std::function<void(const Event&)>;

/// Runs until t_end. The observer sees the configuration at every snapshot
/// time in [time, t_end]. The pending jump that would cross t_end is
/// discarded, which leaves the law unchanged by memorylessness, so the final
/// time is exactly t_end. Returns the number of events performed.
inline std::uint64_t run_until(SimState& s, const TransitionKernel& kernel, double t_end,
                               std::span<const double> snapshot_times = {}, const SnapshotObserver& observer = {},
                               const EventSink& sink = {}) {
  if (t_end < s.time) throw ValidationError("t_end", "t_end precedes the current time");
  std::vector<double> snaps(snapshot_times.begin(), snapshot_times.end());
  std::sort(snaps.begin(), snaps.end());
  std::size_t next = 0;
  auto emit_upto = [&](double t, bool inclusive) {
    while (next < snaps.size() && snaps[next] <= t_end && (inclusive ? snaps[next] <= t : snaps[next] < t)) {
      if (observer) observer(snaps[next], s.config);
      ++next;
    }
  };
  emit_upto(s.time, true);
  if (t_end == s.time) return 0;
  const double speedup = detail::speedup(s.config.torus());
  std::uint64_t done = 0;
  for (;;) {
    const double total = s.config.total_rate();
    if (!(total > 0.0)) throw FrozenError(done);
    const double t_next = s.time + s.rng.exponential(speedup * total);
    if (t_next > t_end) {
      emit_upto(t_end, true);
      s.time = t_end;
      return done;
    }
    emit_upto(t_next, false);
    s.time = t_next;
    const Event e = detail::apply_single(s, kernel, total);
    ++done;
    if (sink) sink(e);
  }
}

/// Two ZRPs under the standard coupling. Three rate indexes hold, per site,
/// the joint rate min(g(eta_x), g(zeta_x)) and the two excesses.
struct CoupledState {
  CoupledState(Configuration e, Configuration z, RngStream r, double t0 = 0.0)
      : eta(std::move(e)), zeta(std::move(z)), time(t0), rng(std::move(r)) {
    if (!(eta.torus() == zeta.torus())) throw ShapeError("coupled configurations live on different tori");
    joint.reset(eta.size());
    eta_excess.reset(eta.size());
    zeta_excess.reset(eta.size());
    for (std::size_t x = 0; x < eta.size(); ++x) refresh(x);
    l1 = l1_distance(eta, zeta);
  }

  Configuration eta;
  Configuration zeta;
  double time = 0.0;
  FenwickTree joint;
  FenwickTree eta_excess;
  FenwickTree zeta_excess;
  RngStream rng;
  std::uint64_t events = 0;
  std::int64_t l1 = 0;  // maintained incrementally

  void refresh(std::size_t x) {
    const double ge = eta.site_rate(x);
    const double gz = zeta.site_rate(x);
    const double m = std::min(ge, gz);
    joint.set(x, m);
    eta_excess.set(x, ge - m);
    zeta_excess.set(x, gz - m);
  }

  double total_rate() const { return joint.total() + eta_excess.total() + zeta_excess.total(); }
};

namespace detail {

inline Event apply_coupled(CoupledState& s, const TransitionKernel& kernel, double tj, double te, double tz) {
  const double total = tj + te + tz;
  const double u = s.rng.uniform() * total;
  EventTag tag;
  std::size_t x;
  if (u < tj || (te == 0.0 && tz == 0.0)) {
    tag = EventTag::joint;
    x = s.joint.find(std::min(u, tj));
  } else if (u < tj + te || tz == 0.0) {
    tag = EventTag::eta_only;
    x = s.eta_excess.find(std::min(u - tj, te));
  } else {
    tag = EventTag::zeta_only;
    x = s.zeta_excess.find(std::min(u - tj - te, tz));
  }
  const std::size_t y = s.eta.torus().shift(x, kernel.sample(s.rng.uniform()));

  auto local = [&](std::size_t site) { return std::abs(s.eta[site] - s.zeta[site]); };
  const std::int64_t before = x == y ? 0 : local(x) + local(y);
  if (tag != EventTag::zeta_only) s.eta.apply_jump(x, y);
  if (tag != EventTag::eta_only) s.zeta.apply_jump(x, y);
  const std::int64_t after = x == y ? 0 : local(x) + local(y);
  s.l1 += after - before;
  s.refresh(x);
  s.refresh(y);
  if (++s.events % kRebuildInterval == 0 && !s.eta.rate().integral_valued()) {
    s.joint.rebuild();
    s.eta_excess.rebuild();
    s.zeta_excess.rebuild();
    s.eta.recompute_caches();
    s.zeta.recompute_caches();
  }
  return {s.time, x, y, tag};
}

}  // namespace detail

/// One event of the coupled generator: joint jumps at rate N^2 min(g(eta_x),
/// g(zeta_x)) p(y - x), single-copy jumps at the excess rates.
inline Event coupled_step(CoupledState& s, const TransitionKernel& kernel) {
  const double tj = s.joint.total();
  const double te = s.eta_excess.total();
  const double tz = s.zeta_excess.total();
  const double total = tj + te + tz;
  if (!(total > 0.0)) throw FrozenError(s.events);
  s.time += s.rng.exponential(detail::speedup(s.eta.torus()) * total);
  return detail::apply_coupled(s, kernel, tj, te, tz);
}

using CoupledObserver = std::function<void(double, const CoupledState&)>;

/// Coupled analogue of run_until with the same snapshot and stopping rules.
inline std::uint64_t run_coupled_until(CoupledState& s, const TransitionKernel& kernel, double t_end,
                                       std::span<const double> checkpoints = {}, const CoupledObserver& observer = {},
                                       const std::function<void(const Event&, const CoupledState&)>& sink = {}) {
  if (t_end < s.time) throw ValidationError("t_end", "t_end precedes the current time");
  std::vector<double> snaps(checkpoints.begin(), checkpoints.end());
  std::sort(snaps.begin(), snaps.end());
  std::size_t next = 0;
  auto emit_upto = [&](double t, bool inclusive) {
    while (next < snaps.size() && snaps[next] <= t_end && (inclusive ? snaps[next] <= t : snaps[next] < t)) {
      if (observer) observer(snaps[next], s);
      ++next;
    }
  };
  emit_upto(s.time, true);
  if (t_end == s.time) return 0;
  const double speedup = detail::speedup(s.eta.torus());
  std::uint64_t done = 0;
  for (;;) {
    const double tj = s.joint.total();
    const double te = s.eta_excess.total();
    const double tz = s.zeta_excess.total();
    const double total = tj + te + tz;
    if (!(total > 0.0)) throw FrozenError(done);
    const double t_next = s.time + s.rng.exponential(speedup * total);
    if (t_next > t_end) {
      emit_upto(t_end, true);
      s.time = t_end;
      return done;
    }
    emit_upto(t_next, false);
    s.time = t_next;
    const Event e = detail::apply_coupled(s, kernel, tj, te, tz);
    ++done;
    if (sink) sink(e, s);
  }
}

/// J(eta, zeta) in d = 1: the torus distance between the two sites where the
/// configurations differ by one particle; 0 when equal.
inline int jump_distance_1d(const Configuration& eta, const Configuration& zeta) {
  if (!(eta.torus() == zeta.torus())) throw ShapeError("jump distance on different tori");
  if (eta.torus().dim() != 1) throw ShapeError("jump distance is defined in d = 1 only");
  std::size_t plus = eta.size(), minus = eta.size();
  int nonzero = 0;
  for (std::size_t x = 0; x < eta.size(); ++x) {
    const std::int64_t diff = zeta[x] - eta[x];
    if (diff == 0) continue;
    ++nonzero;
    if (diff == 1 && plus == eta.size())
      plus = x;
    else if (diff == -1 && minus == eta.size())
      minus = x;
    else
      throw NotOneJumpError("configurations differ by more than one jump");
  }
  if (nonzero == 0) return 0;
  if (nonzero != 2 || plus == eta.size() || minus == eta.size())
    throw NotOneJumpError("configurations differ by more than one jump");
  return eta.torus().distance(plus, minus);
}

/// Product sampler for the local Gibbs measure: site x is drawn from
/// n_{sigma(rho_x)} by inverse CDF. Pmfs are shared between sites with equal
/// density, and the sampler is immutable, so replicas can share one.
class LocalGibbsSampler {
 public:
  LocalGibbsSampler(const ThermoTable& thermo, Torus torus, std::span<const double> site_density)
      : torus_(torus), rate_(thermo.rate()) {
    if (site_density.size() != torus.sites()) throw ShapeError("density grid does not match the torus");
    std::map<double, std::uint32_t> seen;
    site_law_.reserve(site_density.size());
    for (double rho : site_density) {
      if (!(rho >= 0.0)) throw ValidationError("profile", "densities must be non-negative");
      auto [it, fresh] = seen.try_emplace(rho, static_cast<std::uint32_t>(pmfs_.size()));
      if (fresh) pmfs_.push_back(one_site_pmf(thermo, fugacity_sigma(thermo, rho)));
      site_law_.push_back(it->second);
    }
  }

  Configuration sample(RngStream& rng) const {
    std::vector<std::int64_t> eta(site_law_.size());
    for (std::size_t x = 0; x < eta.size(); ++x) eta[x] = pmfs_[site_law_[x]].sample(rng.uniform_open());
    return Configuration(torus_, std::move(eta), rate_);
  }

  const OneSitePmf& law(std::size_t site) const { return pmfs_[site_law_[site]]; }

 private:
  Torus torus_;
  RateFunction rate_;
  std::vector<OneSitePmf> pmfs_;
  std::vector<std::uint32_t> site_law_;
};

inline Configuration sample_local_gibbs(std::span<const double> site_density, const ThermoTable& thermo, Torus torus,
                                        RngStream& rng) {
  return LocalGibbsSampler(thermo, torus, site_density).sample(rng);
}

}  // namespace hydrolab
