#pragma once

// Subcommand driver. A run merges a flat JSON config with command-line flags
// (flags win), validates every key before computing, buffers all outputs in
// memory and only then writes them under <out>/<subcommand>-<hash>/, where
// the hash covers the subcommand, tool version and the validated config.
// Worker count and output root are excluded from the hash.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <locale>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hydrolab/analysis.hpp"
#include "hydrolab/ensembles.hpp"
#include "hydrolab/experiment.hpp"
#include "hydrolab/kmc.hpp"
#include "hydrolab/lattice.hpp"
#include "hydrolab/parallel.hpp"
#include "hydrolab/pde.hpp"
#include "hydrolab/thermo.hpp"

namespace hydrolab::cli {

using json = nlohmann::json;

inline constexpr const char* kVersion = "0.1.0";

/// Shortest round-trip decimal; never consults the locale.
inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <std::integral I>
std::string fmt(I v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) out[static_cast<std::size_t>(i)] = digits[v & 0xF];
  return out;
}

struct KeySpec {
  std::string name;
  std::string help;
  std::string fallback;  // empty: no default
  bool required = false;
};

/// Raw string values per key, parsed on demand. Every successful read is
/// echoed, typed, into the manifest config.
class Params {
 public:
  Params(std::map<std::string, std::string> raw, const std::vector<KeySpec>& keys) : raw_(std::move(raw)) {
    for (const auto& k : keys)
      if (!raw_.count(k.name) && !k.fallback.empty()) raw_[k.name] = k.fallback;
  }

  bool has(const std::string& key) const { return raw_.count(key) > 0; }
  const json& echo() const { return echo_; }

  std::string word(const std::string& key) {
    const std::string v = text(key);
    if (v.empty()) throw ValidationError(key, "empty value");
    echo_[key] = v;
    return v;
  }

  double real(const std::string& key) {
    const double v = parse_real(key, text(key));
    echo_[key] = v;
    return v;
  }

  std::int64_t integer(const std::string& key) {
    const std::int64_t v = parse_int(key, text(key));
    echo_[key] = v;
    return v;
  }

  bool flag(const std::string& key) {
    const std::string v = text(key);
    bool b;
    if (v == "true" || v == "1")
      b = true;
    else if (v == "false" || v == "0")
      b = false;
    else
      throw ValidationError(key, "expected true or false, got '" + v + "'");
    echo_[key] = b;
    return b;
  }

  /// "a,b,c" or the inclusive range "start:stop:step".
  std::vector<double> reals(const std::string& key) {
    const std::string v = text(key);
    std::vector<double> out;
    if (v.find(':') != std::string::npos) {
      const auto parts = split(v, ':');
      if (parts.size() != 3) throw ValidationError(key, "range must be start:stop:step");
      const double a = parse_real(key, parts[0]), b = parse_real(key, parts[1]), h = parse_real(key, parts[2]);
      if (!(h > 0.0) || b < a) throw ValidationError(key, "range needs step > 0 and stop >= start");
      const double count = std::floor((b - a) / h + 1e-9);
      if (count > 1e7) throw ValidationError(key, "range has too many points");
      for (std::int64_t i = 0; i <= static_cast<std::int64_t>(count); ++i) out.push_back(a + static_cast<double>(i) * h);
    } else {
      for (const auto& part : split(v, ',')) out.push_back(parse_real(key, part));
    }
    if (out.empty()) throw ValidationError(key, "empty list");
    echo_[key] = out;
    return out;
  }

  std::vector<std::int64_t> integers(const std::string& key) {
    const std::string v = text(key);
    std::vector<std::int64_t> out;
    for (const auto& part : split(v, ',')) out.push_back(parse_int(key, part));
    if (out.empty()) throw ValidationError(key, "empty list");
    echo_[key] = out;
    return out;
  }

 private:
  std::string text(const std::string& key) const {
    const auto it = raw_.find(key);
    if (it == raw_.end()) throw ValidationError(key, "missing required key");
    return it->second;
  }

  static std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
      if (c == sep) {
        out.push_back(cur);
        cur.clear();
      } else if (c != ' ') {
        cur += c;
      }
    }
    out.push_back(cur);
    return out;
  }

  static double parse_real(const std::string& key, const std::string& s) {
    double v = 0.0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || r.ec != std::errc{} || r.ptr != s.data() + s.size() || !std::isfinite(v))
      throw ValidationError(key, "expected a finite number, got '" + s + "'");
    return v;
  }

  static std::int64_t parse_int(const std::string& key, const std::string& s) {
    std::int64_t v = 0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || r.ec != std::errc{} || r.ptr != s.data() + s.size())
      throw ValidationError(key, "expected an integer, got '" + s + "'");
    return v;
  }

  std::map<std::string, std::string> raw_;
  json echo_ = json::object();
};

struct Output {
  std::string name;
  std::string content;
};

struct RunContext {
  int threads = 1;
  std::ostream* log = &std::cerr;
};

using Runner = std::function<std::vector<Output>(Params&, const RunContext&)>;

struct Subcommand {
  std::string name;
  std::string help;
  std::vector<KeySpec> keys;
  Runner run;
};

namespace detail {

/// Locale-independent text stream.
inline std::ostringstream text_stream() {
  std::ostringstream o;
  o.imbue(std::locale::classic());
  return o;
}

inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

inline void require(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw ValidationError(key, what);
}

inline int read_dim(Params& p) {
  const auto d = p.integer("dim");
  require(d == 1 || d == 2, "dim", "dimension must be 1 or 2");
  return static_cast<int>(d);
}

inline int read_positive(Params& p, const std::string& key, std::int64_t lo, std::int64_t hi) {
  const auto v = p.integer(key);
  require(v >= lo && v <= hi, key, "must lie in [" + fmt(lo) + ", " + fmt(hi) + "]");
  return static_cast<int>(v);
}

inline std::uint64_t read_count(Params& p, const std::string& key, std::int64_t lo, std::int64_t hi) {
  const auto v = p.integer(key);
  require(v >= lo && v <= hi, key, "must lie in [" + fmt(lo) + ", " + fmt(hi) + "]");
  return static_cast<std::uint64_t>(v);
}

inline std::uint64_t read_seed(Params& p) {
  const auto v = p.integer("seed");
  require(v >= 0, "seed", "seed must be non-negative");
  return static_cast<std::uint64_t>(v);
}

inline std::vector<double> read_times(Params& p) {
  auto t = p.reals("times");
  for (double v : t) require(v >= 0.0, "times", "snapshot times must be non-negative");
  std::sort(t.begin(), t.end());
  t.erase(std::unique(t.begin(), t.end()), t.end());
  return t;
}

/// "nn" or a file of lines "dx p" (d = 1) / "dx dy p" (d = 2).
inline TransitionKernel read_kernel(Params& p, int d) {
  const std::string spec = p.word("kernel");
  if (spec == "nn") return nearest_neighbour_kernel(d);
  std::ifstream in(spec);
  require(static_cast<bool>(in), "kernel", "kernel must be 'nn' or a readable file, got '" + spec + "'");
  std::vector<KernelJump> support;
  std::string line;
  while (std::getline(in, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    ls.imbue(std::locale::classic());
    KernelJump j;
    if (!(ls >> j.dx[0])) continue;
    if (d == 2 && !(ls >> j.dx[1])) throw ValidationError("kernel", "malformed kernel line '" + line + "'");
    if (!(ls >> j.p)) throw ValidationError("kernel", "malformed kernel line '" + line + "'");
    support.push_back(j);
  }
  return validate_kernel(d, std::move(support));
}

/// Initial density on an n^d grid in row-major order.
inline std::vector<double> read_profile(Params& p, int d, int n) {
  const std::string kind = p.word("profile");
  const double rho = p.real("rho");
  const std::size_t count = d == 1 ? static_cast<std::size_t>(n) : static_cast<std::size_t>(n) * n;
  std::vector<double> out;
  if (kind == "constant") {
    require(rho > 0.0, "rho", "density must be positive");
    out.assign(count, rho);
  } else if (kind == "cosine") {
    const double a = p.real("amplitude");
    const double delta = p.real("delta");
    require(delta > 0.0, "delta", "positivity floor must be positive");
    require(a >= 0.0, "amplitude", "amplitude must be non-negative");
    require(rho - a >= delta, "amplitude", "cosine profile needs rho - amplitude >= delta");
    out = cosine_profile(d, n, rho, a).values;
  } else {
    std::ifstream in(kind);
    require(static_cast<bool>(in), "profile", "profile must be constant, cosine or a readable file, got '" + kind + "'");
    in.imbue(std::locale::classic());
    double v;
    while (in >> v) {
      require(std::isfinite(v) && v >= 0.0, "profile", "profile values must be finite and non-negative");
      out.push_back(v);
    }
    require(in.eof(), "profile", "non-numeric entry in profile file");
    require(out.size() == count, "profile", "profile file must hold " + fmt(count) + " values");
  }
  return out;
}

inline json matrix_json(const DiffusionMatrix& A, int d) {
  if (d == 1) return json::array({json::array({A[0][0]})});
  return json::array({json::array({A[0][0], A[0][1]}), json::array({A[1][0], A[1][1]})});
}

inline json fit_json(const std::vector<double>& x, const std::vector<double>& y) {
  try {
    const RateFit f = fit_rate(x, y);
    return {{"slope", f.slope}, {"intercept", f.intercept}, {"r2", f.r2}};
  } catch (const DegenerateFitError&) {
    return nullptr;
  }
}

// ---------------------------------------------------------------------------
// Runners

inline std::vector<Output> run_thermo(Params& p, const RunContext& ctx) {
  const RateFunction rate = RateFunction::from_name(p.word("rate"));
  const auto grid = p.reals("lambda");
  for (double v : grid) require(v >= 0.0, "lambda", "grid values must be non-negative");
  const int k_max = read_positive(p, "k_max", 16, 1 << 20);

  const ThermoTable table(rate, k_max);
  auto csv = text_stream();
  csv << "lambda,Z,R,sigma\n";
  bool warned = false;
  for (double x : grid) {
    std::string z = "nan", r = "nan";
    try {
      z = fmt(partition_z(table, x));
      r = fmt(mean_density(table, x));
    } catch (const TruncationError&) {
      if (!warned) *ctx.log << "warning: series not certified at lambda=" << fmt(x) << " and beyond; Z and R written as nan\n";
      warned = true;
    }
    csv << fmt(x) << ',' << z << ',' << r << ',' << fmt(fugacity_sigma(table, x)) << '\n';
  }
  json meta{{"rate", rate.name()}, {"k_max", k_max}, {"n0", rate.n0()}, {"c_g", rate.c_g()},
            {"satisfies_gap", rate.satisfies_gap()}};
  const double rho_max = *std::max_element(grid.begin(), grid.end());
  if (rho_max > 0.0) {
    const auto b = estimate_sigma_slopes(table, rho_max);
    meta["sigma_slope_min"] = b.min_slope;
    meta["sigma_slope_max"] = b.max_slope;
    meta["lambda_est"] = b.lambda_est;
    meta["rho_max"] = rho_max;
  }
  return {{"thermo.csv", csv.str()}, {"thermo.json", dump(meta)}};
}

inline std::vector<Output> run_simulate(Params& p, const RunContext&) {
  const RateFunction rate = RateFunction::from_name(p.word("rate"));
  const int d = read_dim(p);
  const int N = read_positive(p, "N", 2, 1 << 14);
  const TransitionKernel kernel = read_kernel(p, d);
  const auto density = read_profile(p, d, N);
  const auto times = read_times(p);
  const std::uint64_t seed = read_seed(p);
  const bool events = p.flag("events");

  const ThermoTable thermo(rate);
  const Torus torus(d, N);
  const LocalGibbsSampler sampler(thermo, torus, density);
  RngStream rng(seed, 0);
  SimState s(sampler.sample(rng), std::move(rng));
  std::vector<Output> files;
  json index = json::array();
  auto log = text_stream();
  if (events) write_event_header(log);
  EventSink sink;
  if (events)
    sink = [&](const Event& e) {
      log << fmt(e.t) << ',' << e.from << ',' << e.to << ',' << to_string(e.tag) << '\n';
    };
  const auto n = run_until(
      s, kernel, times.back(), times,
      [&](double t, const Configuration& c) {
        auto o = text_stream();
        write_snapshot(o, c);
        std::string name = "snapshot_" + fmt(files.size()) + ".csv";
        index.push_back({{"t", t}, {"file", name}, {"mass", c.total_mass()}});
        files.push_back({std::move(name), o.str()});
      },
      sink);
  if (events) files.push_back({"events.csv", log.str()});
  files.push_back({"simulate.json", dump({{"snapshots", index}, {"events", n}, {"rate", rate.name()}})});
  return files;
}

inline std::vector<Output> run_couple(Params& p, const RunContext& ctx) {
  const RateFunction rate = RateFunction::from_name(p.word("rate"));
  const int d = read_dim(p);
  const int N = read_positive(p, "N", 2, 1 << 14);
  const TransitionKernel kernel = read_kernel(p, d);
  const std::uint64_t replicas = read_count(p, "replicas", 1, 10'000'000);
  const double rho = p.real("rho");
  require(rho > 0.0, "rho", "density must be positive");
  const bool one_jump = !p.has("rho_zeta");
  const double rho_zeta = one_jump ? rho : p.real("rho_zeta");
  require(rho_zeta > 0.0, "rho_zeta", "density must be positive");
  const auto times = read_times(p);
  const std::uint64_t seed = read_seed(p);

  const ThermoTable thermo(rate);
  const Torus torus(d, N);
  const LocalGibbsSampler sample_eta(thermo, torus, std::vector<double>(torus.sites(), rho));
  const LocalGibbsSampler sample_zeta(thermo, torus, std::vector<double>(torus.sites(), rho_zeta));
  std::vector<std::string> rows(replicas);
  std::vector<std::uint64_t> events(replicas, 0), increases(replicas, 0);
  parallel_for(replicas, ctx.threads, [&](std::size_t r) {
    RngStream rng(seed, r);
    Configuration eta = sample_eta.sample(rng);
    if (one_jump && eta.total_mass() == 0) eta.set(0, 1);
    Configuration zeta = one_jump ? one_jump_partner(eta, kernel, rng) : sample_zeta.sample(rng);
    CoupledState s(std::move(eta), std::move(zeta), std::move(rng));
    auto o = text_stream();
    const auto row = [&](double t, const CoupledState& st) {
      o << r << ',' << fmt(t) << ',' << st.l1 << ',';
      if (one_jump && d == 1) o << jump_distance_1d(st.eta, st.zeta);
      o << '\n';
    };
    row(0.0, s);
    std::int64_t last = s.l1;
    run_coupled_until(s, kernel, times.back(), times, row, [&](const Event&, const CoupledState& st) {
      ++events[r];
      if (st.l1 > last) ++increases[r];
      last = st.l1;
    });
    rows[r] = o.str();
  });
  std::string csv = "replica,t,l1,jump_distance\n";
  for (const auto& r : rows) csv += r;
  json meta{{"events", std::accumulate(events.begin(), events.end(), std::uint64_t{0})},
            {"l1_increases", std::accumulate(increases.begin(), increases.end(), std::uint64_t{0})},
            {"start", one_jump ? "one_jump" : "independent"}};
  return {{"coupling.csv", std::move(csv)}, {"couple.json", dump(meta)}};
}

inline std::vector<Output> run_pde(Params& p, const RunContext&) {
  const RateFunction rate = RateFunction::from_name(p.word("rate"));
  const int d = read_dim(p);
  const int M = read_positive(p, "M", 3, d == 1 ? 1 << 16 : 2048);
  const TransitionKernel kernel = read_kernel(p, d);
  MacroProfile f0{d, M, read_profile(p, d, M), 0.0};
  const auto times = read_times(p);

  const ThermoTable thermo(rate);
  const SigmaTable sigma = make_sigma_table(thermo, f0.max());
  const PdeRun run = solve(f0, kernel.A, sigma, times.back(), times);
  auto csv = text_stream();
  json snaps = json::array();
  for (const auto& s : run.snapshots) {
    csv << "# t=" << fmt(s.t) << '\n' << (d == 1 ? "u,f\n" : "u,v,f\n");
    for (std::size_t i = 0; i < s.profile.values.size(); ++i) {
      if (d == 1) {
        csv << fmt(static_cast<double>(i) / M);
      } else {
        csv << fmt(static_cast<double>(i / static_cast<std::size_t>(M)) / M) << ','
            << fmt(static_cast<double>(i % static_cast<std::size_t>(M)) / M);
      }
      csv << ',' << fmt(s.profile.values[i]) << '\n';
    }
    snaps.push_back({{"t", s.t},
                     {"mass", s.profile.mean()},
                     {"min", s.profile.min()},
                     {"max", s.profile.max()},
                     {"sup_deviation", s.sup_deviation},
                     {"free_energy", gibbs_relative_entropy(s.profile.values, f0.mean(), thermo)}});
  }
  json meta{{"rate", rate.name()}, {"dim", d},          {"M", M},           {"dt", run.dt},
            {"steps", run.steps},  {"cfl_ratio", run.cfl_ratio}, {"A", matrix_json(kernel.A, d)}, {"snapshots", snaps}};
  return {{"profiles.csv", csv.str()}, {"pde.json", dump(meta)}};
}

inline std::vector<Output> run_hydro_cmd(Params& p, const RunContext& ctx) {
  HydroConfig cfg;
  cfg.rate = RateFunction::from_name(p.word("rate"));
  cfg.dim = read_dim(p);
  cfg.sizes.clear();
  for (auto n : p.integers("N")) {
    require(n >= 4 && n <= (cfg.dim == 1 ? 1 << 14 : 1024), "N", "system sizes must lie in [4, 16384] (d = 1) or [4, 1024] (d = 2)");
    cfg.sizes.push_back(static_cast<int>(n));
  }
  require(cfg.sizes.size() >= 2, "N", "hydro needs at least two system sizes");
  cfg.replicas = read_count(p, "replicas", 2, 1'000'000);
  cfg.rho = p.real("rho");
  cfg.amplitude = p.real("amplitude");
  require(cfg.amplitude >= 0.0 && cfg.rho - cfg.amplitude > 0.0, "amplitude", "need 0 <= amplitude < rho");
  cfg.times = read_times(p);
  cfg.seed = read_seed(p);
  cfg.bootstrap = read_positive(p, "bootstrap", 0, 1'000'000);
  cfg.fourier_modes = read_positive(p, "fourier_modes", 0, 1024);
  cfg.pde_min_points = read_positive(p, "pde_min_points", 0, 1 << 14);
  cfg.threads = ctx.threads;

  const HydroSummary h = run_hydro(cfg);
  auto csv = text_stream();
  csv << "N,t,w1_mean,w1_stderr,fourier_gap_mean,fourier_gap_stderr\n";
  for (const auto& r : h.rows)
    csv << r.N << ',' << fmt(r.t) << ',' << fmt(r.w1_mean) << ',' << fmt(r.w1_stderr) << ',' << fmt(r.gap_mean) << ','
        << fmt(r.gap_stderr) << '\n';
  auto prof = text_stream();
  prof << "N,t,u,empirical,pde\n";
  for (const auto& pr : h.profiles)
    for (std::size_t i = 0; i < pr.empirical.size(); ++i)
      prof << pr.N << ',' << fmt(pr.t) << ',' << fmt(static_cast<double>(i) / pr.N) << ',' << fmt(pr.empirical[i]) << ','
           << fmt(pr.pde[i]) << '\n';
  json fit{{"sizes", h.sizes},
           {"sup_w1", h.sup_w1},
           {"strictly_decreasing", h.strictly_decreasing},
           {"decrease_confidence", h.decrease_confidence},
           {"mean_rel_mass_discrepancy", h.mean_rel_mass_discrepancy}};
  if (cfg.dim == 2) fit["sup_w1_axis"] = {h.sup_w1_axis[0], h.sup_w1_axis[1]};
  if (h.sizes.size() >= 4) {
    fit["slope"] = h.fit.slope;
    fit["intercept"] = h.fit.intercept;
    fit["r2"] = h.fit.r2;
    fit["slope_ci"] = {h.slope_ci_low, h.slope_ci_high};
  } else {
    fit["slope"] = nullptr;
  }
  return {{"hydro.csv", csv.str()}, {"fit.json", dump(fit)}, {"profiles.csv", prof.str()}};
}

inline std::vector<Output> run_ensembles(Params& p, const RunContext&) {
  const RateFunction rate = RateFunction::from_name(p.word("rate"));
  const auto ells = p.integers("ell");
  const double m = p.real("m");
  require(m > 0.0, "m", "density must be positive");
  const int d = read_dim(p);
  for (auto ell : ells) require(ell >= 1 && ipow(static_cast<int>(std::min<std::int64_t>(ell, 1 << 14)), d) <= 1 << 14, "ell", "need 1 <= ell^d <= 16384");

  const ThermoTable thermo(rate);
  auto csv = text_stream(), llt = text_stream();
  csv << "ell,n_sites,S,canonical_E,sigma_at_density,abs_error\n";
  llt << "ell,n_sites,S0,skipped,variance,c2,sup_error_centered,sup_error_raw,central_rel_error_centered,"
         "central_rel_error_raw,better\n";
  std::vector<double> xs, errs;
  for (auto ell64 : ells) {
    const int ell = static_cast<int>(ell64);
    const auto e = equivalence_error(rate, thermo, ell, d, m);
    csv << e.ell << ',' << e.n_sites << ',' << e.S << ',' << fmt(e.canonical) << ',' << fmt(e.sigma_at_density) << ','
        << fmt(e.abs_error) << '\n';
    xs.push_back(ell);
    errs.push_back(e.abs_error);
    const auto g = canonical_mass_pmf_vs_gaussian(rate, thermo, ell, d, m);
    llt << g.ell << ',' << g.n_sites << ',' << g.S0 << ',' << (g.skipped ? 1 : 0) << ',' << fmt(g.variance) << ','
        << fmt(g.c2) << ',' << fmt(g.sup_error_centered) << ',' << fmt(g.sup_error_raw) << ','
        << fmt(g.central_rel_error_centered) << ',' << fmt(g.central_rel_error_raw) << ',' << g.better << '\n';
  }
  json meta{{"rate", rate.name()}, {"dim", d}, {"m", m}, {"fit", fit_json(xs, errs)}};
  return {{"ensembles.csv", csv.str()}, {"llt.csv", llt.str()}, {"ensembles.json", dump(meta)}};
}

inline std::vector<Output> run_rwreturn(Params& p, const RunContext& ctx) {
  const int d = read_dim(p);
  const int max_exp = read_positive(p, "max_exp", 0, 30);
  const std::uint64_t replicas = read_count(p, "replicas", 1, 100'000'000);
  const std::uint64_t seed = read_seed(p);
  const int fit_from = read_positive(p, "fit_from_exp", 0, 30);

  const SurvivalCurve c = rw_no_return(d, max_exp, replicas, seed, ctx.threads, fit_from);
  auto csv = text_stream();
  csv << "n,survival\n";
  for (std::size_t k = 0; k < c.steps.size(); ++k) csv << c.steps[k] << ',' << fmt(c.survival[k]) << '\n';
  json meta{{"dim", d}, {"fit_from_exp", fit_from}, {"max_rel_residual", c.max_rel_residual}};
  if (d == 1)
    meta["slope"] = c.slope;
  else
    meta["log_coefficient"] = c.log_coefficient;
  return {{"survival.csv", csv.str()}, {"rwreturn.json", dump(meta)}};
}

inline std::vector<Output> run_jumps(Params& p, const RunContext& ctx) {
  const double g1 = p.real("g1");
  const double g2 = p.real("g2");
  require(g1 > 0.0 && g2 >= g1, "g2", "need 0 < g1 <= g2");
  const double beta = p.real("beta");
  require(beta > 0.0, "beta", "beta must be positive");
  const auto horizons = p.reals("tN2");
  for (double h : horizons) require(h > 0.0, "tN2", "horizons must be positive");
  const std::uint64_t replicas = read_count(p, "replicas", 1, 100'000'000);
  const std::uint64_t seed = read_seed(p);
  const std::string mode_name = p.word("mode");
  require(mode_name == "constant_min" || mode_name == "uniform", "mode", "mode must be constant_min or uniform");
  const JumpRateMode mode = mode_name == "uniform" ? JumpRateMode::uniform : JumpRateMode::constant_min;

  auto csv = text_stream();
  csv << "tN2,beta,threshold,replicas,hits,tail,chernoff_bound\n";
  for (double h : horizons) {
    const auto r = jump_count_tail(g1, g2, beta, h, replicas, seed, mode, ctx.threads);
    csv << fmt(h) << ',' << fmt(beta) << ',' << fmt(r.threshold) << ',' << r.replicas << ',' << r.hits << ',' << fmt(r.tail)
        << ',' << fmt(chernoff_bound(g1, beta, h)) << '\n';
  }
  return {{"jumps.csv", csv.str()}};
}

}  // namespace detail

inline const std::vector<Subcommand>& subcommands() {
  const KeySpec rate{"rate", "jump rate: linear, indicator, piecewise, or a file of 'k g(k)' pairs", "", true};
  const KeySpec dim{"dim", "lattice dimension, 1 or 2", "1"};
  const KeySpec seed{"seed", "root seed; replica r uses stream r", "1"};
  const KeySpec kernel{"kernel", "transition kernel: nn, or a file of 'dx [dy] p' lines", "nn"};
  const KeySpec profile{"profile", "initial density: constant, cosine, or a file of values in row-major order", "cosine"};
  const KeySpec rho{"rho", "base density", "1"};
  const KeySpec amplitude{"amplitude", "cosine amplitude a; rho + (a/d) sum_i cos(2 pi u_i)", "0.5"};
  const KeySpec delta{"delta", "positivity floor required of the cosine profile", "0.001"};
  const KeySpec times_req{"times", "snapshot times in macroscopic units (list a,b,c or range start:stop:step)", "", true};
  static const std::vector<Subcommand> subs{
      {"thermo",
       "one-site thermodynamics: Z, R at fugacity lambda and sigma at density lambda",
       {rate,
        {"lambda", "grid (list a,b,c or range start:stop:step)", "", true},
        {"k_max", "series truncation cap", "512"}},
       detail::run_thermo},
      {"simulate",
       "one trajectory of the zero-range process from a local Gibbs state",
       {rate,
        dim,
        {"N", "torus side length", "", true},
        kernel,
        profile,
        rho,
        amplitude,
        delta,
        times_req,
        seed,
        {"events", "also write the event log (true/false)", "false"}},
       detail::run_simulate},
      {"couple",
       "basic coupling runs; l1 distance and d = 1 jump distance at checkpoints",
       {rate,
        dim,
        {"N", "torus side length", "", true},
        kernel,
        {"replicas", "number of coupled pairs", "100"},
        rho,
        {"rho_zeta", "density of an independent second copy (default: one-jump partner)", ""},
        times_req,
        seed},
       detail::run_couple},
      {"pde",
       "explicit finite differences for the hydrodynamic equation on the unit torus",
       {rate, dim, {"M", "grid points per axis", "", true}, kernel, profile, rho, amplitude, delta, times_req},
       detail::run_pde},
      {"hydro",
       "particle system against the PDE: W1 and Fourier gaps per size and time",
       {rate,
        dim,
        {"N", "system sizes (list)", "", true},
        {"replicas", "replicas per size", "200"},
        rho,
        amplitude,
        {"times", "snapshot times (list or range)", "0.01,0.05,0.1"},
        seed,
        {"bootstrap", "bootstrap resamples (0 disables)", "1000"},
        {"fourier_modes", "Fourier test functions per snapshot", "8"},
        {"pde_min_points", "minimum PDE grid points per axis (0: 256 in d = 1, 96 in d = 2)", "0"}},
       detail::run_hydro_cmd},
      {"ensembles",
       "canonical vs grand-canonical expectation of g on blocks of side ell",
       {rate, {"ell", "block sides (list)", "", true}, {"m", "density", "", true}, dim},
       detail::run_ensembles},
      {"rwreturn",
       "survival of a simple random walk started next to the origin",
       {{"dim", "walk dimension, 1 or 2", "", true},
        {"max_exp", "largest step count is 2^max_exp", "14"},
        {"replicas", "number of walks", "100000"},
        seed,
        {"fit_from_exp", "fit range starts at 2^fit_from_exp", "6"}},
       detail::run_rwreturn},
      {"jumps",
       "lower tail of the jump count over the horizon tN^2",
       {{"g1", "lower rate bound", "1"},
        {"g2", "upper rate bound (uniform mode)", "1"},
        {"beta", "threshold fraction; tail is P(#jumps <= beta tN^2)", "", true},
        {"tN2", "horizons (list or range)", "", true},
        {"replicas", "number of chains", "10000"},
        seed,
        {"mode", "rate per jump: constant_min or uniform", "constant_min"}},
       detail::run_jumps},
  };
  return subs;
}

namespace detail {

inline std::string scalar_text(const json& v, const std::string& key) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number_integer()) return fmt(v.get<std::int64_t>());
  if (v.is_number()) return fmt(v.get<double>());
  throw ValidationError(key, "expected a scalar value");
}

inline std::string config_text(const json& v, const std::string& key) {
  if (!v.is_array()) return scalar_text(v, key);
  std::string out;
  for (const auto& e : v) out += (out.empty() ? "" : ",") + scalar_text(e, key);
  return out;
}

inline std::map<std::string, std::string> read_config(const std::string& path, const Subcommand& sub) {
  std::ifstream in(path);
  require(static_cast<bool>(in), "config", "cannot read config file '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError("config", std::string("malformed JSON: ") + e.what());
  }
  require(j.is_object(), "config", "config must be a flat JSON object");
  std::map<std::string, std::string> out;
  for (const auto& [key, value] : j.items()) {
    const bool known = std::any_of(sub.keys.begin(), sub.keys.end(), [&](const KeySpec& k) { return k.name == key; });
    require(known, key, "unknown key for subcommand " + sub.name);
    out[key] = config_text(value, key);
  }
  return out;
}

}  // namespace detail

/// Runs one subcommand. Returns 0 on success, 1 on usage or validation
/// errors, 2 on numerical errors. Nothing is written unless the run succeeds.
inline int dispatch(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Zero-range process hydrodynamics toolkit. Each subcommand accepts --config FILE (flat JSON with the "
               "same keys as its flags; flags override the file). Outputs go to <out>/<subcommand>-<hash>/.",
               "hydrolab"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.footer("Environment: HYDROLAB_THREADS sets the default worker count. Exit codes: 0 ok, 1 validation, 2 numerical.");

  struct Bound {
    const Subcommand* sub = nullptr;
    CLI::App* app = nullptr;
    std::map<std::string, std::string> values;
    std::string config;
    std::string out_root = "out";
    int threads = 0;
  };
  const auto& subs = subcommands();
  std::vector<std::unique_ptr<Bound>> bound;
  for (const auto& sub : subs) {
    auto b = std::make_unique<Bound>();
    b->sub = &sub;
    b->app = app.add_subcommand(sub.name, sub.help);
    b->app->add_option("--config", b->config, "flat JSON config file");
    b->app->add_option("--out", b->out_root, "output root directory")->capture_default_str();
    b->app->add_option("--threads", b->threads, "worker count (default: HYDROLAB_THREADS, else machine parallelism)");
    for (const auto& k : sub.keys) {
      std::string help = k.help;
      if (k.required)
        help += " [required]";
      else if (!k.fallback.empty())
        help += " [default: " + k.fallback + "]";
      b->app->add_option("--" + k.name, b->values[k.name], help);
    }
    bound.push_back(std::move(b));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 1;
  }

  for (const auto& b : bound) {
    if (!b->app->parsed()) continue;
    const Subcommand& sub = *b->sub;
    try {
      std::map<std::string, std::string> raw;
      if (!b->config.empty()) raw = detail::read_config(b->config, sub);
      for (const auto& k : sub.keys)
        if (b->app->get_option("--" + k.name)->count() > 0) raw[k.name] = b->values[k.name];
      detail::require(b->threads >= 0, "threads", "worker count must be non-negative");
      detail::require(!b->out_root.empty(), "out", "output root must be non-empty");

      Params params(std::move(raw), sub.keys);
      RunContext ctx{b->threads > 0 ? b->threads : worker_count(), &err};
      std::vector<Output> files = sub.run(params, ctx);

      json manifest{{"subcommand", sub.name}, {"version", kVersion}, {"config", params.echo()}};
      const std::string hash = hex64(fnv1a64(manifest.dump()));
      manifest["manifest_hash"] = hash;
      json sums = json::object();
      for (const auto& f : files) sums[f.name] = hex64(fnv1a64(f.content));
      manifest["checksums"] = sums;

      const std::filesystem::path dir = std::filesystem::path(b->out_root) / (sub.name + "-" + hash);
      std::filesystem::create_directories(dir);
      files.push_back({"manifest.json", detail::dump(manifest)});
      for (const auto& f : files) {
        std::ofstream o(dir / f.name, std::ios::binary);
        o << f.content;
        if (!o) throw std::runtime_error("failed writing " + (dir / f.name).string());
      }
      out << dir.string() << '\n';
      return 0;
    } catch (const ValidationError& e) {
      err << "error: " << e.what() << '\n';
      return 1;
    } catch (const NumericalError& e) {
      err << "numerical error: " << e.what() << '\n';
      return 2;
    } catch (const std::exception& e) {
      err << "error: " << e.what() << '\n';
      return 2;
    }
  }
  return 1;
}

}  // namespace hydrolab::cli
