#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "hydrolab/analysis.hpp"
#include "hydrolab/lattice.hpp"
#include "hydrolab/pde.hpp"

using namespace hydrolab;

namespace {

const DiffusionMatrix kHalf{{{0.5, 0.0}, {0.0, 0.0}}};
const DiffusionMatrix kQuarter2d{{{0.25, 0.0}, {0.0, 0.25}}};

double heat_amplitude(double t) { return 0.5 * std::exp(-2.0 * std::numbers::pi * std::numbers::pi * t); }

/// Claims sigma' <= 1 but is much steeper, to drive a step negative.
struct LyingSigma {
  double operator()(double rho) const { return 1000.0 * rho; }
  double derivative_bound(double, double) const { return 1.0; }
};

}  // namespace

TEST(Cfl, Formula) {
  EXPECT_DOUBLE_EQ(cfl_dt(kHalf, 1, 1.0, 100), 5e-5);
  EXPECT_DOUBLE_EQ(cfl_dt(kHalf, 1, 1.0, 200), 5e-5 / 4);
  EXPECT_LT(cfl_dt(kHalf, 1, 2.0, 100), cfl_dt(kHalf, 1, 1.0, 100));
  EXPECT_DOUBLE_EQ(cfl_dt(kQuarter2d, 2, 1.0, 100), 5e-5);
}

TEST(StepExplicit, ConstantIsStationary) {
  for (int d : {1, 2}) {
    const auto f = make_profile(d, 16, [](double, double) { return 1.7; });
    const auto next = step_explicit(f, d == 1 ? kHalf : kQuarter2d, IdentitySigma{}, cfl_dt(d == 1 ? kHalf : kQuarter2d, d, 1.0, 16));
    for (double v : next.values) EXPECT_EQ(v, 1.7);
  }
}

TEST(StepExplicit, MassIsConserved) {
  const ThermoTable thermo(RateFunction::piecewise());
  const auto f = cosine_profile(1, 128, 1.0, 0.5);
  const auto sigma = make_sigma_table(thermo, f.max());
  const double dt = cfl_dt(kHalf, 1, sigma.derivative_bound(f.min(), f.max()), 128);
  const auto next = step_explicit(f, kHalf, sigma, dt);
  EXPECT_NEAR(next.mean(), f.mean(), 1e-14);

  const DiffusionMatrix mixed{{{0.3, 0.1}, {0.1, 0.2}}};
  const auto f2 = make_profile(2, 32, [](double u, double v) { return 1.0 + 0.3 * std::sin(2 * std::numbers::pi * (u + 2 * v)); });
  const auto next2 = step_explicit(f2, mixed, IdentitySigma{}, cfl_dt(mixed, 2, 1.0, 32));
  EXPECT_NEAR(next2.mean(), f2.mean(), 1e-14);
}

TEST(StepExplicit, CflAndNegativityErrors) {
  const auto f = cosine_profile(1, 64, 1.0, 0.5);
  const double dt = cfl_dt(kHalf, 1, 1.0, 64);
  EXPECT_THROW(step_explicit(f, kHalf, IdentitySigma{}, 2.0 * dt), CflError);
  EXPECT_THROW(step_explicit(f, kHalf, IdentitySigma{}, -dt), CflError);
  const auto spike = make_profile(1, 16, [](double u, double) { return u < 0.01 ? 1.0 : 0.0; });
  EXPECT_THROW(step_explicit(spike, kHalf, LyingSigma{}, cfl_dt(kHalf, 1, 1.0, 16)), NegativityError);
}

TEST(StepExplicit, MixedStencilMatchesExactSecondDerivative) {
  // f = cos(2 pi (u + v)): A : D^2 f = -(2 pi)^2 (a11 + 2 a12 + a22) f
  const DiffusionMatrix A{{{0.3, 0.1}, {0.1, 0.2}}};
  const int M = 128;
  const auto f = make_profile(2, M, [](double u, double v) { return 2.0 + std::cos(2 * std::numbers::pi * (u + v)); });
  const double dt = cfl_dt(A, 2, 1.0, M);
  const auto next = step_explicit(f, A, IdentitySigma{}, dt);
  const double k2 = 4 * std::numbers::pi * std::numbers::pi;
  double worst = 0.0;
  for (std::size_t i = 0; i < f.values.size(); ++i) {
    const double exact = -k2 * (0.3 + 0.2 + 0.2) * (f.values[i] - 2.0);
    worst = std::max(worst, std::abs((next.values[i] - f.values[i]) / dt - exact));
  }
  EXPECT_LT(worst, 0.01 * k2 * 0.7);
}

TEST(Solve, HeatModeDecay) {
  const int M = 256;
  const auto f0 = cosine_profile(1, M, 1.0, 0.5);
  const std::vector<double> times{0.025, 0.05, 0.1};
  const auto run = solve(f0, kHalf, IdentitySigma{}, 0.1, times);
  ASSERT_EQ(run.snapshots.size(), 3u);
  for (const auto& s : run.snapshots) {
    const double amp = cosine_mode_amplitude(s.profile, 1);
    EXPECT_LE(std::abs(amp / heat_amplitude(s.t) - 1.0), 0.01) << "t=" << s.t;
  }
  EXPECT_LE(run.cfl_ratio, 1.0);
  EXPECT_GT(run.cfl_ratio, 0.9);
}

TEST(Solve, ConstantStaysConstant) {
  const auto f0 = make_profile(2, 24, [](double, double) { return 0.8; });
  const ThermoTable thermo(RateFunction::indicator());
  const auto sigma = make_sigma_table(thermo, 0.8);
  const std::vector<double> times{0.01, 0.02};
  const auto run = solve(f0, kQuarter2d, sigma, 0.02, times);
  for (const auto& s : run.snapshots) {
    EXPECT_LE(s.sup_deviation, 1e-14);  // mean(f0) carries summation rounding
    for (double v : s.profile.values) EXPECT_EQ(v, 0.8);
  }
}

TEST(Solve, MassConservationAndMaximumPrinciple) {
  for (const auto& g : {RateFunction::linear(), RateFunction::indicator(), RateFunction::piecewise()}) {
    for (int d : {1, 2}) {
      const ThermoTable thermo(g);
      const int M = d == 1 ? 128 : 48;
      const auto f0 = cosine_profile(d, M, 1.0, 0.6);
      const auto sigma = make_sigma_table(thermo, f0.max());
      std::vector<double> times;
      for (int k = 1; k <= 10; ++k) times.push_back(0.01 * k);
      const auto run = solve(f0, d == 1 ? kHalf : kQuarter2d, sigma, 0.1, times);
      EXPECT_LE(run.steps, 100000u);
      double lo = f0.min(), hi = f0.max();
      for (const auto& s : run.snapshots) {
        EXPECT_NEAR(s.profile.mean(), f0.mean(), 1e-10);
        EXPECT_GE(s.profile.min(), lo - 1e-15);
        EXPECT_LE(s.profile.max(), hi + 1e-15);
        lo = s.profile.min();
        hi = s.profile.max();
      }
    }
  }
}

TEST(Solve, SecondOrderGridConvergence) {
  const double t = 0.1;
  std::vector<double> errors;
  for (int M : {32, 64, 128}) {
    const auto run = solve(cosine_profile(1, M, 1.0, 0.5), kHalf, IdentitySigma{}, t);
    errors.push_back(std::abs(cosine_mode_amplitude(run.snapshots.back().profile, 1) - heat_amplitude(t)));
  }
  for (std::size_t i = 1; i < errors.size(); ++i) {
    const double factor = errors[i - 1] / errors[i];
    EXPECT_GE(factor, 3.0);
    EXPECT_LE(factor, 5.0);
  }
}

TEST(Solve, NonlinearRelaxationIsExponential) {
  const ThermoTable thermo(RateFunction::piecewise());
  const auto f0 = cosine_profile(1, 128, 1.0, 0.5);
  const auto sigma = make_sigma_table(thermo, f0.max());
  std::vector<double> times;
  for (int k = 1; k <= 20; ++k) times.push_back(0.025 * k);
  const auto run = solve(f0, kHalf, sigma, 0.5, times);
  for (std::size_t i = 1; i < run.snapshots.size(); ++i)
    EXPECT_LT(run.snapshots[i].sup_deviation, run.snapshots[i - 1].sup_deviation);
  // straight-line fit of log deviation on the late half
  std::vector<double> ts, ls;
  for (std::size_t i = 10; i < run.snapshots.size(); ++i) {
    ts.push_back(run.snapshots[i].t);
    ls.push_back(std::log(run.snapshots[i].sup_deviation));
  }
  const auto fit = fit_linear(ts, ls);
  EXPECT_LT(fit.slope, 0.0);
  EXPECT_GE(fit.r2, 0.99);
}

TEST(Solve, RejectsBadInput) {
  auto f = cosine_profile(1, 16, 1.0, 0.5);
  f.values[3] = -0.1;
  EXPECT_THROW(solve(f, kHalf, IdentitySigma{}, 0.1), ValidationError);
  auto g = cosine_profile(1, 16, 1.0, 0.5);
  g.delta_floor = 0.6;
  EXPECT_THROW(solve(g, kHalf, IdentitySigma{}, 0.1), FloorError);
  const std::vector<double> late{0.2};
  EXPECT_THROW(solve(cosine_profile(1, 16, 1.0, 0.5), kHalf, IdentitySigma{}, 0.1, late), ValidationError);
}
