#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "hydrolab/analysis.hpp"

using namespace hydrolab;

namespace {

const DiffusionMatrix kHalf{{{0.5, 0.0}, {0.0, 0.0}}};

std::vector<double> random_measure(RngStream& rng, std::size_t m, double mass) {
  std::vector<double> v(m);
  double s = 0.0;
  for (auto& x : v) s += (x = rng.uniform() < 0.3 ? 0.0 : rng.uniform());
  for (auto& x : v) x *= mass / s;
  return v;
}

/// Circular W1 by brute force: min over offsets a on a fine grid spanning
/// the cumulative differences, refined by the convexity in a.
double w1_oracle(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> c;
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) c.push_back(acc += a[i] - b[i]);
  auto cost = [&](double off) {
    double s = 0.0;
    for (double v : c) s += std::abs(v - off);
    return s / static_cast<double>(c.size());
  };
  double lo = *std::min_element(c.begin(), c.end()), hi = *std::max_element(c.begin(), c.end());
  for (int it = 0; it < 200; ++it) {
    const double m1 = lo + (hi - lo) / 3, m2 = hi - (hi - lo) / 3;
    (cost(m1) < cost(m2) ? hi : lo) = cost(m1) < cost(m2) ? m2 : m1;
  }
  return cost(0.5 * (lo + hi));
}

/// Binomial probability that a simple walk from 0 sits in {0, 1} after n
/// steps, which equals survival from 1 by reflection.
double exact_survival_1d(std::uint64_t n) {
  const double k = n % 2 == 0 ? n / 2.0 : (n + 1) / 2.0;
  return std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) - n * std::log(2.0));
}

}  // namespace

TEST(W1, Examples) {
  const std::vector<double> zero{1, 0, 0, 0}, half{0, 0, 1, 0}, three_q{0, 0, 0, 1};
  EXPECT_EQ(w1_profile_1d(zero, zero), 0.0);
  EXPECT_DOUBLE_EQ(w1_profile_1d(zero, half), 0.5);
  EXPECT_DOUBLE_EQ(w1_profile_1d(zero, three_q), 0.25);
}

TEST(W1, UniformVersusPointMass) {
  const std::size_t M = 64;
  std::vector<double> point(M, 0.0), uniform(M, 1.0 / M);
  point[0] = 1.0;
  double expected = 0.0;
  for (std::size_t i = 0; i < M; ++i) expected += std::min(i, M - i) / static_cast<double>(M) / M;
  EXPECT_NEAR(w1_profile_1d(point, uniform), expected, 1e-14);
}

TEST(W1, MetricPropertiesAndOracle) {
  RngStream rng(3, 0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t m = 5 + rng.below(60);
    const auto a = random_measure(rng, m, 1.7);
    const auto b = random_measure(rng, m, 1.7);
    const auto c = random_measure(rng, m, 1.7);
    const double ab = w1_profile_1d(a, b), ba = w1_profile_1d(b, a);
    EXPECT_NEAR(ab, ba, 1e-12);
    EXPECT_LE(ab, w1_profile_1d(a, c) + w1_profile_1d(c, b) + 1e-9);
    EXPECT_EQ(w1_profile_1d(a, a), 0.0);
    EXPECT_GT(ab, 0.0);
    EXPECT_NEAR(ab, w1_oracle(a, b), 1e-9);
  }
}

TEST(W1, MassHandling) {
  const std::vector<double> a{0.5, 0.5, 0.0}, b{0.0, 0.5, 0.5};
  std::vector<double> slightly = b;
  slightly[1] += 1e-8;  // renormalized with a warning
  EXPECT_NEAR(w1_profile_1d(a, slightly), w1_profile_1d(a, b), 1e-7);
  std::vector<double> off = b;
  off[1] += 1e-3;
  EXPECT_THROW(w1_profile_1d(a, off), MassMismatchError);
  EXPECT_THROW(w1_profile_1d(a, std::vector<double>{1.0}), ShapeError);
}

TEST(TestFunctionGap, FamilyShape) {
  const Torus t1(1, 16), t2(2, 8);
  EXPECT_TRUE(fourier_test_functions(t1, 0).empty());
  const auto f1 = fourier_test_functions(t1, 8);
  ASSERT_EQ(f1.size(), 8u);
  for (double v : f1[0]) EXPECT_EQ(v, 1.0);
  EXPECT_NEAR(f1[1][4], std::cos(2 * std::numbers::pi * 4 / 16), 1e-15);
  EXPECT_NEAR(f1[2][4], 1.0, 1e-15);  // sin(pi/2)
  const auto f2 = fourier_test_functions(t2, 5);
  ASSERT_EQ(f2.size(), 5u);
  EXPECT_NEAR(f2[3][t2.index({0, 2})], std::cos(std::numbers::pi / 2), 1e-15);  // cos along the second axis
}

TEST(TestFunctionGap, ProductMeasureCltBand) {
  const int N = 1000;
  const Torus torus(1, N);
  const ThermoTable thermo(RateFunction::linear());
  const std::vector<double> flat(N, 1.0);
  const LocalGibbsSampler sampler(thermo, torus, flat);
  std::vector<Configuration> reps;
  for (int r = 0; r < 400; ++r) {
    RngStream rng(31, static_cast<std::uint64_t>(r));
    reps.push_back(sampler.sample(rng));
  }
  const auto family = fourier_test_functions(torus, 3);
  const auto stats = test_function_gap(reps, flat, family, 0.05);
  ASSERT_EQ(stats.size(), 3u);
  // constant test function: |mass fluctuation| with sd sqrt(N)/N, mean sd sqrt(2/pi)
  const double sd = std::sqrt(static_cast<double>(N)) / N;
  EXPECT_NEAR(stats[0].mean, sd * std::sqrt(2 / std::numbers::pi), 4 * stats[0].stderr_);
  EXPECT_LT(stats[0].tail_fraction, 0.2);

  // oscillating phi: the target pairing vanishes
  double target = 0.0;
  for (int x = 0; x < N; ++x) target += flat[static_cast<std::size_t>(x)] * family[2][static_cast<std::size_t>(x)];
  EXPECT_NEAR(target / N, 0.0, 1e-15);
  EXPECT_TRUE(test_function_gap(reps, flat, {}, 0.1).empty());
}

TEST(RelativeEntropy, Examples) {
  const ThermoTable lin(RateFunction::linear());
  const std::vector<double> flat(10, 1.3);
  EXPECT_NEAR(gibbs_relative_entropy(flat, 1.3, lin), 0.0, 1e-14);
  const std::vector<double> two{2.0};
  EXPECT_NEAR(gibbs_relative_entropy(two, 1.0, lin), 2 * std::log(2.0) - 1, 1e-10);
  const std::vector<double> empty_site{0.0};
  EXPECT_NEAR(gibbs_relative_entropy(empty_site, 1.0, lin), 1.0, 1e-10);  // 0 ln 0 = 0, ln Z(1)/Z(0) = 1
}

TEST(RelativeEntropy, NonNegativeAndZeroOnlyAtEquilibrium) {
  RngStream rng(4, 0);
  for (const auto& g : {RateFunction::linear(), RateFunction::indicator(), RateFunction::piecewise()}) {
    const ThermoTable t(g);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> f(32);
      for (auto& v : f) v = 0.2 + 2.0 * rng.uniform();
      const double mean = std::accumulate(f.begin(), f.end(), 0.0) / f.size();
      EXPECT_GT(gibbs_relative_entropy(f, mean, t), 1e-6);
      EXPECT_GT(gibbs_relative_entropy(f, 1.0, t), 0.0);
    }
    EXPECT_NEAR(gibbs_relative_entropy(std::vector<double>(8, 0.7), 0.7, t), 0.0, 1e-13);
  }
}

TEST(EntropyProduction, Examples) {
  const ThermoTable lin(RateFunction::linear());
  const auto flat = make_profile(1, 64, [](double, double) { return 1.0; });
  EXPECT_EQ(entropy_production(flat, kHalf, lin), 0.0);

  // oracle: 1/2 int (f')^2 / f with analytic f' at M = 8192
  const int Q = 8192;
  double oracle = 0.0;
  for (int i = 0; i < Q; ++i) {
    const double u = static_cast<double>(i) / Q;
    const double f = 1 + 0.5 * std::cos(2 * std::numbers::pi * u);
    const double df = -std::numbers::pi * std::sin(2 * std::numbers::pi * u);
    oracle += 0.5 * df * df / f / Q;
  }
  const double value = entropy_production(cosine_profile(1, 256, 1.0, 0.5), kHalf, lin);
  EXPECT_LE(std::abs(value / oracle - 1.0), 0.005);

  auto low = cosine_profile(1, 32, 1.0, 0.5);
  EXPECT_THROW(entropy_production(low, kHalf, lin, 0.6), FloorError);
  RngStream rng(2, 0);
  const ThermoTable pw(RateFunction::piecewise());
  for (int trial = 0; trial < 10; ++trial) {
    const auto f = make_profile(2, 16, [&](double, double) { return 0.3 + rng.uniform(); });
    EXPECT_GE(entropy_production(f, DiffusionMatrix{{{0.25, 0.05}, {0.05, 0.25}}}, pw), 0.0);
  }
}

TEST(EntropyDissipation, HeatCase) {
  const ThermoTable lin(RateFunction::linear());
  std::vector<double> times;
  for (int k = 0; k <= 50; ++k) times.push_back(0.002 * k);
  const auto run = solve(cosine_profile(1, 256, 1.0, 0.5), kHalf, IdentitySigma{}, 0.1, times);
  const auto rep = entropy_dissipation_check(run, kHalf, lin);
  EXPECT_TRUE(rep.free_energy_non_increasing);
  EXPECT_LE(rep.max_rel_mismatch, 0.01);
  EXPECT_EQ(rep.production.size(), times.size() - 2);
}

TEST(EntropyDissipation, ConstantDataAndNonlinearRate) {
  const ThermoTable pw(RateFunction::piecewise());
  std::vector<double> times{0.0, 0.01, 0.02};
  const auto flat = make_profile(1, 32, [](double, double) { return 1.2; });
  const auto sigma = make_sigma_table(pw, 1.2);
  const auto rep = entropy_dissipation_check(solve(flat, kHalf, sigma, 0.02, times), kHalf, pw);
  EXPECT_LE(rep.max_abs_mismatch, 1e-12);
  for (double p : rep.production) EXPECT_EQ(p, 0.0);

  std::vector<double> dense;
  for (int k = 0; k <= 40; ++k) dense.push_back(0.0025 * k);
  const auto f0 = cosine_profile(1, 128, 1.0, 0.5);
  const auto run = solve(f0, kHalf, make_sigma_table(pw, f0.max()), 0.1, dense);
  const auto nl = entropy_dissipation_check(run, kHalf, pw);
  EXPECT_TRUE(nl.free_energy_non_increasing);
  EXPECT_LE(nl.max_rel_mismatch, 0.02);
}

TEST(JumpTail, ChernoffRegimeHasNoHits) {
  const auto r = jump_count_tail(1.0, 1.0, 0.25, 400.0, 10000, 1, JumpRateMode::constant_min);
  EXPECT_EQ(r.hits, 0u);
  EXPECT_EQ(r.threshold, 100.0);
  const auto u = jump_count_tail(1.0, 2.0, 0.25, 400.0, 10000, 1, JumpRateMode::uniform);
  EXPECT_EQ(u.hits, 0u);
}

TEST(JumpTail, WrongSideAndMonotone) {
  const auto above = jump_count_tail(1.0, 1.0, 1.5, 400.0, 2000, 2, JumpRateMode::constant_min);
  EXPECT_GT(above.tail, 0.99);
  const auto short_run = jump_count_tail(1.0, 1.0, 0.8, 20.0, 10000, 3, JumpRateMode::constant_min);
  const auto long_run = jump_count_tail(1.0, 1.0, 0.8, 40.0, 10000, 3, JumpRateMode::constant_min);
  EXPECT_GT(short_run.tail, long_run.tail);
  // Poisson(20) <= 16 has probability 0.2211
  EXPECT_NEAR(short_run.tail, 0.2211, 4 * std::sqrt(0.2211 * 0.7789 / 10000));
  EXPECT_THROW(jump_count_tail(0.0, 1.0, 0.1, 1.0, 10, 1, JumpRateMode::uniform), ValidationError);
}

TEST(JumpTail, ChernoffBound) {
  EXPECT_NEAR(chernoff_bound(1.0, 0.25, 400.0), std::exp(-400.0 * (0.75 + 0.25 * std::log(0.25))), 1e-300);
  EXPECT_EQ(chernoff_bound(1.0, 1.0, 10.0), 1.0);
  // the bound dominates the exact Poisson(20) lower tail at 16
  EXPECT_GT(chernoff_bound(1.0, 0.8, 20.0), 0.2211);
  EXPECT_LT(chernoff_bound(1.0, 0.8, 40.0), chernoff_bound(1.0, 0.8, 20.0));
}

TEST(JumpTail, IndependentOfWorkerCount) {
  const auto a = jump_count_tail(1.0, 3.0, 0.9, 30.0, 5000, 9, JumpRateMode::uniform, 1);
  const auto b = jump_count_tail(1.0, 3.0, 0.9, 30.0, 5000, 9, JumpRateMode::uniform, 3);
  EXPECT_EQ(a.hits, b.hits);
}

TEST(RandomWalk, SurvivalMatchesReflectionFormula) {
  const auto curve = rw_no_return(1, 10, 20000, 5);
  ASSERT_EQ(curve.steps.size(), 12u);
  EXPECT_EQ(curve.steps[0], 0u);
  EXPECT_EQ(curve.survival[0], 1.0);
  for (std::size_t k = 1; k < curve.steps.size(); ++k) {
    const double p = exact_survival_1d(curve.steps[k]);
    EXPECT_NEAR(curve.survival[k], p, 4 * std::sqrt(p * (1 - p) / 20000) + 1e-12) << "n=" << curve.steps[k];
  }
  EXPECT_NEAR(curve.slope, -0.5, 0.1);
}

TEST(RandomWalk, TwoDimensionalLogLaw) {
  const auto curve = rw_no_return(2, 12, 20000, 6, 1);
  EXPECT_GT(curve.log_coefficient, 0.0);
  for (std::size_t k = 1; k < curve.survival.size(); ++k) EXPECT_LE(curve.survival[k], curve.survival[k - 1]);
  // first step always leaves the origin's neighbour towards it with probability 1/4
  EXPECT_NEAR(curve.survival[1], 0.75, 4 * std::sqrt(0.75 * 0.25 / 20000));
}

TEST(RandomWalk, MinimaxCoefficientBeatsLeastSquares) {
  const auto curve = rw_no_return(2, 14, 20000, 12);
  double num = 0.0, den = 0.0, ls_residual = 0.0;
  for (int j = 6; j <= 14; ++j) {
    const double inv = 1.0 / std::log(static_cast<double>(curve.steps[static_cast<std::size_t>(j) + 1]));
    num += curve.survival[static_cast<std::size_t>(j) + 1] * inv;
    den += inv * inv;
  }
  for (int j = 6; j <= 14; ++j) {
    const double s = curve.survival[static_cast<std::size_t>(j) + 1];
    ls_residual = std::max(ls_residual, std::abs(s - num / den / std::log(static_cast<double>(curve.steps[static_cast<std::size_t>(j) + 1]))) / s);
  }
  EXPECT_LE(curve.max_rel_residual, ls_residual + 1e-12);
  EXPECT_LE(curve.max_rel_residual, 0.15);
}

TEST(RandomWalk, WorkerCountInvariance) {
  const auto a = rw_no_return(2, 8, 3000, 11, 6, 1);
  const auto b = rw_no_return(2, 8, 3000, 11, 6, 4);
  EXPECT_EQ(a.survival, b.survival);
}

TEST(FitRate, SyntheticAndDegenerate) {
  const std::vector<double> N{32, 64, 128, 256};
  std::vector<double> half, one;
  for (double n : N) {
    half.push_back(3.0 * std::pow(n, -0.5));
    one.push_back(0.2 / n);
  }
  const auto a = fit_rate(N, half);
  EXPECT_NEAR(a.slope, -0.5, 1e-12);
  EXPECT_NEAR(a.r2, 1.0, 1e-12);
  EXPECT_NEAR(fit_rate(N, one).slope, -1.0, 1e-12);
  std::vector<double> with_zero = one;
  with_zero[2] = 0.0;
  EXPECT_THROW(fit_rate(N, with_zero), DegenerateFitError);
  EXPECT_THROW(fit_rate(std::vector<double>{1, 2, 3}, std::vector<double>{1, 2, 3}), DegenerateFitError);
}
