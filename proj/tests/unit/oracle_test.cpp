#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "translab/oracle.hpp"

using namespace translab;

namespace {

constexpr double kPi = std::numbers::pi;
const PotentialModel kCos = PotentialModel::cosine_1d(0.5);
const PotentialModel kFree = PotentialModel::zero();

double poisson_error_free(std::size_t n) {
  const double k = 2 * kPi;
  const auto r = sample_on_grid([&](double q) { return std::sin(k * q); }, 1.0, n);
  const auto sol = poisson_solve_1d(kFree, 1.0, r, n);
  double e = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    e = std::max(e, std::abs(sol.values[i] - std::sin(k * sol.grid[i]) / (k * k)));
  return e;
}

}  // namespace

TEST(StationaryDensity, UniformForFreeParticle) {
  for (double eta : {0.0, 0.7, -2.0}) {
    const auto d = stationary_density_1d(kFree, eta, 256);
    for (double v : d.values) EXPECT_NEAR(v, 1.0, 1e-12);
  }
}

TEST(StationaryDensity, EquilibriumIsGibbs) {
  const std::size_t n = 512;
  const auto d = stationary_density_1d(kCos, 0.0, n);
  const auto w = gibbs_weights_1d(kCos, 1.0, n);
  for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(d.values[i] * d.spacing(), w[i], 1e-8);
}

TEST(StationaryDensity, NormalizedAndPositive) {
  const auto d = stationary_density_1d(kCos, 1.3, 300, 2.0);
  EXPECT_NEAR(d.integral(), 1.0, 1e-10);
  for (double v : d.values) EXPECT_GT(v, 0.0);
}

TEST(StationaryDensity, GridRefinementAtOrigin) {
  const double a = stationary_density_1d(kCos, 1.0, 512).values[0];
  const double b = stationary_density_1d(kCos, 1.0, 1024).values[0];
  EXPECT_NEAR(a, b, 1e-6 * std::abs(b));
}

TEST(StationaryDensity, Preconditions) {
  EXPECT_THROW(stationary_density_1d(PotentialModel::separable_cosine_2d(0.5, 0.5), 0.1, 256),
               std::invalid_argument);
  EXPECT_THROW(stationary_density_1d(kCos, 0.1, 64), std::invalid_argument);
}

TEST(StationaryDensity, FokkerPlanckResidualConvergesAtSecondOrder) {
  std::vector<double> res;
  for (std::size_t n : {256u, 512u, 1024u}) {
    const auto d = stationary_density_1d(kCos, 0.8, n);
    res.push_back(fokker_planck_residual(kCos, d, 0.8));
  }
  EXPECT_NEAR(res[0] / res[1], 4.0, 0.5);
  EXPECT_NEAR(res[1] / res[2], 4.0, 0.5);
}

TEST(SteadyVelocity, Examples) {
  EXPECT_NEAR(steady_velocity_1d(kFree, 0.37, 256), 0.37, 1e-14);
  EXPECT_NEAR(steady_velocity_1d(kCos, 0.0, 512), 0.0, 1e-14);
  const double a = steady_velocity_1d(kCos, 0.5, 1024);
  const double b = steady_velocity_1d(kCos, 0.5, 2048);
  EXPECT_NEAR(a, b, 1e-6 * std::abs(b));
  // Odd in eta by the symmetry q -> -q of the cosine potential.
  EXPECT_NEAR(steady_velocity_1d(kCos, -0.5, 1024), -a, 1e-12);
}

TEST(MobilityOracle, Examples) {
  EXPECT_NEAR(mobility_oracle_1d(kFree, 256), 1.0, 1e-10);
  const auto m = mobility_oracle_1d_checked(kCos, 1024);
  EXPECT_GT(m.value, 0.0);
  EXPECT_LT(m.value, 1.0);
  EXPECT_LT(m.relative_gap, 1e-5);
}

TEST(MobilityOracle, LifsonJacksonClosedForm) {
  // For overdamped motion in a periodic potential, mobility is
  // 1 / (<e^{beta V}> <e^{-beta V}>), i.e. 1 / I0(beta a)^2 for a cosine.
  const double i0 = std::cyl_bessel_i(0.0, 0.5);
  EXPECT_NEAR(mobility_oracle_1d(kCos, 1024), 1.0 / (i0 * i0), 1e-5);
}

TEST(MobilityOracle, AgreesWithGreenKuboOracle) {
  for (const auto& m : {kFree, kCos, PotentialModel::cosine_1d(1.2)}) {
    const double a = mobility_oracle_1d(m, 1024);
    const double b = overdamped_mobility_gk_1d(m, 1.0, 1024);
    EXPECT_NEAR(a, b, 1e-4 * std::abs(a));
  }
}

TEST(PoissonSolve, SingleFourierMode) {
  EXPECT_LE(poisson_error_free(1024), 1e-6);
}

TEST(PoissonSolve, SecondOrderRefinement) {
  const double e256 = poisson_error_free(256);
  const double e512 = poisson_error_free(512);
  const double e1024 = poisson_error_free(1024);
  EXPECT_NEAR(e256 / e512, 4.0, 0.5);
  EXPECT_NEAR(e512 / e1024, 4.0, 0.5);
}

TEST(PoissonSolve, ConstantSourceGivesZero) {
  const std::size_t n = 256;
  const auto sol = poisson_solve_1d(kCos, 1.0, std::vector<double>(n, 3.0), n);
  for (double v : sol.values) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(PoissonSolve, GaugeAndResidual) {
  const std::size_t n = 512;
  const auto r = sample_on_grid([](double q) { return std::cos(2 * kPi * q) + q * q; }, 1.0, n);
  const auto sol = poisson_solve_1d(kCos, 1.5, r, n);
  EXPECT_NEAR(sol.gauge(), 0.0, 1e-10);
  EXPECT_LT(sol.residual, 1e-9);
  double wsum = 0.0;
  for (double w : sol.weights) wsum += w;
  EXPECT_NEAR(wsum, 1.0, 1e-12);
}

TEST(PoissonSolve, Preconditions) {
  EXPECT_THROW(poisson_solve_1d(kCos, 1.0, std::vector<double>(128, 0.0), 128),
               std::invalid_argument);
  EXPECT_THROW(poisson_solve_1d(kCos, 1.0, std::vector<double>(100, 0.0), 256),
               std::invalid_argument);
  EXPECT_THROW(poisson_solve_1d(kCos, 0.0, std::vector<double>(256, 0.0), 256),
               std::invalid_argument);
}

TEST(GkOracle, ZeroObservables) {
  auto zero = [](double) { return 0.0; };
  auto s = [](double q) { return std::sin(2 * kPi * q); };
  EXPECT_NEAR(gk_oracle_1d(kCos, 1.0, zero, s, 512), 0.0, 1e-15);
  EXPECT_NEAR(gk_oracle_1d(kCos, 1.0, s, zero, 512), 0.0, 1e-15);
}

TEST(GkOracle, FreeSineMode) {
  auto s = [](double q) { return std::sin(2 * kPi * q); };
  EXPECT_NEAR(gk_oracle_1d(kFree, 1.0, s, s, 1024), 1.0 / (8 * kPi * kPi), 1e-7);
}

TEST(GkOracle, SymmetricPairIsPositive) {
  // int Phi R dnu = <R, (-L)^{-1} R> > 0 for reversible dynamics.
  auto dv = [](double q) { return kCos.derivative_1d(q); };
  EXPECT_GT(gk_oracle_1d(kCos, 1.0, dv, dv, 1024), 0.0);
}

TEST(FreeLangevinMobility, Examples) {
  EXPECT_EQ(free_langevin_mobility({1.0, 1.0, {1.0}}), 1.0);
  EXPECT_EQ(free_langevin_mobility({1.0, 2.0, {1.0}}), 0.5);
  for (double beta : {0.5, 1.0, 2.0}) EXPECT_EQ(free_langevin_mobility({beta, 1.0, {1.0}}), 1.0);
  EXPECT_THROW(free_langevin_mobility({1.0, 0.0, {1.0}}), std::invalid_argument);
}
