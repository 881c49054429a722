#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>

#include <cmath>
#include <numbers>
#include <vector>

#include "translab/estimators.hpp"
#include "translab/integrators.hpp"
#include "translab/oracle.hpp"

using namespace translab;

namespace {

constexpr double kPi = std::numbers::pi;

PhaseState<1> state1(double q, double p) {
  PhaseState<1> s;
  s.q[0] = q;
  s.p[0] = p;
  return s;
}

/// Signed displacement on the unit circle.
double circle_diff(double to, double from) {
  double d = to - from;
  if (d > 0.5) d -= 1.0;
  if (d < -0.5) d += 1.0;
  return d;
}

}  // namespace

TEST(SchemeSpec, NamedSchemes) {
  const auto bac = SchemeSpec::first_order_bac();
  EXPECT_EQ(bac.name(), "BAC");
  EXPECT_EQ(bac.weak_order(), 1);
  const auto cbabc = SchemeSpec::second_order_cbabc();
  EXPECT_EQ(cbabc.name(), "CBABC");
  EXPECT_EQ(cbabc.weak_order(), 2);
  const auto parsed = SchemeSpec::from_letters("CBABC");
  ASSERT_EQ(parsed.stages().size(), 5u);
  const double expected[] = {0.5, 0.5, 1.0, 0.5, 0.5};
  for (std::size_t i = 0; i < 5; ++i)
    EXPECT_DOUBLE_EQ(parsed.stages()[i].fraction, expected[i]);
  EXPECT_EQ(SchemeSpec::from_letters("ABC").weak_order(), 1);
  EXPECT_EQ(SchemeSpec::from_letters("BACAB").weak_order(), 2);
}

TEST(SchemeSpec, FractionsMustSumToOne) {
  EXPECT_THROW(SchemeSpec({{Flow::A, 1.0}, {Flow::B, 0.5}, {Flow::C, 1.0}}),
               std::invalid_argument);
  EXPECT_THROW(SchemeSpec({{Flow::A, 1.0}, {Flow::B, 1.0}}), std::invalid_argument);
  EXPECT_THROW(SchemeSpec::from_letters("ABX"), std::invalid_argument);
  EXPECT_THROW(SchemeSpec::from_letters(""), std::invalid_argument);
}

TEST(ParseScheme, KnownNames) {
  EXPECT_EQ(std::get<OverdampedKind>(parse_scheme("EM")), OverdampedKind::EulerMaruyama);
  EXPECT_EQ(std::get<OverdampedKind>(parse_scheme("MALA")), OverdampedKind::Mala);
  EXPECT_EQ(std::get<SchemeSpec>(parse_scheme("BAC")).name(), "BAC");
  EXPECT_THROW(parse_scheme("RK4"), std::invalid_argument);
}

TEST(FlowA, Examples) {
  const auto params = PhysicalParams::unit(1);
  const TorusDomain dom(1, 1.0);
  EXPECT_EQ(flow_A(state1(0.4, 0.0), 0.2, params, dom).q[0], 0.4);
  const auto s = flow_A(state1(0.1, 1.0), 0.2, params, dom);
  EXPECT_NEAR(s.q[0], 0.3, 1e-15);
  EXPECT_EQ(s.p[0], 1.0);
  EXPECT_NEAR(flow_A(state1(0.9, 1.0), 0.2, params, dom).q[0], 0.1, 1e-15);
}

TEST(FlowB, Examples) {
  const ForcingSpec none{0.0, {1.0}};
  const ForcingSpec unit{1.0, {1.0}};
  const auto free = PotentialModel::zero();
  EXPECT_EQ(flow_B(state1(0.3, 0.7), 0.1, none, free).p[0], 0.7);
  const auto kicked = flow_B(state1(0.3, 0.0), 0.1, unit, free);
  EXPECT_NEAR(kicked.p[0], 0.1, 1e-15);
  EXPECT_EQ(kicked.q[0], 0.3);
  const auto cos1 = PotentialModel::cosine_1d(0.5);
  EXPECT_NEAR(flow_B(state1(0.25, 0.0), 0.1, none, cos1).p[0], 0.1 * kPi, 1e-13);

  PhaseState<2> s2{};
  const auto f2 = ForcingSpec::along_axis(2, 0, 1.0);
  s2 = flow_B(s2, 0.1, f2, PotentialModel::zero(2));
  EXPECT_NEAR(s2.p[0], 0.1, 1e-15);
  EXPECT_EQ(s2.p[1], 0.0);
}

TEST(FlowC, ZeroStepIsIdentity) {
  RandomStream rng(1, 0);
  const auto s = flow_C(state1(0.2, 1.7), 0.0, PhysicalParams::unit(1), rng);
  EXPECT_EQ(s.p[0], 1.7);
}

TEST(FlowC, ContractionFactor) {
  const auto params = PhysicalParams::unit(1);
  RandomStream a(2, 0);
  RandomStream b = a;
  const double p1 = flow_C(state1(0.0, 1.0), 0.1, params, a).p[0];
  const double p0 = flow_C(state1(0.0, 0.0), 0.1, params, b).p[0];
  // Same variate in both runs: the difference is rho.
  EXPECT_NEAR(p1 - p0, std::exp(-0.1), 1e-15);
  EXPECT_NEAR(std::exp(-0.1), 0.904837, 1e-6);
}

TEST(FlowC, IteratesToStationaryGaussian) {
  const PhysicalParams params{0.5, 1.0, {2.0}};  // M / beta = 4
  RandomStream rng(3, 0);
  auto s = state1(0.0, 25.0);
  for (int i = 0; i < 200; ++i) s = flow_C(s, 0.1, params, rng);
  RunningMoments m;
  for (int i = 0; i < 1'000'000; ++i) {
    s = flow_C(s, 0.1, params, rng);
    m.add(s.p[0]);
  }
  EXPECT_NEAR(m.variance(), 4.0, 0.03 * 4.0);
  EXPECT_NEAR(m.mean(), 0.0, 0.05);
}

TEST(FlowC, PreservesGaussianInOneStep) {
  const PhysicalParams params{2.0, 1.5, {3.0}};  // M / beta = 1.5
  RandomStream rng(4, 0);
  const int n = 1'000'000;
  RunningMoments m;
  for (int i = 0; i < n; ++i) {
    auto s = state1(0.0, std::sqrt(1.5) * rng.normal());
    m.add(flow_C(s, 0.3, params, rng).p[0]);
  }
  const double se_mean = std::sqrt(1.5 / n);
  const double se_var = 1.5 * std::sqrt(2.0 / n);
  EXPECT_NEAR(m.mean(), 0.0, 3 * se_mean);
  EXPECT_NEAR(m.variance(), 1.5, 3 * se_var);
}

TEST(StepSplitting, BacTraceWithZeroForce) {
  const IntegratorRun run{SchemeSpec::first_order_bac(), 0.1, ForcingSpec{}, PhysicalParams::unit(1),
                          PotentialModel::zero(), 5};
  RandomStream rng(5, 0);
  const auto s = step_splitting<1>(run, state1(0.37, 0.0), rng);
  // B leaves p = 0, A leaves q, C randomizes p.
  EXPECT_EQ(s.q[0], 0.37);
  EXPECT_NE(s.p[0], 0.0);
}

TEST(StepSplitting, MatchesComposedFlows) {
  const auto model = PotentialModel::separable_cosine_2d(0.5, 0.3);
  const PhysicalParams params{1.3, 0.7, {1.0, 2.0}};
  const ForcingSpec forcing{0.4, {0.6, 0.8}};
  const double dt = 0.05;
  for (const char* name : {"BAC", "CBABC"}) {
    const auto scheme = SchemeSpec::from_letters(name);
    SplittingIntegrator<2> integ(scheme, dt, forcing, params, model);
    RandomStream a(6, 0);
    RandomStream b = a;
    PhaseState<2> s{{0.1, 0.8}, {0.3, -1.2}};
    PhaseState<2> manual = s;
    for (int step = 0; step < 50; ++step) {
      integ.step(s, a);
      for (const Stage& st : scheme.stages()) {
        const double h = st.fraction * dt;
        switch (st.flow) {
          case Flow::A: manual = flow_A(manual, h, params, model.domain()); break;
          case Flow::B: manual = flow_B(manual, h, forcing, model); break;
          case Flow::C: manual = flow_C(manual, h, params, b); break;
        }
      }
    }
    for (int i = 0; i < 2; ++i) {
      EXPECT_NEAR(s.q[i], manual.q[i], 1e-12) << name;
      EXPECT_NEAR(s.p[i], manual.p[i], 1e-12) << name;
    }
  }
}

TEST(StepSplitting, NearlyConservesEnergyWithoutFriction) {
  const auto model = PotentialModel::cosine_1d(0.5);
  const PhysicalParams params{1.0, 1e-12, {1.0}};
  SplittingIntegrator<1> integ(SchemeSpec::second_order_cbabc(), 0.01, ForcingSpec{}, params, model);
  RandomStream rng(7, 0);
  auto s = state1(0.1, 1.3);
  auto energy = [&] { return 0.5 * s.p[0] * s.p[0] + model.value_1d(s.q[0]); };
  const double e0 = energy();
  double drift = 0.0;
  for (int i = 0; i < 1000; ++i) {
    integ.step(s, rng);
    drift = std::max(drift, std::abs(energy() - e0));
  }
  EXPECT_LT(drift, 1e-3);
}

TEST(StepSplitting, DeterministicForFixedSeed) {
  const IntegratorRun run{SchemeSpec::second_order_cbabc(), 0.02, ForcingSpec{0.3, {1.0, 0.0}},
                          PhysicalParams::unit(2), PotentialModel::separable_cosine_2d(0.5, 0.5),
                          99};
  auto trajectory = [&] {
    RandomStream rng(run.seed, 3);
    SplittingIntegrator<2> integ(run);
    PhaseState<2> s{{0.2, 0.4}, {0.0, 0.0}};
    std::vector<double> out;
    for (int i = 0; i < 1000; ++i) {
      integ.step(s, rng);
      out.insert(out.end(), {s.q[0], s.q[1], s.p[0], s.p[1]});
    }
    return out;
  };
  EXPECT_EQ(trajectory(), trajectory());
}

TEST(StepSplitting, MomentumMarginalAtEquilibrium) {
  const IntegratorRun run{SchemeSpec::second_order_cbabc(), 0.005, ForcingSpec{},
                          PhysicalParams::unit(1), PotentialModel::cosine_1d(0.5), 11};
  RandomStream rng(run.seed, 0);
  SplittingIntegrator<1> integ(run);
  auto s = detail::make_sampler<1>(run)(rng);
  const long n = 10'000'000;
  BatchMeans bm(static_cast<std::size_t>(n / kDefaultBatches));
  for (long i = 0; i < n; ++i) {
    integ.step(s, rng);
    bm.add(s.p[0] * s.p[0]);
  }
  const double se = std::sqrt(bm.variance() / static_cast<double>(n));
  EXPECT_NEAR(bm.mean(), 1.0, 3 * se);
}

TEST(StepOverdampedEm, PureDiffusionIncrements) {
  const auto free = PotentialModel::zero();
  const double dt = 0.01;
  RandomStream rng(12, 0);
  OverdampedState s{0.5};
  RunningMoments m;
  for (int i = 0; i < 1'000'000; ++i) {
    const double before = s.q;
    s = step_overdamped_em(s, dt, ForcingSpec{}, free, 1.0, rng);
    m.add(circle_diff(s.q, before));
  }
  EXPECT_NEAR(m.variance(), 2 * dt, 0.02 * 2 * dt);
}

TEST(StepOverdampedEm, DriftIdentity) {
  const auto free = PotentialModel::zero();
  const double dt = 0.01;
  OverdampedIntegrator em(OverdampedKind::EulerMaruyama, dt, 1.0, 1.0, free);
  RandomStream rng(13, 0);
  OverdampedState s{0.0};
  RunningMoments m;
  const int n = 1'000'000;
  for (int i = 0; i < n; ++i) {
    const double before = s.q;
    em.step(s, rng);
    m.add(circle_diff(s.q, before));
  }
  EXPECT_NEAR(m.mean(), dt, 3 * std::sqrt(m.variance() / n));
}

TEST(StepOverdampedEm, DeterministicPart) {
  const auto cos1 = PotentialModel::cosine_1d(0.5);
  const double dt = 0.01;
  OverdampedIntegrator em(OverdampedKind::EulerMaruyama, dt, 0.0, 1.0, cos1);
  RandomStream rng(14, 0);
  OverdampedState s{0.25};
  const auto info = em.step(s, rng);
  const double noise = std::sqrt(2 * dt) * info.gaussian;
  EXPECT_NEAR(circle_diff(s.q, 0.25) - noise, 0.0314159, 1e-6);
  EXPECT_TRUE(info.accepted);
}

TEST(StepOverdampedEm, RejectsMultiDimensionalModel) {
  RandomStream rng(15, 0);
  const ForcingSpec f2 = ForcingSpec::along_axis(2, 0, 0.0);
  EXPECT_THROW(step_overdamped_em(OverdampedState{0.1}, 0.01, f2,
                                  PotentialModel::separable_cosine_2d(0.5, 0.5), 1.0, rng),
               std::invalid_argument);
}

TEST(StepMala, FreeParticleAlwaysAccepts) {
  OverdampedIntegrator mala(OverdampedKind::Mala, 0.05, 0.0, 1.0, PotentialModel::zero());
  RandomStream rng(16, 0);
  OverdampedState s{0.3};
  for (int i = 0; i < 100'000; ++i) EXPECT_TRUE(mala.step(s, rng).accepted);
  EXPECT_EQ(mala.acceptance_rate(), 1.0);
}

TEST(StepMala, RejectsForcing) {
  EXPECT_THROW(OverdampedIntegrator(OverdampedKind::Mala, 0.01, 0.5, 1.0,
                                    PotentialModel::cosine_1d(0.5)),
               std::invalid_argument);
  const IntegratorRun run{OverdampedKind::Mala, 0.01, ForcingSpec{0.5, {1.0}},
                          PhysicalParams::unit(1), PotentialModel::cosine_1d(0.5), 1};
  EXPECT_THROW(run.validate(), std::invalid_argument);
}

TEST(StepMala, HistogramMatchesGibbsDensity) {
  const auto cos1 = PotentialModel::cosine_1d(0.5);
  OverdampedIntegrator mala(OverdampedKind::Mala, 0.01, 0.0, 1.0, cos1);
  RandomStream rng(17, 0);
  OverdampedState s{0.5};
  const int bins = 20, samples = 100'000, thin = 100;
  for (int i = 0; i < 1000; ++i) mala.step(s, rng);
  std::vector<double> counts(bins, 0.0);
  for (int i = 0; i < samples; ++i) {
    for (int k = 0; k < thin; ++k) mala.step(s, rng);
    counts[std::min(bins - 1, static_cast<int>(s.q * bins))] += 1.0;
  }
  // Bin probabilities from a fine midpoint rule.
  const int fine = 1 << 16;
  std::vector<double> prob(bins, 0.0);
  double z = 0.0;
  for (int i = 0; i < fine; ++i) {
    const double q = (i + 0.5) / fine;
    const double w = std::exp(-cos1.value_1d(q));
    prob[std::min(bins - 1, static_cast<int>(q * bins))] += w;
    z += w;
  }
  double chi2 = 0.0;
  for (int b = 0; b < bins; ++b) {
    const double e = samples * prob[b] / z;
    chi2 += (counts[b] - e) * (counts[b] - e) / e;
  }
  const boost::math::chi_squared dist(bins - 1);
  const double p_value = 1.0 - boost::math::cdf(dist, chi2);
  EXPECT_GT(p_value, 0.01) << "chi2 = " << chi2;
}

TEST(StepMala, AcceptanceIncreasesAsStepShrinks) {
  const auto cos1 = PotentialModel::cosine_1d(0.5);
  std::vector<double> rates;
  for (double dt : {0.1, 0.01, 0.001}) {
    OverdampedIntegrator mala(OverdampedKind::Mala, dt, 0.0, 1.0, cos1);
    RandomStream rng(18, 0);
    OverdampedState s{0.5};
    for (int i = 0; i < 200'000; ++i) mala.step(s, rng);
    rates.push_back(mala.acceptance_rate());
  }
  EXPECT_LT(rates[0], rates[1]);
  EXPECT_LT(rates[1], rates[2]);
  EXPECT_GT(rates[2], 0.999);
}
