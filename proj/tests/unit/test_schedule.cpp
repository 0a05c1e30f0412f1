#include <gtest/gtest.h>

#include <cmath>

#include "cdpo/schedule.hpp"

using namespace cdpo;

namespace {

NoiseSchedule golden_schedule() { return build_vp_schedule(64, 1e-4, 0.02); }

}  // namespace

TEST(Schedule, RejectsSingleStep) { EXPECT_THROW(build_vp_schedule(1, 1e-4, 0.02), std::invalid_argument); }

TEST(Schedule, MatchesHighPrecisionProduct) {
  // Values from tests/oracles/golden.py (mpmath, 50 digits).
  const auto s = golden_schedule();
  EXPECT_NEAR(s.sigma(64), 0.69042151597971879486, 1e-14);
  EXPECT_NEAR(s.alpha(1), 0.99994999874993749609, 1e-15);
  EXPECT_NEAR(s.alpha(32), 0.92292658162395415301, 1e-14);
}

TEST(Schedule, VarianceIdentityAndMonotone) {
  for (const int T : {2, 10, 64, 1000}) {
    const auto s = build_vp_schedule(T, 1e-4, 0.02);
    for (int t = 1; t <= T; ++t) {
      EXPECT_NEAR(s.alpha(t) * s.alpha(t) + s.sigma(t) * s.sigma(t), 1.0, 1e-12);
      if (t > 1) {
        EXPECT_LT(s.alpha(t), s.alpha(t - 1));
        EXPECT_GT(s.sigma(t), s.sigma(t - 1));
      }
    }
  }
}

TEST(Schedule, ContinuousInterpolantHitsNodes) {
  const auto s = golden_schedule();
  for (int t = 0; t <= 64; ++t) {
    EXPECT_DOUBLE_EQ(s.alpha_at(t), s.alpha(t));
    EXPECT_DOUBLE_EQ(s.sigma_at(t), s.sigma(t));
  }
}

TEST(SdeCoeffs, GoldenAtMidpoint) {
  const auto s = golden_schedule();
  const auto k = sde_coeffs(s, 32.0);
  EXPECT_NEAR(k.f, -0.0050504274529584585207, 1e-14);
  EXPECT_NEAR(k.g_sq, 0.010099628641225452307, 1e-14);
}

TEST(SdeCoeffs, MatchesFiniteDifferences) {
  const auto s = golden_schedule();
  const double t = 32.5;
  const double h = 1e-3;
  const double f_fd = (std::log(s.alpha_at(t + h)) - std::log(s.alpha_at(t - h))) / (2 * h);
  const double s2 = [&](double u) { return s.sigma_at(u) * s.sigma_at(u); }(t);
  const double ds2 =
      (s.sigma_at(t + h) * s.sigma_at(t + h) - s.sigma_at(t - h) * s.sigma_at(t - h)) / (2 * h);
  const auto k = sde_coeffs(s, t);
  EXPECT_NEAR(k.f, f_fd, 1e-3 * std::abs(f_fd));
  const double g2_fd = ds2 - 2 * f_fd * s2;
  EXPECT_NEAR(k.g_sq, g2_fd, 1e-3 * std::abs(g2_fd));
}

TEST(SdeCoeffs, DiffusionNonNegativeAtMidpoints) {
  const auto s = build_vp_schedule(64, 1.5625e-3, 0.3125);
  for (int t = 0; t < 64; ++t) EXPECT_GE(sde_coeffs(s, t + 0.5).g_sq, 0.0);
}

TEST(SdeCoeffs, DriftIntegratesToLogAlphaRatio) {
  const auto s = golden_schedule();
  for (int t = 2; t <= 64; t += 7) {
    // Midpoint rule on the linear piece is exact.
    const double integral = sde_coeffs(s, t - 0.5).f;
    const double target = std::log(s.alpha(t) / s.alpha(t - 1));
    EXPECT_NEAR(integral, target, 1e-3 * std::abs(target));
  }
}

TEST(Discretize, Endpoints) {
  const auto s = golden_schedule();
  const auto g2 = discretize(s, 2, 1.0);
  EXPECT_EQ(g2.times, (std::vector<double>{1.0, 64.0}));
  const auto g4 = discretize(s, 4, 1.0);
  EXPECT_EQ(g4.times, (std::vector<double>{1.0, 22.0, 43.0, 64.0}));
  const auto g = discretize(s, 32, 1.0);
  EXPECT_EQ(g.times.front(), 1.0);
  EXPECT_EQ(g.times.back(), 64.0);
}

TEST(Discretize, RejectsDeltaAtHorizon) {
  const auto s = golden_schedule();
  EXPECT_THROW(discretize(s, 4, 64.0), std::invalid_argument);
  EXPECT_THROW(discretize(s, 1, 1.0), std::invalid_argument);
}
