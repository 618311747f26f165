#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "gpatch/error.hpp"
#include "gpatch/loss.hpp"

namespace gpatch {
namespace {

// Direct long-double evaluation of -log(e^{z_t} / sum_j e^{z_j}); no shift.
long double loss_oracle(const std::vector<long double>& z, std::size_t t) {
  long double sum = 0;
  for (const auto v : z) sum += std::exp(v);
  return -std::log(std::exp(z[t]) / sum);
}

TEST(TargetedLoss, UniformLogitsGiveLogN) {
  const std::vector<double> z(10, 0.37);
  EXPECT_NEAR(targeted_loss<double>(z, 4), 2.302585092994046, 1e-12);
}

TEST(TargetedLoss, SaturatedTargetGivesZero) {
  std::vector<double> z(10, 0.0);
  z[3] = 1000.0;
  EXPECT_NEAR(targeted_loss<double>(z, 3), 0.0, 1e-12);
}

TEST(TargetedLoss, ThreeLogitExampleMatchesOracle) {
  // Frozen from loss_oracle at 30 significant digits: ln(e^2 + e + 1) - 2.
  constexpr double kExpected = 0.407605964444380304482919904545;
  EXPECT_NEAR(static_cast<double>(loss_oracle({2.0L, 1.0L, 0.0L}, 0)), kExpected, 1e-15);
  const std::vector<double> z{2.0, 1.0, 0.0};
  EXPECT_NEAR(targeted_loss<double>(z, 0), kExpected, 1e-9);
  const std::vector<float> zf{2.0f, 1.0f, 0.0f};
  EXPECT_NEAR(targeted_loss<float>(zf, 0), kExpected, 1e-6);
}

TEST(TargetedLoss, StableForHugeLogits) {
  const std::vector<double> z{1e300, -1e300, 0.0};
  EXPECT_TRUE(std::isfinite(targeted_loss<double>(z, 2)));
  EXPECT_NEAR(targeted_loss<double>(z, 0), 0.0, 1e-12);
}

TEST(TargetedLoss, RejectsNonFiniteLogitsAndBadTargets) {
  const std::vector<double> nan{0.0, std::numeric_limits<double>::quiet_NaN()};
  const std::vector<double> inf{0.0, std::numeric_limits<double>::infinity()};
  EXPECT_THROW(targeted_loss<double>(nan, 0), Error);
  EXPECT_THROW(targeted_loss<double>(inf, 0), Error);
  const std::vector<double> ok{0.0, 1.0};
  EXPECT_THROW(targeted_loss<double>(ok, 2), ContractError);
}

TEST(TargetedLoss, GradientIsSoftmaxMinusOneHot) {
  const std::vector<double> z{0.3, -1.2, 2.0, 0.0};
  const auto g = targeted_loss_gradient<double>(z, 1);
  const double h = 1e-6;
  for (std::size_t i = 0; i < z.size(); ++i) {
    auto up = z, down = z;
    up[i] += h;
    down[i] -= h;
    const double fd = (targeted_loss<double>(up, 1) - targeted_loss<double>(down, 1)) / (2 * h);
    EXPECT_NEAR(g[i], fd, 1e-8);
  }
  double sum = 0;
  for (const double v : g) sum += v;
  EXPECT_NEAR(sum, 0.0, 1e-15);
}

TEST(TargetedLoss, LossDecreasesAsTargetProbabilityRises) {
  std::vector<double> z{0.0, 0.0, 0.0};
  double previous = targeted_loss<double>(z, 2);
  for (int step = 0; step < 5; ++step) {
    z[2] += 0.5;
    const double now = targeted_loss<double>(z, 2);
    EXPECT_LT(now, previous);
    EXPECT_NEAR(std::exp(-now), softmax<double>(z)[2], 1e-12);
    previous = now;
  }
}

}  // namespace
}  // namespace gpatch
