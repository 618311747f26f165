#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "gpatch/deployer.hpp"
#include "gpatch/error.hpp"
#include "gpatch/generator.hpp"
#include "gpatch/robustness.hpp"

namespace gpatch {
namespace {

Patch uniform_patch(std::size_t side, double hi, std::uint64_t seed, double lo = 0.0) {
  RandomStream rng(seed);
  Patch p{Image({side, side, 3}), hi / 2};
  for (auto& v : p.pixels.values()) v = static_cast<float>(lo + (hi - lo) * rng.uniform());
  return p;
}

// A generator patch with k = 0.3, i.e. values in [0, 0.6].
Patch generated_patch(double k) {
  GeneratorConfig c;
  c.latent_dim = 16;
  c.stage_channels = {16, 8, 8, 4, 3};
  c.patch_height = c.patch_width = 48;
  c.k = k;
  c.init_seed = 1;
  return generate(Generator<float>(c), sample_latent(16, 2));
}

double mean_square(std::span<const float> v) {
  double s = 0;
  for (const float x : v) s += static_cast<double>(x) * x;
  return s / static_cast<double>(v.size());
}

TEST(ColorTransfer, ZeroShiftIsIdentity) {
  const Patch p = uniform_patch(16, 0.8, 1);
  EXPECT_EQ(color_transfer(p, ColorShift{}).pixels, p.pixels);
}

TEST(ColorTransfer, SingleChannelShift) {
  Patch p = uniform_patch(16, 0.8, 2);
  p.pixels[0] = 0.0f;
  p.pixels[3] = 0.8f;
  const Patch q = color_transfer(p, ColorShift{{0.2, 0.0, 0.0}});
  float lo = 1, hi = 0;
  for (std::size_t i = 0; i < p.pixels.size(); ++i) {
    if (i % 3 == 0) {
      lo = std::min(lo, q.pixels[i]);
      hi = std::max(hi, q.pixels[i]);
      EXPECT_EQ(q.pixels[i], static_cast<float>(static_cast<double>(p.pixels[i]) + 0.2));
    } else {
      EXPECT_EQ(q.pixels[i], p.pixels[i]);
    }
  }
  EXPECT_NEAR(lo, 0.2f, 1e-7);
  EXPECT_NEAR(hi, 1.0f, 1e-7);
}

TEST(ColorTransfer, DifferenceHasNoSpatialVariance) {
  const Patch p = uniform_patch(24, 0.8, 3, 0.1);
  const ColorShift s{{0.1, -0.05, 0.15}};
  const Patch q = color_transfer(p, s);
  for (std::size_t c = 0; c < 3; ++c) {
    double sum = 0, sum2 = 0;
    const std::size_t n = p.pixels.size() / 3;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = static_cast<double>(q.pixels[i * 3 + c]) - p.pixels[i * 3 + c];
      sum += d;
      sum2 += d * d;
    }
    const double mean = sum / n;
    EXPECT_NEAR(mean, s.delta[c], 1e-7);
    EXPECT_LT(sum2 / n - mean * mean, 1e-13);
  }
}

TEST(ColorTransfer, OverflowNamesChannelAndHeadroom) {
  Patch p = uniform_patch(16, 0.8, 4);
  p.pixels[0] = 0.8f;
  try {
    color_transfer(p, ColorShift{{0.3, 0.0, 0.0}});
    FAIL();
  } catch (const ContractError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("channel 0"), std::string::npos) << what;
    EXPECT_NE(what.find("headroom"), std::string::npos) << what;
  }
  EXPECT_THROW(color_transfer(p, ColorShift{{0.0, -0.5, 0.0}}), ContractError);
}

TEST(ColorTransfer, CommutesWithComposeInsideTheMask) {
  RandomStream rng(5);
  Image image({40, 40, 3});
  for (auto& v : image.values()) v = static_cast<float>(rng.uniform());
  const Patch p = uniform_patch(12, 0.8, 6, 0.1);
  const ColorShift s{{0.2, 0.0, -0.1}};
  const Placement pl{5, 20};
  const Patch shifted = color_transfer(p, s);
  const Image a = compose(shifted, image, pl);
  const Image b = compose(p, image, pl);
  const Mask m = make_mask(image.shape(), p.pixels.shape(), pl);
  for (std::size_t y = 0; y < 40; ++y) {
    for (std::size_t x = 0; x < 40; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        if (m.at(y, x, c) == 0) {
          EXPECT_EQ(a.at(y, x, c), b.at(y, x, c));
        } else {
          EXPECT_NEAR(a.at(y, x, c) - b.at(y, x, c), s.delta[c], 1e-6);
        }
      }
    }
  }
}

TEST(AddNoise, InfiniteSnrIsIdentity) {
  const Patch p = uniform_patch(16, 0.6, 7);
  const auto r = add_noise(p, NoiseSpec{});
  EXPECT_EQ(r.patch.pixels, p.pixels);
  EXPECT_TRUE(std::isinf(r.realized_snr_db));
  EXPECT_EQ(r.clipped_fraction(), 0.0);
}

TEST(AddNoise, TenDecibelsMeansATenthOfTheSignalPower) {
  Patch p = uniform_patch(32, 0.6, 8, 0.4);
  NoiseSpec spec;
  spec.snr_db = 10.0;
  spec.seed = 3;
  const auto r = add_noise(p, spec);
  EXPECT_NEAR(r.realized_snr_db, 10.0, 1e-9);

  // Oracle: the same standard normals rescaled to a tenth of the mean-square
  // signal, then clipped.
  const std::size_t n = p.pixels.size();
  RandomStream rng(spec.seed);
  std::vector<double> z(n);
  double zz = 0;
  for (auto& v : z) {
    v = rng.normal();
    zz += v * v;
  }
  const double scale = std::sqrt(0.1 * mean_square(p.pixels.values()) / (zz / n));
  std::size_t clipped = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double v = p.pixels[i] + scale * z[i];
    clipped += (v < 0.0 || v > 1.0);
    EXPECT_NEAR(r.patch.pixels[i], std::clamp(v, 0.0, 1.0), 1e-6);
  }
  EXPECT_DOUBLE_EQ(r.clipped_fraction(), static_cast<double>(clipped) / n);
  // Values near 0.5 with noise at 0.32x the RMS signal leave the box only in the
  // far tails.
  EXPECT_LT(r.clipped_fraction(), 0.01);
}

TEST(AddNoise, SevenDecibelsOnALowRangePatch) {
  const Patch p = generated_patch(0.3);
  double worst = 0, total = 0, overflow = 0, underflow = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    NoiseSpec spec;
    spec.snr_db = 7.0;
    spec.seed = seed;
    const auto r = add_noise(p, spec);
    EXPECT_GE(r.realized_snr_db, 6.8);
    EXPECT_LE(r.realized_snr_db, 7.2);
    worst = std::max(worst, std::abs(r.realized_snr_db - 7.0));
    total += std::abs(r.realized_snr_db - 7.0);
    overflow += r.overflow_fraction;
    underflow += r.underflow_fraction;
  }
  EXPECT_LT(total / 100, 0.05);
  EXPECT_LT(worst, 0.2);
  EXPECT_LT(overflow / 100, 0.01);
  RecordProperty("mean_overflow_fraction", std::to_string(overflow / 100));
  RecordProperty("mean_underflow_fraction", std::to_string(underflow / 100));
}

TEST(AddNoise, SameSpecSameOutputAndSharedDirectionAcrossSnr) {
  const Patch p = uniform_patch(16, 0.6, 9);
  NoiseSpec a;
  a.snr_db = 7.0;
  a.seed = 11;
  EXPECT_EQ(add_noise(p, a).patch.pixels, add_noise(p, a).patch.pixels);
  NoiseSpec b = a;
  b.seed = 12;
  EXPECT_NE(add_noise(p, a).patch.pixels, add_noise(p, b).patch.pixels);
  // Lower SNR scales the same direction: unclipped entries keep their sign.
  NoiseSpec lower = a;
  lower.snr_db = 4.0;
  const auto ra = add_noise(p, a).patch.pixels;
  const auto rl = add_noise(p, lower).patch.pixels;
  for (std::size_t i = 0; i < p.pixels.size(); ++i) {
    const float da = ra[i] - p.pixels[i];
    const float dl = rl[i] - p.pixels[i];
    if (ra[i] > 0.0f && ra[i] < 1.0f && rl[i] > 0.0f && rl[i] < 1.0f) {
      EXPECT_GE(da * dl, 0.0f);
      EXPECT_GE(std::abs(dl), std::abs(da));
    }
  }
}

TEST(AddNoise, RejectsUnknownDistributionAndNan) {
  const Patch p = uniform_patch(8, 0.6, 10);
  NoiseSpec s;
  s.distribution = "laplace";
  s.snr_db = 5.0;
  EXPECT_THROW(add_noise(p, s), ConfigError);
  s.distribution = "gaussian";
  s.snr_db = std::nan("");
  EXPECT_THROW(add_noise(p, s), ConfigError);
}

TEST(Tags, AreStable) {
  EXPECT_EQ((ColorShift{{0.2, 0.0, -0.2}}.tag()), "color(+0.20,+0.00,-0.20)");
  NoiseSpec n;
  EXPECT_EQ(n.tag(), "snr=inf");
  n.snr_db = 5.2;
  EXPECT_EQ(n.tag(), "snr=5.2dB");
}

}  // namespace
}  // namespace gpatch
