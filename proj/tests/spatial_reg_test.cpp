#include <gtest/gtest.h>

#include <cmath>

#include "bcd/spatial_reg.hpp"
#include "oracles.hpp"

using namespace bcd;

namespace {

std::vector<double> profile_of(const Tensor& f) { return part_profile(f).vec(); }

}  // namespace

TEST(PartProfile, ConcentratedRow) {
  std::vector<double> v(2 * 3 * 12 * 4, 0.0);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t x = 0; x < 4; ++x) v[((i * 3 + c) * 12 + 2) * 4 + x] = 0.5 + x;
  const auto z = profile_of(Tensor({2, 3, 12, 4}, v));
  for (std::size_t l = 0; l < 12; ++l) EXPECT_NEAR(z[l], l == 2 ? 1.0 : 0.0, 1e-12);
}

TEST(PartProfile, ConstantMapIsUniform) {
  // uniform up to the normalization guard
  for (double z : profile_of(Tensor::full({2, 3, 12, 4}, 0.7))) EXPECT_NEAR(z, 0.7 / (12 * 0.7 + 1e-12), 1e-15);
}

TEST(PartProfile, AllZeroFallsBackToUniform) {
  Tensor z = part_profile(Tensor::zeros({2, 3, 6, 2}));
  for (double v : z.values()) EXPECT_EQ(v, 1.0 / 6);
}

TEST(PartProfile, MatchesBruteForceAndSumsToOne) {
  oracle::Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = oracle::pick(rng, 1, 4), c = oracle::pick(rng, 1, 5), h = oracle::pick(rng, 2, 12),
                      w = oracle::pick(rng, 1, 4);
    Tensor f = oracle::random_tensor({n, c, h, w}, rng, 0.0, 2.0);
    const auto expect = oracle::l1_normalized(oracle::row_means(f.vec(), n, c, h, w));
    const auto z = profile_of(f);
    double s = 0.0;
    for (std::size_t l = 0; l < h; ++l) {
      EXPECT_NEAR(z[l], expect[l], 1e-12);
      EXPECT_GE(z[l], 0.0);
      s += z[l];
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(PartProfile, ScaleInvariance) {
  oracle::Rng rng(2);
  Tensor f = oracle::random_tensor({2, 3, 6, 2}, rng, 0.0, 1.0);
  auto scaled = f.vec();
  for (auto& v : scaled) v *= 37.5;
  const auto a = profile_of(f), b = profile_of(Tensor(f.shape(), scaled));
  for (std::size_t l = 0; l < 6; ++l) EXPECT_NEAR(a[l], b[l], 1e-12);
}

TEST(PartTarget, PaperSettingValues) {
  const auto t = part_target(1, 6, 24, 0.20);
  double s = 0.0;
  for (std::size_t l = 0; l < 24; ++l) {
    EXPECT_NEAR(t[l], (l >= 4 && l < 8) ? 0.20 : 0.01, 1e-15);
    s += t[l];
  }
  EXPECT_NEAR(s, 1.0, 1e-12);
}

TEST(PartTarget, HardAndFlatBoundaries) {
  const auto hard = part_target(0, 6, 24, 0.25);
  for (std::size_t l = 0; l < 24; ++l) EXPECT_EQ(hard[l], l < 4 ? 0.25 : 0.0);
  for (double v : part_target(3, 6, 24, 1.0 / 24)) EXPECT_NEAR(v, 1.0 / 24, 1e-15);
}

TEST(PartTarget, SumsToOneAndShiftsAcrossParts) {
  oracle::Rng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t k = oracle::pick(rng, 1, 6), h = k * oracle::pick(rng, 1, 4);
    const auto band = gamma_band(k, h);
    const double gamma = std::uniform_real_distribution<double>(band.lo, band.hi)(rng);
    const auto t0 = part_target(0, k, h, gamma);
    for (std::size_t part = 0; part < k; ++part) {
      const auto t = part_target(part, k, h, gamma);
      double s = 0.0;
      for (double v : t) s += v;
      EXPECT_NEAR(s, 1.0, 1e-12);
      const std::size_t shift = part * (h / k);
      for (std::size_t l = 0; l < h; ++l) EXPECT_EQ(t[(l + shift) % h], t0[l]);
    }
  }
}

TEST(PartTarget, RejectsInfeasibleGamma) {
  EXPECT_THROW(part_target(0, 6, 12, 0.6), ConfigError);
  EXPECT_THROW(part_target(0, 6, 12, 0.05), ConfigError);
  EXPECT_THROW(part_target(0, 5, 12, 0.2), ConfigError);
  try {
    validate_gamma(0.9, 6, 12);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("0.500000"), std::string::npos) << e.what();
  }
}

TEST(HolisticTarget, IsUniform) {
  for (double v : holistic_target(12)) EXPECT_EQ(v, 1.0 / 12);
}

TEST(KlLoss, Examples) {
  const auto t = holistic_target(12);
  EXPECT_NEAR(kl_loss(t, Tensor({12}, t)).item(), 0.0, 1e-15);
  std::vector<double> e1(12, 0.0);
  e1[0] = 1.0;
  EXPECT_NEAR(kl_loss(e1, Tensor({12}, t)).item(), std::log(12.0), 1e-12);
}

TEST(KlLoss, ZeroPredictionStaysFinite) {
  std::vector<double> p(4, 0.0);
  p[1] = 1.0;
  const double l = kl_loss({0.25, 0.25, 0.25, 0.25}, Tensor({4}, p)).item();
  EXPECT_TRUE(std::isfinite(l));
  EXPECT_GT(l, 5.0);
}

TEST(KlLoss, NonNegativeAndMatchesOracle) {
  oracle::Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t h = oracle::pick(rng, 2, 12);
    const auto t = oracle::l1_normalized(oracle::uniform(h, rng, 0.0, 1.0));
    const auto p = oracle::l1_normalized(oracle::uniform(h, rng, 0.01, 1.0));
    const double l = kl_loss(t, Tensor({h}, p)).item();
    EXPECT_GE(l, 0.0);
    EXPECT_NEAR(l, oracle::kl(t, p), 1e-12);
  }
}

TEST(HolisticProfile, ComplementaryBandsGiveZeroLoss) {
  const std::size_t k = 6, h = 12;
  std::vector<Tensor> maps;
  for (std::size_t part = 0; part < k; ++part) {
    std::vector<double> v(2 * 2 * h * 2, 0.0);
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t y = 2 * part; y < 2 * part + 2; ++y)
          for (std::size_t x = 0; x < 2; ++x) v[((i * 2 + c) * h + y) * 2 + x] = 1.0;
    maps.emplace_back(Shape{2, 2, h, 2}, v);
  }
  EXPECT_NEAR(kl_loss(holistic_target(h), holistic_profile(maps)).item(), 0.0, 1e-12);
}

TEST(HolisticProfile, CollapsedRowIsBoundedByTheLogFloor) {
  const std::size_t h = 12;
  std::vector<Tensor> maps;
  for (int part = 0; part < 6; ++part) {
    std::vector<double> v(2 * h * 2, 0.0);
    v[5 * 2] = 1.0;
    maps.emplace_back(Shape{1, 2, h, 2}, v);
  }
  // row 5 holds mean 6 / (12 channels × 2 columns); the other 11 rows sit on the floor
  const double p5 = 0.25 / (0.25 + 1e-12);
  const double expected = (std::log(1.0 / 12 / p5) + 11.0 * std::log(1.0 / 12 / 1e-12)) / 12.0;
  EXPECT_NEAR(kl_loss(holistic_target(h), holistic_profile(maps)).item(), expected, 1e-12);
}

TEST(HolisticProfile, MatchesWeightedOracle) {
  oracle::Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t k = oracle::pick(rng, 1, 4), n = oracle::pick(rng, 1, 3), h = oracle::pick(rng, 2, 8),
                      w = oracle::pick(rng, 1, 3);
    std::vector<Tensor> maps;
    std::vector<std::vector<double>> raw;
    std::vector<std::size_t> channels;
    for (std::size_t part = 0; part < k; ++part) {
      channels.push_back(oracle::pick(rng, 1, 4));
      maps.push_back(oracle::random_tensor({n, channels.back(), h, w}, rng, 0.0, 1.0));
      raw.push_back(maps.back().vec());
    }
    const auto expect = oracle::holistic_profile(raw, n, channels, h, w);
    const auto z = holistic_profile(maps);
    for (std::size_t l = 0; l < h; ++l) EXPECT_NEAR(z[l], expect[l], 1e-12);
  }
}

TEST(KlLoss, GradientsThroughProfiles) {
  oracle::Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const auto target = part_target(trial % 3, 3, 6, 0.25);
    Tensor f = oracle::random_tensor({2, 2, 6, 2}, rng, 0.05, 1.0);
    EXPECT_LT(grad_check([&](const Tensor& x) { return kl_loss(target, part_profile(x)); }, f, 1e-5), 1e-6);
    Tensor g = oracle::random_tensor({2, 3, 6, 2}, rng, 0.05, 1.0);
    EXPECT_LT(grad_check([&](const Tensor& x) { return kl_loss(holistic_target(6), holistic_profile({f, x})); }, g,
                         1e-5),
              1e-6);
  }
}
