#include <gtest/gtest.h>

#include "bcd/bcca.hpp"
#include "oracles.hpp"

using namespace bcd;

TEST(Bcca, LayerWidths) {
  Rng rng(1);
  Bcca m(64, 16, rng);
  EXPECT_EQ(m.hidden(), 4u);
  EXPECT_EQ(m.channels(), 64u);
  EXPECT_THROW(Bcca(60, 16, rng), ConfigError);
}

TEST(Bcca, ZeroInputGivesInteriorWeights) {
  Rng rng(2);
  Bcca m(32, 16, rng);
  Tensor w = m.forward(Tensor::zeros({3, 32, 4, 2}), false);
  for (double v : w.values()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(Bcca, IdenticalImagesGiveIdenticalWeights) {
  Rng rng(3);
  Bcca m(16, 4, rng);
  oracle::Rng r(3);
  const auto one = oracle::uniform(16 * 6, r, 0.0, 1.0);
  std::vector<double> two = one;
  two.insert(two.end(), one.begin(), one.end());
  for (bool training : {false, true}) {
    Tensor w = m.forward(Tensor({2, 16, 3, 2}, two), training);
    for (std::size_t c = 0; c < 16; ++c) EXPECT_EQ(w[c], w[16 + c]);
  }
}

TEST(Bcca, OutputRangeProperty) {
  Rng rng(4);
  Bcca m(16, 4, rng);
  oracle::Rng r(4);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor w = m.forward(oracle::random_tensor({2, 16, 2, 2}, r, -5.0, 5.0), trial % 2 == 0);
    for (double v : w.values()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(Recalibrate, IdentityAnnihilationSelector) {
  oracle::Rng r(5);
  Tensor t = oracle::random_tensor({2, 3, 2, 2}, r);
  EXPECT_EQ(recalibrate(Tensor::full({2, 3}, 1.0), t).vec(), t.vec());
  const Tensor zeroed = recalibrate(Tensor::zeros({2, 3}), t);
  for (double v : zeroed.values()) EXPECT_EQ(v, 0.0);
  Tensor sel = recalibrate(Tensor({2, 3}, {0, 1, 0, 0, 1, 0}), t);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t p = 0; p < 4; ++p)
        EXPECT_EQ(sel[(i * 3 + c) * 4 + p], c == 1 ? t[(i * 3 + c) * 4 + p] : 0.0);
}

TEST(BatchMean, IsMeanOverImages) {
  oracle::Rng r(6);
  Tensor w = oracle::random_tensor({5, 4}, r, 0.0, 1.0);
  Tensor m = batch_mean(w);
  for (std::size_t c = 0; c < 4; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < 5; ++i) s += w[i * 4 + c];
    EXPECT_NEAR(m[c], s / 5, 1e-12);
  }
}

TEST(BatchMean, OneImageChangeMovesMeanByOneNth) {
  oracle::Rng r(7);
  auto base = oracle::uniform(12, r, 0.0, 1.0);
  Tensor m0 = batch_mean(Tensor({3, 4}, base));
  base[5] += 0.3;
  Tensor m1 = batch_mean(Tensor({3, 4}, base));
  EXPECT_NEAR(m1[1] - m0[1], 0.1, 1e-12);
}

TEST(BccaLoss, Examples) {
  // parallel vectors: |a||b| = dot = 0.5, so only the norm guard remains
  EXPECT_NEAR(bcca_loss(Tensor({3}, {0.2, 0.4, 0.0}), {0.5, 1.0, 0.0}).item(), 1.0 - 0.5 / (0.5 + 1e-12), 1e-15);
  EXPECT_NEAR(bcca_loss(Tensor({3}, {1.0, 0.0, 0.0}), {0.0, 1.0, 1.0}).item(), 1.0, 1e-12);
}

TEST(BccaLoss, ZeroTargetSkipsWithoutGradient) {
  Tensor w({3}, {0.2, 0.5, 0.9}, true);
  Tensor l = bcca_loss(w, {0, 0, 0});
  EXPECT_EQ(l.item(), 0.0);
  EXPECT_FALSE(l.requires_grad());
}

TEST(BccaLoss, ZeroWeightsStayFinite) {
  Tensor l = bcca_loss(Tensor::zeros({3}), {1, 0, 0});
  EXPECT_TRUE(std::isfinite(l.item()));
}

TEST(BccaLoss, ScaleInvariance) {
  oracle::Rng r(8);
  for (int trial = 0; trial < 20; ++trial) {
    auto a = oracle::uniform(6, r, 0.1, 1.0);
    auto b = oracle::uniform(6, r, 0.0, 1.0);
    const double l = bcca_loss(Tensor({6}, a), b).item();
    const double s = std::uniform_real_distribution<double>(0.1, 10.0)(r);
    auto as = a, bs = b;
    for (auto& v : as) v *= s;
    for (auto& v : bs) v *= 2.0 * s;
    EXPECT_NEAR(bcca_loss(Tensor({6}, as), b).item(), l, 1e-12);
    EXPECT_NEAR(bcca_loss(Tensor({6}, a), bs).item(), l, 1e-12);
  }
}

TEST(BccaLoss, GradientMatchesFiniteDifferences) {
  oracle::Rng r(9);
  for (int trial = 0; trial < 20; ++trial) {
    const auto target = oracle::uniform(8, r, 0.0, 1.0);
    Tensor w = oracle::random_tensor({8}, r, 0.05, 1.0);
    EXPECT_LT(grad_check([&](const Tensor& x) { return bcca_loss(x, target); }, w, 1e-5), 1e-6);
    Tensor wi = oracle::random_tensor({3, 8}, r, 0.05, 1.0);
    EXPECT_LT(grad_check([&](const Tensor& x) { return bcca_loss_per_image(x, target); }, wi, 1e-5), 1e-6);
  }
}

TEST(BccaLoss, TargetIsDetached) {
  Tensor w({2}, {0.3, 0.7}, true);
  std::vector<double> target{1.0, 0.0};
  backward(bcca_loss(w, target));
  EXPECT_EQ(target, (std::vector<double>{1.0, 0.0}));
  EXPECT_TRUE(w.has_grad());
}

TEST(BccaLoss, PerImageAveragesRowDistances) {
  Tensor w({2, 2}, {1, 0, 0, 1});
  EXPECT_NEAR(bcca_loss_per_image(w, {1, 0}).item(), 0.5, 1e-12);
}

TEST(Bcca, GradientReachesModuleParameters) {
  Rng rng(10);
  Bcca m(16, 4, rng);
  ParamList list;
  m.collect(list, "a");
  oracle::Rng r(10);
  Tensor t = oracle::random_tensor({4, 16, 2, 2}, r, 0.0, 1.0);
  backward(bcca_loss(batch_mean(m.forward(t, true)), oracle::uniform(16, r, 0.0, 1.0)));
  for (const auto& p : list.params()) EXPECT_TRUE(p.tensor->has_grad()) << p.name;
}
