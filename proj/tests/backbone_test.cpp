#include <gtest/gtest.h>

#include "bcd/backbone.hpp"
#include "oracles.hpp"

using namespace bcd;

TEST(Backbone, DefaultShape) {
  Backbone net(BackboneConfig{});
  oracle::Rng rng(1);
  Tensor t = net.forward(oracle::random_tensor({48, 3, 96, 32}, rng, 0.0, 1.0), true);
  EXPECT_EQ(t.shape(), (Shape{48, 64, 12, 4}));
}

TEST(Backbone, PaperScaleGrid) {
  const auto c = BackboneConfig::reference_scale();
  EXPECT_EQ(c.feature_height(), 24u);
  EXPECT_EQ(c.feature_width(), 8u);
  EXPECT_NO_THROW(validate_backbone(c, 6));
}

TEST(Backbone, ShapeIsPureFunctionOfConfig) {
  oracle::Rng rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    BackboneConfig c;
    const std::size_t stages = oracle::pick(rng, 1, 3);
    c.stage_widths.clear();
    for (std::size_t s = 0; s < stages; ++s) c.stage_widths.push_back(oracle::pick(rng, 1, 8));
    const std::size_t ds = c.downsample();
    c.input_height = ds * oracle::pick(rng, 1, 4);
    c.input_width = ds * oracle::pick(rng, 1, 3);
    c.seed = rng();
    Backbone net(c);
    Tensor t = net.forward(oracle::random_tensor({2, 3, c.input_height, c.input_width}, rng, 0.0, 1.0), true);
    EXPECT_EQ(t.shape(), (Shape{2, c.channels(), c.feature_height(), c.feature_width()}));
  }
}

TEST(Backbone, OutputIsNonNegative) {
  BackboneConfig c;
  c.input_height = 32;
  c.input_width = 16;
  Backbone net(c);
  oracle::Rng rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor t = net.forward(oracle::random_tensor({3, 3, 32, 16}, rng, 0.0, 1.0), trial % 2 == 0);
    for (double v : t.values()) EXPECT_GE(v, 0.0);
  }
}

TEST(Backbone, ZeroImagesGiveBiasPathOnly) {
  BackboneConfig c;
  c.input_height = 16;
  c.input_width = 8;
  c.stage_widths = {4};
  Backbone net(c);
  // In evaluation mode with fresh statistics, each channel is relu(bias / sqrt(1 + eps)) everywhere.
  ParamList list;
  net.collect(list);
  const Tensor& bias = *list.params()[1].tensor;
  Tensor t = net.forward(Tensor::zeros({2, 3, 16, 8}), false);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t ch = 0; ch < 4; ++ch)
      for (std::size_t p = 0; p < 32; ++p)
        EXPECT_NEAR(t[(i * 4 + ch) * 32 + p], std::max(0.0, bias[ch] / std::sqrt(1.0 + kBatchNormEps)), 1e-15);
}

TEST(Backbone, Errors) {
  Backbone net(BackboneConfig{});
  EXPECT_THROW(net.forward(Tensor::zeros({2, 3, 64, 32}), true), ContractViolation);
  EXPECT_THROW(net.forward(Tensor::full({2, 3, 96, 32}, 1.5), true), ContractViolation);
  EXPECT_THROW(net.forward(Tensor::zeros({1, 3, 96, 32}), true), ContractViolation);
  BackboneConfig c;
  EXPECT_THROW(validate_backbone(c, 5), ConfigError);
  c.input_height = 100;
  EXPECT_THROW(validate_backbone(c, 6), ConfigError);
}

TEST(Backbone, SeedDeterminesWeights) {
  oracle::Rng rng(4);
  Tensor x = oracle::random_tensor({2, 3, 96, 32}, rng, 0.0, 1.0);
  Backbone a(BackboneConfig{}), b(BackboneConfig{});
  EXPECT_EQ(a.forward(x, true).vec(), b.forward(x, true).vec());
  BackboneConfig other;
  other.seed = 2;
  Backbone c(other);
  EXPECT_NE(a.forward(x, true).vec(), c.forward(x, true).vec());
}
