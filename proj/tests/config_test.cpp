#include <gtest/gtest.h>

#include "bcd/config.hpp"
#include "oracles.hpp"

using namespace bcd;

TEST(Config, DefaultsMatchReferenceRegime) {
  const ExperimentConfig c;
  EXPECT_EQ(c.parts, 6u);
  EXPECT_EQ(c.beta, 0.25);
  EXPECT_EQ(c.gamma, 0.20);
  EXPECT_EQ(c.alpha, 0.20);
  EXPECT_EQ(c.lambda1, 1.0);
  EXPECT_EQ(c.lambda2, 1.0);
  EXPECT_EQ(c.p, 6u);
  EXPECT_EQ(c.a, 8u);
  EXPECT_EQ(c.batch_size(), 48u);
  EXPECT_EQ(c.feature_height(), 12u);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, ParseSerializeRoundTrip) {
  ExperimentConfig c;
  c.seed = 7;
  c.gamma = 0.3;
  c.backbone_widths = {8, 16, 32};
  c.lr_decay_epochs = {3};
  c.hard_label = true;
  c.supervision_variant = SupervisionVariant::kNoFiltration;
  c.attention_variant = AttentionVariant::kShared;
  c.max_shift = 0;
  const auto text = c.serialize();
  const auto back = ExperimentConfig::parse(text);
  EXPECT_EQ(back.serialize(), text);
  EXPECT_EQ(ExperimentConfig::parse(ExperimentConfig{}.serialize()).serialize(), ExperimentConfig{}.serialize());
}

TEST(Config, RandomOverridesRoundTrip) {
  oracle::Rng rng(1);
  for (int trial = 0; trial < 30; ++trial) {
    json j;
    j["seed"] = rng() % 1000;
    j["lr"] = std::uniform_real_distribution<double>(0.001, 0.1)(rng);
    j["epochs"] = oracle::pick(rng, 1, 40);
    j["bcca_loss"] = rng() % 2 == 0;
    j["part_reg"] = rng() % 2 == 0;
    j["max_shift"] = static_cast<int>(oracle::pick(rng, 0, 20));
    const auto c = ExperimentConfig::from_json(j);
    EXPECT_EQ(ExperimentConfig::parse(c.serialize()).serialize(), c.serialize());
  }
}

TEST(Config, PartialObjectKeepsDefaults) {
  const auto c = ExperimentConfig::parse(R"({"seed": 9, "attention_variant": "per-image"})");
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.attention_variant, AttentionVariant::kPerImage);
  EXPECT_EQ(c.epochs, 30u);
}

TEST(Config, UnknownKeyRejected) {
  try {
    ExperimentConfig::parse(R"({"bcca_los": false})");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("unknown key 'bcca_los'"), std::string::npos);
  }
}

TEST(Config, TypeErrors) {
  EXPECT_THROW(ExperimentConfig::parse(R"({"seed": "seven"})"), ConfigError);
  EXPECT_THROW(ExperimentConfig::parse(R"({"flip": 1})"), ConfigError);
  EXPECT_THROW(ExperimentConfig::parse(R"({"epochs": -3})"), ConfigError);
  EXPECT_THROW(ExperimentConfig::parse(R"({"parts": 6.5})"), ConfigError);
  EXPECT_THROW(ExperimentConfig::parse(R"({"supervision_variant": "two-hot"})"), ConfigError);
  EXPECT_THROW(ExperimentConfig::parse("[1, 2]"), ConfigError);
  EXPECT_THROW(ExperimentConfig::parse("{not json"), ConfigError);
}

TEST(Config, ErrorsAreAggregated) {
  try {
    ExperimentConfig::parse(R"({"foo": 1, "bar": 2, "seed": true})");
    FAIL();
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("'foo'"), std::string::npos);
    EXPECT_NE(msg.find("'bar'"), std::string::npos);
    EXPECT_NE(msg.find("'seed'"), std::string::npos);
  }
  ExperimentConfig c;
  c.p = 1;
  c.lr = 0.0;
  c.bcca_loss = true;
  c.attention = false;
  EXPECT_GE(c.validation_errors().size(), 3u);
}

TEST(Config, GammaBandDependsOnGrid) {
  ExperimentConfig c;
  c.gamma = 0.6;  // above K/H = 0.5
  EXPECT_THROW(c.validate(), ConfigError);
  c.part_reg = c.holistic_reg = false;
  EXPECT_NO_THROW(c.validate());
  c = ExperimentConfig{};
  c.gamma = 0.6;
  c.hard_label = true;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.effective_gamma(), 0.5);
  c = ExperimentConfig{};
  c.parts = 5;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Config, BridgesToModuleConfigs) {
  ExperimentConfig c;
  c.max_shift = 0;
  c.data_seed = 42;
  const auto s = c.synth();
  EXPECT_EQ(s.max_shift, 0);
  EXPECT_EQ(s.seed, 42u);
  EXPECT_EQ(s.parts, 6u);
  EXPECT_EQ(c.backbone().stage_widths, c.backbone_widths);
}

TEST(ContentHash, MatchesGitBlobHash) {
  // git hash-object of a file holding "hello\n".
  EXPECT_EQ(content_hash("hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
  EXPECT_EQ(content_hash(""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
}

TEST(ContentHash, ConfigHashTracksContent) {
  ExperimentConfig a, b;
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.seed = 2;
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 40u);
}
