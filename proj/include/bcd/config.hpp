#pragma once

// Flat JSON experiment configuration. Unknown keys and type mismatches are
// rejected; validation collects every problem into one report.

#include <openssl/evp.h>

#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bcd/backbone.hpp"
#include "bcd/part_supervision.hpp"
#include "bcd/spatial_reg.hpp"
#include "bcd/synth_data.hpp"

namespace bcd {

using json = nlohmann::json;

enum class AttentionVariant {
  kStandard,  // per-image weights recalibrate, batch mean supervised
  kPerImage,  // every image's weights supervised individually
  kShared,    // batch-mean weights recalibrate every image
};

inline const char* to_string(SupervisionVariant v) {
  switch (v) {
    case SupervisionVariant::kStandard: return "standard";
    case SupervisionVariant::kOneHot: return "one-hot";
    case SupervisionVariant::kNoFiltration: return "no-filtration";
  }
  return "?";
}

inline const char* to_string(AttentionVariant v) {
  switch (v) {
    case AttentionVariant::kStandard: return "standard";
    case AttentionVariant::kPerImage: return "per-image";
    case AttentionVariant::kShared: return "shared";
  }
  return "?";
}

struct ExperimentConfig {
  // objective and supervision
  std::size_t parts = 6;
  double beta = 0.25;
  double gamma = 0.20;
  double alpha = 0.20;
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  std::size_t p = 6;
  std::size_t a = 8;

  // model
  std::size_t input_height = 96;
  std::size_t input_width = 32;
  std::vector<std::size_t> backbone_widths{16, 32, 64};
  std::size_t subnet_width = 512;
  std::size_t reduction = 16;

  // optimization
  std::size_t epochs = 30;
  std::size_t batches_per_epoch = 0;  // 0: ceil(train images / batch size)
  double lr = 0.01;
  std::vector<std::size_t> lr_decay_epochs{12, 24};
  double lr_decay_factor = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double random_erase = 0.5;
  bool flip = true;
  std::uint64_t seed = 1;

  // components
  bool extra_stripe_subnets = true;
  bool attention = true;
  bool bcca_loss = true;
  bool part_reg = true;
  bool holistic_reg = true;
  bool hard_label = false;
  SupervisionVariant supervision_variant = SupervisionVariant::kStandard;
  AttentionVariant attention_variant = AttentionVariant::kStandard;

  // data
  std::uint64_t data_seed = 1234;
  std::size_t train_ids = 32;
  std::size_t train_images_per_id = 16;
  std::size_t test_ids = 16;
  std::size_t test_images_per_id = 8;
  std::size_t queries_per_id = 3;
  std::size_t family_size = 4;
  std::size_t mutations = 1;
  std::size_t cameras = 6;
  int max_shift = 12;
  bool appearance_jitter = true;

  BackboneConfig backbone() const {
    BackboneConfig b;
    b.input_height = input_height;
    b.input_width = input_width;
    b.stage_widths = backbone_widths;
    b.seed = seed;
    return b;
  }

  SynthConfig synth() const {
    SynthConfig s;
    s.height = input_height;
    s.width = input_width;
    s.parts = parts;
    s.cameras = cameras;
    s.max_shift = max_shift;
    s.jitter = appearance_jitter;
    s.seed = data_seed;
    s.train_ids = train_ids;
    s.train_images_per_id = train_images_per_id;
    s.test_ids = test_ids;
    s.test_images_per_id = test_images_per_id;
    s.queries_per_id = queries_per_id;
    s.family_size = family_size;
    s.mutations = mutations;
    return s;
  }

  std::size_t feature_height() const { return backbone().feature_height(); }

  /// The part-target amplitude in effect: K/H under the hard-label variant.
  double effective_gamma() const {
    return hard_label ? static_cast<double>(parts) / static_cast<double>(feature_height()) : gamma;
  }

  std::size_t batch_size() const { return p * a; }

  json to_json() const {
    return json{
        {"parts", parts},
        {"beta", beta},
        {"gamma", gamma},
        {"alpha", alpha},
        {"lambda1", lambda1},
        {"lambda2", lambda2},
        {"p", p},
        {"a", a},
        {"input_height", input_height},
        {"input_width", input_width},
        {"backbone_widths", backbone_widths},
        {"subnet_width", subnet_width},
        {"reduction", reduction},
        {"epochs", epochs},
        {"batches_per_epoch", batches_per_epoch},
        {"lr", lr},
        {"lr_decay_epochs", lr_decay_epochs},
        {"lr_decay_factor", lr_decay_factor},
        {"momentum", momentum},
        {"weight_decay", weight_decay},
        {"random_erase", random_erase},
        {"flip", flip},
        {"seed", seed},
        {"extra_stripe_subnets", extra_stripe_subnets},
        {"attention", attention},
        {"bcca_loss", bcca_loss},
        {"part_reg", part_reg},
        {"holistic_reg", holistic_reg},
        {"hard_label", hard_label},
        {"supervision_variant", to_string(supervision_variant)},
        {"attention_variant", to_string(attention_variant)},
        {"data_seed", data_seed},
        {"train_ids", train_ids},
        {"train_images_per_id", train_images_per_id},
        {"test_ids", test_ids},
        {"test_images_per_id", test_images_per_id},
        {"queries_per_id", queries_per_id},
        {"family_size", family_size},
        {"mutations", mutations},
        {"cameras", cameras},
        {"max_shift", max_shift},
        {"appearance_jitter", appearance_jitter},
    };
  }

  /// Every problem with the configuration; empty when valid.
  std::vector<std::string> validation_errors() const {
    std::vector<std::string> errs;
    auto check = [&errs](bool ok, const std::string& msg) {
      if (!ok) errs.push_back(msg);
    };
    check(parts >= 1, "parts must be >= 1");
    check(beta > 0.0 && beta <= 1.0, "beta must lie in (0, 1]");
    check(alpha >= 0.0, "alpha must be >= 0");
    check(lambda1 >= 0.0 && lambda2 >= 0.0, "lambda1 and lambda2 must be >= 0");
    check(p >= 2, "p must be >= 2 (the triplet loss needs negatives)");
    check(a >= 1, "a must be >= 1");
    check(p * a >= 2, "batch size must be >= 2 for batch normalization");
    check(!backbone_widths.empty(), "backbone_widths must not be empty");
    bool geometry_ok = !backbone_widths.empty() && parts >= 1;
    if (geometry_ok) {
      try {
        validate_backbone(backbone(), parts);
      } catch (const ConfigError& e) {
        errs.push_back(e.what());
        geometry_ok = false;
      }
    }
    if (geometry_ok && !hard_label && (part_reg || holistic_reg)) {
      try {
        validate_gamma(gamma, parts, feature_height());
      } catch (const ConfigError& e) {
        errs.push_back(e.what());
      }
    }
    check(subnet_width >= 1, "subnet_width must be >= 1");
    if (!backbone_widths.empty())
      check(reduction >= 1 && backbone_widths.back() % reduction == 0,
            "backbone output channels " + std::to_string(backbone_widths.back()) + " not divisible by reduction " +
                std::to_string(reduction));
    check(epochs >= 1, "epochs must be >= 1");
    check(lr > 0.0, "lr must be > 0");
    check(lr_decay_factor > 0.0, "lr_decay_factor must be > 0");
    check(momentum >= 0.0 && momentum < 1.0, "momentum must lie in [0, 1)");
    check(weight_decay >= 0.0, "weight_decay must be >= 0");
    check(random_erase >= 0.0 && random_erase <= 1.0, "random_erase must lie in [0, 1]");
    check(bcca_loss ? attention : true, "bcca_loss requires attention");
    check(attention_variant == AttentionVariant::kStandard || attention,
          "attention_variant other than standard requires attention");
    check(train_ids >= p, "train_ids must be >= p");
    check(test_ids >= 2, "test_ids must be >= 2");
    try {
      validate_synth(synth());
    } catch (const ConfigError& e) {
      errs.push_back(e.what());
    }
    return errs;
  }

  void validate() const {
    const auto errs = validation_errors();
    if (errs.empty()) return;
    std::string msg = "invalid configuration:";
    for (const auto& e : errs) msg += "\n  - " + e;
    throw ConfigError(msg);
  }

  /// Parses a flat object on top of the defaults. Unknown keys and type
  /// mismatches are collected and reported together.
  static ExperimentConfig from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("configuration must be a JSON object");
    json merged = ExperimentConfig{}.to_json();
    std::vector<std::string> errs;
    for (const auto& [key, value] : j.items()) {
      if (!merged.contains(key)) {
        errs.push_back("unknown key '" + key + "'");
        continue;
      }
      const json& ref = merged[key];
      const bool ok = (ref.is_number() && value.is_number()) || (ref.is_boolean() && value.is_boolean()) ||
                      (ref.is_string() && value.is_string()) || (ref.is_array() && value.is_array());
      if (!ok) {
        errs.push_back("key '" + key + "' expects a " + std::string(ref.type_name()) + ", got " + value.type_name());
        continue;
      }
      if (ref.is_number_integer() && value.is_number_float()) {
        errs.push_back("key '" + key + "' expects an integer, got " + value.dump());
        continue;
      }
      if (ref.is_number_unsigned() && !(value.is_number_unsigned() || (value.is_number_integer() && value >= 0))) {
        errs.push_back("key '" + key + "' expects a non-negative integer");
        continue;
      }
      merged[key] = value;
    }
    ExperimentConfig c;
    try {
      c.parts = merged["parts"];
      c.beta = merged["beta"];
      c.gamma = merged["gamma"];
      c.alpha = merged["alpha"];
      c.lambda1 = merged["lambda1"];
      c.lambda2 = merged["lambda2"];
      c.p = merged["p"];
      c.a = merged["a"];
      c.input_height = merged["input_height"];
      c.input_width = merged["input_width"];
      c.backbone_widths = merged["backbone_widths"].get<std::vector<std::size_t>>();
      c.subnet_width = merged["subnet_width"];
      c.reduction = merged["reduction"];
      c.epochs = merged["epochs"];
      c.batches_per_epoch = merged["batches_per_epoch"];
      c.lr = merged["lr"];
      c.lr_decay_epochs = merged["lr_decay_epochs"].get<std::vector<std::size_t>>();
      c.lr_decay_factor = merged["lr_decay_factor"];
      c.momentum = merged["momentum"];
      c.weight_decay = merged["weight_decay"];
      c.random_erase = merged["random_erase"];
      c.flip = merged["flip"];
      c.seed = merged["seed"];
      c.extra_stripe_subnets = merged["extra_stripe_subnets"];
      c.attention = merged["attention"];
      c.bcca_loss = merged["bcca_loss"];
      c.part_reg = merged["part_reg"];
      c.holistic_reg = merged["holistic_reg"];
      c.hard_label = merged["hard_label"];
      c.data_seed = merged["data_seed"];
      c.train_ids = merged["train_ids"];
      c.train_images_per_id = merged["train_images_per_id"];
      c.test_ids = merged["test_ids"];
      c.test_images_per_id = merged["test_images_per_id"];
      c.queries_per_id = merged["queries_per_id"];
      c.family_size = merged["family_size"];
      c.mutations = merged["mutations"];
      c.cameras = merged["cameras"];
      c.max_shift = merged["max_shift"];
      c.appearance_jitter = merged["appearance_jitter"];
    } catch (const json::exception& e) {
      errs.push_back(std::string("malformed value: ") + e.what());
    }
    const std::string sv = merged["supervision_variant"];
    if (sv == "standard") c.supervision_variant = SupervisionVariant::kStandard;
    else if (sv == "one-hot") c.supervision_variant = SupervisionVariant::kOneHot;
    else if (sv == "no-filtration") c.supervision_variant = SupervisionVariant::kNoFiltration;
    else errs.push_back("supervision_variant must be one of standard, one-hot, no-filtration (got '" + sv + "')");
    const std::string av = merged["attention_variant"];
    if (av == "standard") c.attention_variant = AttentionVariant::kStandard;
    else if (av == "per-image") c.attention_variant = AttentionVariant::kPerImage;
    else if (av == "shared") c.attention_variant = AttentionVariant::kShared;
    else errs.push_back("attention_variant must be one of standard, per-image, shared (got '" + av + "')");
    if (errs.empty()) {
      const auto more = c.validation_errors();
      errs.insert(errs.end(), more.begin(), more.end());
    }
    if (!errs.empty()) {
      std::string msg = "invalid configuration:";
      for (const auto& e : errs) msg += "\n  - " + e;
      throw ConfigError(msg);
    }
    return c;
  }

  static ExperimentConfig parse(const std::string& text) {
    json j;
    try {
      j = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ConfigError(std::string("configuration is not valid JSON: ") + e.what());
    }
    return from_json(j);
  }

  /// Canonical serialization: sorted keys, no whitespace.
  std::string serialize() const { return to_json().dump(); }
};

/// Git blob hash (SHA-1 over "blob <len>\0<content>") as lowercase hex.
inline std::string content_hash(const std::string& content) {
  const std::string blob = "blob " + std::to_string(content.size()) + std::string(1, '\0') + content;
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(blob.data(), blob.size(), digest, &len, EVP_sha1(), nullptr) != 1)
    throw std::runtime_error("SHA-1 digest failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return os.str();
}

inline std::string config_hash(const ExperimentConfig& c) { return content_hash(c.serialize()); }

}  // namespace bcd
