#pragma once

// The full part-aware network: backbone, K attention modules, K part
// sub-networks, optional K stripe sub-networks, and the loss assembly.

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "bcd/backbone.hpp"
#include "bcd/bcca.hpp"
#include "bcd/config.hpp"
#include "bcd/objective.hpp"
#include "bcd/part_subnets.hpp"
#include "bcd/part_supervision.hpp"
#include "bcd/retrieval.hpp"
#include "bcd/spatial_reg.hpp"

namespace bcd {

/// Everything one forward pass produces. Attention fields are empty when
/// attention is disabled; stripe logits exist in training mode only.
struct ForwardPass {
  Tensor features;                      // T, N×C×H×W
  SupervisionMatrix supervision;        // estimated from T's values
  std::vector<Tensor> attention;        // per part, N×C
  std::vector<Tensor> mean_attention;   // per part, C
  std::vector<Tensor> part_features;    // per part, N×width
  std::vector<Tensor> feature_maps;     // per part, N×width×H×W
  std::vector<Tensor> logits;           // per part, N×J (training only)
  std::vector<Tensor> profiles;         // per part, H
  Tensor holistic_profile;              // H
  Tensor holistic;                      // N×(K·width)
  std::vector<Tensor> stripe_logits;    // per part, N×J (training only)
};

class BcdNet {
 public:
  BcdNet(const ExperimentConfig& config, std::size_t classes) : config_(config), backbone_(config.backbone()) {
    config.validate();
    require(classes >= 1, "BcdNet: need at least one identity class");
    Rng rng(detail::mix_seed(config.seed, 0xbcd));
    const std::size_t c = backbone_.config().channels();
    for (std::size_t k = 0; k < config.parts; ++k) {
      if (config.attention) {
        attention_.emplace_back(c, config.reduction, rng);
        shared_mean_.emplace_back(c, 0.5);
      }
      subnets_.emplace_back(c, config.subnet_width, classes, rng);
    }
    if (config.extra_stripe_subnets)
      for (std::size_t k = 0; k < config.parts; ++k) stripes_.emplace_back(c, config.subnet_width, classes, rng);
    collect(params_);
  }

  BcdNet(const BcdNet&) = delete;
  BcdNet& operator=(const BcdNet&) = delete;

  const ExperimentConfig& config() const { return config_; }
  std::size_t parts() const { return config_.parts; }
  std::size_t feature_height() const { return backbone_.config().feature_height(); }
  std::size_t embedding_dim() const { return config_.parts * config_.subnet_width; }
  ParamList& params() { return params_; }

  /// Training mode uses batch statistics and builds classifier and stripe paths;
  /// evaluation mode uses running statistics and produces embeddings only.
  ForwardPass forward(const Tensor& images, bool training) {
    ForwardPass out;
    out.features = backbone_.forward(images, training);
    const Tensor& t = out.features;
    out.supervision = estimate_supervision(t, config_.parts, config_.beta, config_.supervision_variant);
    for (std::size_t k = 0; k < config_.parts; ++k) {
      Tensor input = t;
      if (config_.attention) {
        Tensor w = attention_[k].forward(t, training);
        Tensor wbar = batch_mean(w);
        if (config_.attention_variant == AttentionVariant::kShared) {
          if (training) {
            update_shared_mean(k, wbar);
            input = recalibrate(wbar, t);
          } else {
            input = recalibrate(Tensor({shared_mean_[k].size()}, shared_mean_[k]), t);
          }
        } else {
          input = recalibrate(w, t);
        }
        out.attention.push_back(w);
        out.mean_attention.push_back(wbar);
      }
      auto sub = subnets_[k].forward(input, training, training);
      out.part_features.push_back(sub.feature);
      out.feature_maps.push_back(sub.feature_map);
      if (training) out.logits.push_back(sub.logits);
      out.profiles.push_back(part_profile(sub.feature_map));
    }
    out.holistic_profile = holistic_profile(out.feature_maps);
    out.holistic = assemble_holistic(out.part_features);
    if (training)
      for (std::size_t k = 0; k < stripes_.size(); ++k)
        out.stripe_logits.push_back(stripes_[k].forward(stripe_input(t, k, config_.parts), true, true).logits);
    return out;
  }

  /// The loss terms of a training pass. `classes` index the classifier rows;
  /// `identities` drive the triplet mining.
  LossTerms losses(const ForwardPass& pass, const std::vector<std::size_t>& classes,
                   const std::vector<int>& identities) const {
    require(!pass.logits.empty(), "losses: forward pass was not run in training mode");
    LossTerms terms;
    const std::size_t h = feature_height();
    for (std::size_t k = 0; k < config_.parts; ++k) {
      terms.id.push_back(cross_entropy_part(pass.logits[k], classes));
      if (config_.attention && config_.bcca_loss) {
        const auto target = pass.supervision.column(k);
        terms.bcca.push_back(config_.attention_variant == AttentionVariant::kPerImage
                                 ? bcca_loss_per_image(pass.attention[k], target)
                                 : bcca_loss(pass.mean_attention[k], target));
      }
      if (config_.part_reg)
        terms.part_reg.push_back(
            kl_loss(part_target(k, config_.parts, h, config_.effective_gamma()), pass.profiles[k]));
    }
    if (config_.holistic_reg) terms.holistic_reg = kl_loss(holistic_target(h), pass.holistic_profile);
    terms.triplet = batch_hard_triplet(pass.holistic, identities, config_.alpha);
    for (const auto& logits : pass.stripe_logits) terms.stripe_id.push_back(cross_entropy_part(logits, classes));
    return terms;
  }

  LossWeights loss_weights() const {
    LossWeights w;
    w.alpha = config_.alpha;
    w.lambda1 = config_.lambda1;
    w.lambda2 = config_.lambda2;
    w.bcca_loss = config_.attention && config_.bcca_loss;
    w.part_reg = config_.part_reg;
    w.holistic_reg = config_.holistic_reg;
    w.stripe_subnets = config_.extra_stripe_subnets;
    return w;
  }

  /// Evaluation-mode holistic embeddings, N×(K·width), without a graph.
  Tensor embed(const Tensor& images) {
    NoGradGuard guard;
    return forward(images, false).holistic;
  }

  /// Embeds dataset samples in fixed-size chunks, in index order.
  EmbeddingTable embed_samples(const Dataset& ds, const std::vector<std::size_t>& indices, std::size_t chunk = 64) {
    EmbeddingTable table;
    table.dim = embedding_dim();
    for (std::size_t start = 0; start < indices.size(); start += chunk) {
      const std::size_t end = std::min(indices.size(), start + chunk);
      std::vector<std::size_t> part(indices.begin() + static_cast<std::ptrdiff_t>(start),
                                    indices.begin() + static_cast<std::ptrdiff_t>(end));
      Tensor h = embed(stack_images(ds, part));
      table.data.insert(table.data.end(), h.values().begin(), h.values().end());
      for (auto i : part) {
        table.identities.push_back(ds.samples[i].identity);
        table.cameras.push_back(ds.samples[i].camera);
      }
    }
    return table;
  }

  /// Stacks dataset images into an N×3×H×W tensor.
  static Tensor stack_images(const Dataset& ds, const std::vector<std::size_t>& indices) {
    require(!indices.empty(), "stack_images: no indices");
    const std::size_t per = 3 * ds.height * ds.width;
    std::vector<double> data;
    data.reserve(indices.size() * per);
    for (auto i : indices) {
      require(i < ds.samples.size(), "stack_images: sample index out of range");
      data.insert(data.end(), ds.samples[i].image.begin(), ds.samples[i].image.end());
    }
    return Tensor({indices.size(), 3, ds.height, ds.width}, std::move(data));
  }

 private:
  void collect(ParamList& list) {
    backbone_.collect(list, "backbone");
    for (std::size_t k = 0; k < attention_.size(); ++k) {
      attention_[k].collect(list, "attention" + std::to_string(k));
      list.add_buffer("attention" + std::to_string(k) + ".shared_mean", shared_mean_[k]);
    }
    for (std::size_t k = 0; k < subnets_.size(); ++k) subnets_[k].collect(list, "part" + std::to_string(k));
    for (std::size_t k = 0; k < stripes_.size(); ++k) stripes_[k].collect(list, "stripe" + std::to_string(k));
  }

  void update_shared_mean(std::size_t k, const Tensor& wbar) {
    auto& m = shared_mean_[k];
    for (std::size_t c = 0; c < m.size(); ++c)
      m[c] = (1.0 - kBatchNormMomentum) * m[c] + kBatchNormMomentum * wbar[c];
  }

  ExperimentConfig config_;
  Backbone backbone_;
  std::vector<Bcca> attention_;
  std::vector<std::vector<double>> shared_mean_;  // running batch-mean weights, used at evaluation
  std::vector<PartSubnet> subnets_;
  std::vector<PartSubnet> stripes_;
  ParamList params_;
};

}  // namespace bcd
