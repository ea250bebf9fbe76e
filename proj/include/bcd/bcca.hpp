#pragma once

// Batch coherence-guided channel attention: GMP, two 1×1 conv + BN layers
// with a sigmoid on top, channel-wise recalibration of the backbone
// features, and the cosine loss between the batch-mean weights and the
// batch-estimated supervision column.

#include <string>
#include <vector>

#include "bcd/cosine.hpp"
#include "bcd/nn.hpp"

namespace bcd {

inline constexpr std::size_t kDefaultReduction = 16;

class Bcca {
 public:
  Bcca(std::size_t channels, std::size_t reduction, Rng& rng) {
    if (reduction == 0 || channels % reduction != 0)
      throw ConfigError("attention channels " + std::to_string(channels) + " not divisible by reduction " +
                        std::to_string(reduction));
    squeeze_ = ConvBn(channels, channels / reduction, rng);
    excite_ = ConvBn(channels / reduction, channels, rng);
  }

  std::size_t channels() const { return excite_.conv.out_channels(); }
  std::size_t hidden() const { return squeeze_.conv.out_channels(); }

  /// Per-image channel weights in [0,1]: features N×C×H×W -> N×C.
  Tensor forward(const Tensor& features, bool training) {
    require(features.rank() == 4 && features.dim(1) == channels(),
            "bcca: expected N×" + std::to_string(channels()) + "×H×W, got " + shape_str(features.shape()));
    const std::size_t n = features.dim(0);
    Tensor pooled = reshape(global_max_pool(features), {n, channels(), 1, 1});
    Tensor hidden = relu(squeeze_(pooled, training));
    return reshape(sigmoid(excite_(hidden, training)), {n, channels()});
  }

  void collect(ParamList& list, const std::string& prefix) {
    squeeze_.collect(list, prefix + ".squeeze");
    excite_.collect(list, prefix + ".excite");
  }

 private:
  ConvBn squeeze_;
  ConvBn excite_;
};

/// T̃ = C ⊗ T: weights N×C (per image) or C (shared by the batch).
inline Tensor recalibrate(const Tensor& weights, const Tensor& features) { return channel_scale(features, weights); }

/// Mean of the per-image weights over the batch: N×C -> C.
inline Tensor batch_mean(const Tensor& weights) {
  require(weights.rank() == 2, "batch_mean: expected N×C, got " + shape_str(weights.shape()));
  return mean_axis(weights, 0);
}

/// 1 - cos(mean weights, target). A fully filtered (all-zero) target yields
/// a constant 0 that carries no gradient. The target is never differentiated.
inline Tensor bcca_loss(const Tensor& mean_weights, const std::vector<double>& target) {
  require(mean_weights.rank() == 1 && mean_weights.numel() == target.size(),
          "bcca_loss: weights " + shape_str(mean_weights.shape()) + " vs target of length " +
              std::to_string(target.size()));
  bool all_zero = true;
  for (double v : target) all_zero = all_zero && v == 0.0;
  if (all_zero) return Tensor::scalar(0.0);
  return cosine_distance(mean_weights, Tensor({target.size()}, target));
}

/// Per-image supervision ("Variant 1"): mean over images of 1 - cos(C_i, target).
inline Tensor bcca_loss_per_image(const Tensor& weights, const std::vector<double>& target) {
  require(weights.rank() == 2 && weights.dim(1) == target.size(),
          "bcca_loss_per_image: weights " + shape_str(weights.shape()) + " vs target of length " +
              std::to_string(target.size()));
  bool all_zero = true;
  for (double v : target) all_zero = all_zero && v == 0.0;
  if (all_zero) return Tensor::scalar(0.0);
  const std::size_t n = weights.dim(0);
  std::vector<double> tiled;
  tiled.reserve(n * target.size());
  for (std::size_t i = 0; i < n; ++i) tiled.insert(tiled.end(), target.begin(), target.end());
  return mean(cosine_distance_rows(weights, Tensor(weights.shape(), std::move(tiled))));
}

}  // namespace bcd
