#pragma once

// One part sub-network: 1×1 conv + BN + ReLU, global max pooling, a second
// 1×1 conv + BN + ReLU (the part feature), and a bias-free identity classifier.

#include <string>
#include <vector>

#include "bcd/nn.hpp"

namespace bcd {

inline constexpr std::size_t kSubnetWidth = 512;
inline constexpr double kClassifierInitStddev = 0.01;

class PartSubnet {
 public:
  struct Output {
    Tensor feature;      // N×width, the part feature f
    Tensor logits;       // N×J; undefined when classification is skipped
    Tensor feature_map;  // N×width×H×W after the first conv, consumed by the spatial regularizers
  };

  PartSubnet(std::size_t in_channels, std::size_t width, std::size_t classes, Rng& rng)
      : conv1_(in_channels, width, rng), conv2_(width, width, rng),
        classifier_(gaussian({classes, width}, kClassifierInitStddev, rng)) {}

  std::size_t width() const { return conv1_.conv.out_channels(); }
  std::size_t classes() const { return classifier_.dim(0); }

  Output forward(const Tensor& input, bool training, bool classify = true) {
    require(input.rank() == 4 && input.dim(1) == conv1_.conv.in_channels(),
            "part subnet: expected N×" + std::to_string(conv1_.conv.in_channels()) + "×H×W, got " +
                shape_str(input.shape()));
    const std::size_t n = input.dim(0);
    Output out;
    out.feature_map = relu(conv1_(input, training));
    Tensor pooled = reshape(global_max_pool(out.feature_map), {n, width(), 1, 1});
    out.feature = reshape(relu(conv2_(pooled, training)), {n, width()});
    if (classify) out.logits = matmul(out.feature, transpose(classifier_));
    return out;
  }

  void collect(ParamList& list, const std::string& prefix) {
    conv1_.collect(list, prefix + ".conv1");
    conv2_.collect(list, prefix + ".conv2");
    list.add(prefix + ".classifier", classifier_);
  }

 private:
  ConvBn conv1_;
  ConvBn conv2_;
  Tensor classifier_;  // J × width, w_j in row j
};

/// h_i = [f_i^1; ...; f_i^K]: concatenation of N×d part features along the feature axis.
inline Tensor assemble_holistic(const std::vector<Tensor>& part_features) {
  require(!part_features.empty(), "assemble_holistic: no part features");
  return concat(part_features, 1);
}

/// Rows [k·H/K, (k+1)·H/K) of the feature batch: the input of stripe sub-network k.
inline Tensor stripe_input(const Tensor& features, std::size_t k, std::size_t parts) {
  require(features.rank() == 4, "stripe_input: expected N×C×H×W, got " + shape_str(features.shape()));
  const std::size_t h = features.dim(2);
  if (parts == 0 || h % parts != 0)
    throw ConfigError("feature height " + std::to_string(h) + " not divisible by K=" + std::to_string(parts));
  require(k < parts, "stripe_input: part index out of range");
  const std::size_t rows = h / parts;
  return slice(features, 2, k * rows, (k + 1) * rows);
}

}  // namespace bcd
