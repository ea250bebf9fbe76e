#pragma once

// Toy convolutional feature extractor producing the feature batch T.
// Each stage is a stride-2 2×2 patch convolution (space-to-depth followed by
// a 1×1 conv), batch norm and ReLU.

#include <cstdint>
#include <string>
#include <vector>

#include "bcd/nn.hpp"

namespace bcd {

struct BackboneConfig {
  std::size_t input_height = 96;
  std::size_t input_width = 32;
  std::vector<std::size_t> stage_widths{16, 32, 64};
  std::uint64_t seed = 1;

  std::size_t downsample() const { return std::size_t{1} << stage_widths.size(); }
  std::size_t channels() const { return stage_widths.back(); }
  std::size_t feature_height() const { return input_height / downsample(); }
  std::size_t feature_width() const { return input_width / downsample(); }

  /// 384×128 input with the 16× stride left after removing the last down-sampling.
  static BackboneConfig reference_scale() {
    BackboneConfig c;
    c.input_height = 384;
    c.input_width = 128;
    c.stage_widths = {16, 32, 64, 64};
    return c;
  }
};

/// Throws ConfigError when the grid does not divide into `parts` row bands.
inline void validate_backbone(const BackboneConfig& c, std::size_t parts) {
  if (c.stage_widths.empty()) throw ConfigError("backbone needs at least one stage");
  for (auto w : c.stage_widths)
    if (w == 0) throw ConfigError("backbone stage width must be positive");
  const auto ds = c.downsample();
  if (c.input_height % ds != 0 || c.input_width % ds != 0)
    throw ConfigError("input " + std::to_string(c.input_height) + "x" + std::to_string(c.input_width) +
                      " is not divisible by the downsample factor " + std::to_string(ds));
  if (parts == 0 || c.feature_height() % parts != 0)
    throw ConfigError("feature height " + std::to_string(c.feature_height()) + " is not divisible by K=" +
                      std::to_string(parts));
}

class Backbone {
 public:
  explicit Backbone(const BackboneConfig& config) : config_(config) {
    Rng rng(config.seed);
    std::size_t in = 3;
    for (auto w : config.stage_widths) {
      stages_.emplace_back(in * 4, w, rng);
      in = w;
    }
  }

  const BackboneConfig& config() const { return config_; }

  /// images N×3×H_in×W_in in [0,1] -> N×C×H×W, non-negative.
  Tensor forward(const Tensor& images, bool training) {
    require(images.rank() == 4 && images.dim(1) == 3 && images.dim(2) == config_.input_height &&
                images.dim(3) == config_.input_width,
            "backbone: expected N×3×" + std::to_string(config_.input_height) + "×" +
                std::to_string(config_.input_width) + " images, got " + shape_str(images.shape()));
    for (double v : images.values())
      require(v >= 0.0 && v <= 1.0, "backbone: image values must lie in [0,1]");
    Tensor x = images;
    for (auto& stage : stages_) x = relu(stage(space_to_depth(x, 2), training));
    return x;
  }

  void collect(ParamList& list, const std::string& prefix = "backbone") {
    for (std::size_t s = 0; s < stages_.size(); ++s) stages_[s].collect(list, prefix + ".stage" + std::to_string(s));
  }

 private:
  BackboneConfig config_;
  std::vector<ConvBn> stages_;
};

}  // namespace bcd
