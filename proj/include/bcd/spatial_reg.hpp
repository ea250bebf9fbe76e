#pragma once

// Height-profile regularizers. A profile is the batch-, channel- and
// width-averaged response per feature-map row, L1-normalized. The part-level
// term pulls sub-network k's profile toward a band-shaped target; the
// holistic term pulls the average over all sub-networks toward uniform.

#include <cmath>
#include <string>
#include <vector>

#include "bcd/ops.hpp"

namespace bcd {

/// Guard for log arguments.
inline constexpr double kLogEps = 1e-12;

/// ż for one sub-network's post-conv1 maps F (N×C1×H×W). An all-zero map
/// yields the uniform profile as a constant.
inline Tensor part_profile(const Tensor& feature_map) {
  require(feature_map.rank() == 4, "part_profile: expected N×C×H×W, got " + shape_str(feature_map.shape()));
  Tensor rows = mean_keep_axis(feature_map, 2);
  double total = 0.0;
  for (double v : rows.values()) total += std::abs(v);
  const std::size_t h = feature_map.dim(2);
  if (total == 0.0) return Tensor::full({h}, 1.0 / static_cast<double>(h));
  return l1_normalize(rows);
}

/// ż_h: profile of all K maps concatenated along the channel axis.
inline Tensor holistic_profile(const std::vector<Tensor>& feature_maps) {
  require(!feature_maps.empty(), "holistic_profile: no feature maps");
  return part_profile(concat(feature_maps, 1));
}

/// Feasible range of gamma for a K-part target over H rows.
struct GammaBand {
  double lo;
  double hi;
};

inline GammaBand gamma_band(std::size_t parts, std::size_t height) {
  return {1.0 / static_cast<double>(height), static_cast<double>(parts) / static_cast<double>(height)};
}

inline void validate_gamma(double gamma, std::size_t parts, std::size_t height) {
  if (parts == 0 || height == 0 || height % parts != 0)
    throw ConfigError("height " + std::to_string(height) + " is not divisible by K=" + std::to_string(parts));
  const auto band = gamma_band(parts, height);
  constexpr double tol = 1e-12;
  if (!(gamma >= band.lo - tol && gamma <= band.hi + tol))
    throw ConfigError("gamma " + std::to_string(gamma) + " outside feasible band [" + std::to_string(band.lo) + ", " +
                      std::to_string(band.hi) + "] for K=" + std::to_string(parts) + ", H=" + std::to_string(height));
}

/// ẑ^k: gamma on the rows of band k, (K - gamma·H) / (H·(K-1)) elsewhere.
inline std::vector<double> part_target(std::size_t k, std::size_t parts, std::size_t height, double gamma) {
  validate_gamma(gamma, parts, height);
  require(k < parts, "part_target: part index " + std::to_string(k) + " out of range for K=" + std::to_string(parts));
  const std::size_t rows = height / parts;
  const double h = static_cast<double>(height), kk = static_cast<double>(parts);
  const double off = parts > 1 ? std::max(0.0, (kk - gamma * h) / (h * (kk - 1.0))) : 0.0;
  std::vector<double> target(height, off);
  for (std::size_t l = k * rows; l < (k + 1) * rows; ++l) target[l] = gamma;
  return target;
}

/// ẑ_h: the uniform profile.
inline std::vector<double> holistic_target(std::size_t height) {
  return std::vector<double>(height, 1.0 / static_cast<double>(height));
}

/// sum_l t(l)·log(t(l) / p(l)) with 0·log(0/q) := 0. The prediction is
/// floored at kLogEps inside the log; the target carries no gradient.
inline Tensor kl_loss(const std::vector<double>& target, const Tensor& prediction) {
  require(prediction.rank() == 1 && prediction.numel() == target.size(),
          "kl_loss: target length " + std::to_string(target.size()) + " vs prediction " +
              shape_str(prediction.shape()));
  const std::size_t h = target.size();
  std::vector<double> log_target(h, 0.0);
  for (std::size_t l = 0; l < h; ++l) {
    require(target[l] >= 0.0, "kl_loss: negative target entry");
    if (target[l] > 0.0) log_target[l] = std::log(target[l]);
  }
  Tensor log_pred = log(maximum(prediction, Tensor::full({h}, kLogEps)));
  Tensor diff = sub(Tensor({h}, std::move(log_target)), log_pred);
  return sum(mul(Tensor({h}, target), diff));
}

}  // namespace bcd
