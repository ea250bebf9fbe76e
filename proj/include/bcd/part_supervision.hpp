#pragma once

// Batch-level part-channel supervision: for every channel, count in which
// horizontal band each image's maximum response falls, then normalize the
// counts into a relevance row of the C×K supervision matrix.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "bcd/tensor.hpp"

namespace bcd {

/// K equal row bands over a height-H grid; band k covers rows [k·H/K, (k+1)·H/K).
class RegionPartition {
 public:
  RegionPartition(std::size_t height, std::size_t parts) : height_(height), parts_(parts) {
    if (parts == 0 || height == 0 || height % parts != 0)
      throw ConfigError("height " + std::to_string(height) + " cannot be split into " + std::to_string(parts) +
                        " equal bands");
  }

  std::size_t height() const { return height_; }
  std::size_t parts() const { return parts_; }
  std::size_t rows_per_part() const { return height_ / parts_; }
  std::size_t begin(std::size_t k) const { return k * rows_per_part(); }
  std::size_t end(std::size_t k) const { return (k + 1) * rows_per_part(); }
  std::size_t region_of_row(std::size_t row) const { return row / rows_per_part(); }

 private:
  std::size_t height_;
  std::size_t parts_;
};

enum class SupervisionVariant {
  kStandard,       // v / max(v), with filtration
  kOneHot,         // argmax entry set to 1, with filtration
  kNoFiltration,   // v / max(v), filtration skipped
};

/// C×K matrix stored row-major; row c is the relevance of channel c to each part.
struct SupervisionMatrix {
  std::size_t channels = 0;
  std::size_t parts = 0;
  std::vector<double> values;

  double operator()(std::size_t c, std::size_t k) const { return values[c * parts + k]; }

  /// Column k: the target for the k-th attention module.
  std::vector<double> column(std::size_t k) const {
    std::vector<double> col(channels);
    for (std::size_t c = 0; c < channels; ++c) col[c] = values[c * parts + k];
    return col;
  }

  bool column_is_zero(std::size_t k) const {
    for (std::size_t c = 0; c < channels; ++c)
      if (values[c * parts + k] != 0.0) return false;
    return true;
  }

  Tensor as_tensor() const { return Tensor({channels, parts}, values); }
};

/// M_c: channel c of every image, N×H×W.
inline Tensor stack_channel(const Tensor& features, std::size_t c) {
  require(features.rank() == 4, "stack_channel: expected N×C×H×W, got " + shape_str(features.shape()));
  const std::size_t n = features.dim(0), channels = features.dim(1), hw = features.dim(2) * features.dim(3);
  require(c < channels, "stack_channel: channel " + std::to_string(c) + " out of range for C=" +
                            std::to_string(channels));
  std::vector<double> out(n * hw);
  for (std::size_t i = 0; i < n; ++i)
    std::copy_n(features.vec().data() + (i * channels + c) * hw, hw, out.data() + i * hw);
  return Tensor({n, features.dim(2), features.dim(3)}, std::move(out));
}

/// v_c: how many of the N slices have their maximum (first in row-major order) in each band.
inline std::vector<std::uint32_t> group_channels(const Tensor& stacked, const RegionPartition& partition) {
  require(stacked.rank() == 3, "group_channels: expected N×H×W, got " + shape_str(stacked.shape()));
  require(stacked.dim(1) == partition.height(), "group_channels: slice height " + std::to_string(stacked.dim(1)) +
                                                    " does not match partition height " +
                                                    std::to_string(partition.height()));
  const std::size_t n = stacked.dim(0), w = stacked.dim(2), hw = stacked.dim(1) * w;
  std::vector<std::uint32_t> counts(partition.parts(), 0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* p = stacked.vec().data() + i * hw;
    std::size_t best = 0;
    for (std::size_t j = 1; j < hw; ++j)
      if (p[j] > p[best]) best = j;
    ++counts[partition.region_of_row(best / w)];
  }
  return counts;
}

/// ṽ_c: all zeros when max(v) < floor(beta·N); otherwise v / max(v).
inline std::vector<double> normalize_relevance(const std::vector<std::uint32_t>& counts, std::size_t batch_size,
                                               double beta, SupervisionVariant variant = SupervisionVariant::kStandard) {
  require(batch_size > 0, "normalize_relevance: batch size must be positive");
  require(beta > 0.0 && beta <= 1.0, "normalize_relevance: beta must lie in (0, 1]");
  require(!counts.empty(), "normalize_relevance: empty count vector");
  std::uint64_t total = 0;
  std::size_t arg = 0;
  for (std::size_t k = 0; k < counts.size(); ++k) {
    total += counts[k];
    if (counts[k] > counts[arg]) arg = k;
  }
  require(total == batch_size, "normalize_relevance: counts sum to " + std::to_string(total) + ", expected N=" +
                                   std::to_string(batch_size));
  const double peak = counts[arg];
  const auto threshold = std::floor(beta * static_cast<double>(batch_size));
  std::vector<double> out(counts.size(), 0.0);
  if (variant != SupervisionVariant::kNoFiltration && peak < threshold) return out;
  if (variant == SupervisionVariant::kOneHot) {
    out[arg] = 1.0;
    return out;
  }
  for (std::size_t k = 0; k < counts.size(); ++k) out[k] = counts[k] / peak;
  return out;
}

/// Ĉ for one batch of backbone features T (N×C×H×W). Values only; no gradient.
inline SupervisionMatrix estimate_supervision(const Tensor& features, std::size_t parts, double beta,
                                              SupervisionVariant variant = SupervisionVariant::kStandard) {
  require(features.rank() == 4, "estimate_supervision: expected N×C×H×W, got " + shape_str(features.shape()));
  const RegionPartition partition(features.dim(2), parts);
  SupervisionMatrix m;
  m.channels = features.dim(1);
  m.parts = parts;
  m.values.reserve(m.channels * parts);
  for (std::size_t c = 0; c < m.channels; ++c) {
    const auto row =
        normalize_relevance(group_channels(stack_channel(features, c), partition), features.dim(0), beta, variant);
    m.values.insert(m.values.end(), row.begin(), row.end());
  }
  return m;
}

}  // namespace bcd
