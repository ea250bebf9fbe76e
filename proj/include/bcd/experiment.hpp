#pragma once

// Ablation rows, whole-experiment runs, and the post-training diagnostics:
// attention diversity and band alignment of the part profiles.

#include <string>
#include <vector>

#include "bcd/train.hpp"

namespace bcd {

/// Names accepted by apply_row, in table order.
inline const std::vector<std::string>& ablation_row_names() {
  static const std::vector<std::string> names{
      "baseline",      "baseline+",    "plain-ca",      "bcca",     "part-reg", "holistic-reg", "regularizers",
      "full",          "one-hot",      "no-filtration", "variant1", "variant2", "hard-label"};
  return names;
}

/// The configuration of one ablation row on top of `base`. Non-component
/// settings (data, optimization, seeds) are kept from `base`.
inline ExperimentConfig apply_row(ExperimentConfig c, const std::string& row) {
  auto set = [&c](bool stripes, bool attention, bool bcca, bool part, bool holistic) {
    c.extra_stripe_subnets = stripes;
    c.attention = attention;
    c.bcca_loss = bcca;
    c.part_reg = part;
    c.holistic_reg = holistic;
    c.supervision_variant = SupervisionVariant::kStandard;
    c.attention_variant = AttentionVariant::kStandard;
    c.hard_label = false;
  };
  if (row == "baseline") set(false, false, false, false, false);
  else if (row == "baseline+") set(true, false, false, false, false);
  else if (row == "plain-ca") set(true, true, false, false, false);
  else if (row == "bcca") set(true, true, true, false, false);
  else if (row == "part-reg") set(true, false, false, true, false);
  else if (row == "holistic-reg") set(true, false, false, false, true);
  else if (row == "regularizers") set(true, false, false, true, true);
  else if (row == "full") set(true, true, true, true, true);
  else if (row == "one-hot") {
    set(true, true, true, false, false);
    c.supervision_variant = SupervisionVariant::kOneHot;
  } else if (row == "no-filtration") {
    set(true, true, true, false, false);
    c.supervision_variant = SupervisionVariant::kNoFiltration;
  } else if (row == "variant1") {
    set(true, true, true, false, false);
    c.attention_variant = AttentionVariant::kPerImage;
  } else if (row == "variant2") {
    set(true, true, true, false, false);
    c.attention_variant = AttentionVariant::kShared;
  } else if (row == "hard-label") {
    set(true, false, false, true, true);
    c.hard_label = true;
  } else {
    std::string known;
    for (const auto& n : ablation_row_names()) known += (known.empty() ? "" : ", ") + n;
    throw ConfigError("unknown ablation row '" + row + "' (known: " + known + ")");
  }
  return c;
}

struct ExperimentResult {
  ExperimentConfig config;
  std::vector<EpochRecord> log;
  RetrievalMetrics metrics;
};

/// Generates the configured dataset, trains, and evaluates.
inline ExperimentResult run_experiment(const ExperimentConfig& c, const Dataset& ds,
                                       std::unique_ptr<BcdNet>* keep = nullptr) {
  auto model = std::make_unique<BcdNet>(c, ClassMap::build(ds).size());
  ExperimentResult r;
  r.config = c;
  r.log = train(*model, ds);
  r.metrics = evaluate_model(*model, ds);
  if (keep) *keep = std::move(model);
  return r;
}

/// Batch-mean attention C̄ᵏ per part, averaged over the given images in evaluation mode.
inline std::vector<std::vector<double>> mean_attention(BcdNet& model, const Dataset& ds,
                                                       const std::vector<std::size_t>& indices,
                                                       std::size_t chunk = 64) {
  require(model.config().attention, "mean_attention: the model has no attention modules");
  require(!indices.empty(), "mean_attention: no images");
  NoGradGuard guard;
  std::vector<std::vector<double>> sums(model.parts());
  for (std::size_t start = 0; start < indices.size(); start += chunk) {
    const std::size_t end = std::min(indices.size(), start + chunk);
    std::vector<std::size_t> part(indices.begin() + static_cast<std::ptrdiff_t>(start),
                                  indices.begin() + static_cast<std::ptrdiff_t>(end));
    const auto pass = model.forward(BcdNet::stack_images(ds, part), false);
    for (std::size_t k = 0; k < model.parts(); ++k) {
      const Tensor& w = pass.attention[k];
      const std::size_t n = w.dim(0), c = w.dim(1);
      sums[k].resize(c, 0.0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) sums[k][j] += w[i * c + j];
    }
  }
  for (auto& s : sums)
    for (auto& v : s) v /= static_cast<double>(indices.size());
  return sums;
}

/// Mean cosine similarity over all pairs of part vectors.
inline double mean_pairwise_cosine(const std::vector<std::vector<double>>& vectors) {
  require(vectors.size() >= 2, "mean_pairwise_cosine: need at least two vectors");
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < vectors.size(); ++a)
    for (std::size_t b = a + 1; b < vectors.size(); ++b) {
      total += similarity(vectors[a], vectors[b]);
      ++pairs;
    }
  return total / static_cast<double>(pairs);
}

/// Evaluation-mode part profiles żᵏ pooled over all given images.
inline std::vector<std::vector<double>> pooled_profiles(BcdNet& model, const Dataset& ds,
                                                        const std::vector<std::size_t>& indices,
                                                        std::size_t chunk = 64) {
  require(!indices.empty(), "pooled_profiles: no images");
  NoGradGuard guard;
  const std::size_t h = model.feature_height();
  std::vector<std::vector<double>> rows(model.parts(), std::vector<double>(h, 0.0));
  for (std::size_t start = 0; start < indices.size(); start += chunk) {
    const std::size_t end = std::min(indices.size(), start + chunk);
    std::vector<std::size_t> part(indices.begin() + static_cast<std::ptrdiff_t>(start),
                                  indices.begin() + static_cast<std::ptrdiff_t>(end));
    const auto pass = model.forward(BcdNet::stack_images(ds, part), false);
    const double weight = static_cast<double>(part.size());
    for (std::size_t k = 0; k < model.parts(); ++k) {
      const Tensor z = mean_keep_axis(pass.feature_maps[k], 2);
      for (std::size_t l = 0; l < h; ++l) rows[k][l] += weight * z[l];
    }
  }
  for (auto& r : rows) {
    double s = 0.0;
    for (double v : r) s += v;
    for (auto& v : r) v = s > 0.0 ? v / s : 1.0 / static_cast<double>(h);
  }
  return rows;
}

/// Fraction of each part profile's mass on its own row band.
inline std::vector<double> band_mass(const std::vector<std::vector<double>>& profiles) {
  const std::size_t parts = profiles.size();
  require(parts > 0, "band_mass: no profiles");
  const std::size_t h = profiles[0].size();
  const RegionPartition partition(h, parts);
  std::vector<double> out(parts, 0.0);
  for (std::size_t k = 0; k < parts; ++k)
    for (std::size_t l = partition.begin(k); l < partition.end(k); ++l) out[k] += profiles[k][l];
  return out;
}

}  // namespace bcd
