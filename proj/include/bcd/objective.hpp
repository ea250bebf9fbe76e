#pragma once

// PK batch sampling, the identity and triplet losses, and the weighted sum
// that forms the training objective.

#include <algorithm>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "bcd/cosine.hpp"
#include "bcd/nn.hpp"

namespace bcd {

/// Sample indices grouped by identity, in ascending identity order.
struct IdentityIndex {
  std::vector<int> identities;
  std::vector<std::vector<std::size_t>> samples;

  static IdentityIndex build(const std::vector<int>& labels) {
    std::map<int, std::vector<std::size_t>> by_id;
    for (std::size_t i = 0; i < labels.size(); ++i) by_id[labels[i]].push_back(i);
    IdentityIndex idx;
    for (auto& [id, list] : by_id) {
      idx.identities.push_back(id);
      idx.samples.push_back(std::move(list));
    }
    return idx;
  }
};

/// P identities × A images. `samples[i]` is a dataset index, `identities[i]` its identity.
struct PkBatch {
  std::size_t p = 0;
  std::size_t a = 0;
  std::vector<std::size_t> samples;
  std::vector<int> identities;

  std::size_t size() const { return samples.size(); }
};

/// Identities without replacement; images without replacement when an
/// identity has at least A of them, with replacement otherwise.
inline PkBatch sample_pk(const IdentityIndex& index, std::size_t p, std::size_t a, Rng& rng) {
  if (p == 0 || a == 0) throw ConfigError("P and A must be positive");
  if (index.identities.size() < p)
    throw ConfigError("PK sampling needs " + std::to_string(p) + " identities, dataset has " +
                      std::to_string(index.identities.size()));
  std::vector<std::size_t> order(index.identities.size());
  std::iota(order.begin(), order.end(), 0);
  // Partial Fisher-Yates: the first p slots are a uniform draw without replacement.
  for (std::size_t i = 0; i < p; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, order.size() - 1);
    std::swap(order[i], order[pick(rng)]);
  }
  PkBatch batch;
  batch.p = p;
  batch.a = a;
  for (std::size_t i = 0; i < p; ++i) {
    const auto& pool = index.samples[order[i]];
    if (pool.empty()) throw ConfigError("identity " + std::to_string(index.identities[order[i]]) + " has no images");
    std::vector<std::size_t> chosen;
    if (pool.size() >= a) {
      std::vector<std::size_t> tmp = pool;
      for (std::size_t j = 0; j < a; ++j) {
        std::uniform_int_distribution<std::size_t> pick(j, tmp.size() - 1);
        std::swap(tmp[j], tmp[pick(rng)]);
      }
      chosen.assign(tmp.begin(), tmp.begin() + static_cast<std::ptrdiff_t>(a));
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
      for (std::size_t j = 0; j < a; ++j) chosen.push_back(pool[pick(rng)]);
    }
    for (auto s : chosen) {
      batch.samples.push_back(s);
      batch.identities.push_back(index.identities[order[i]]);
    }
  }
  return batch;
}

/// Identity loss of one sub-network: mean softmax cross-entropy.
inline Tensor cross_entropy_part(const Tensor& logits, const std::vector<std::size_t>& labels) {
  return softmax_cross_entropy(logits, labels);
}

/// Hardest-positive / hardest-negative selection for one batch, exposed for diagnostics.
struct TripletSelection {
  std::vector<std::size_t> positive;  // per anchor
  std::vector<std::size_t> negative;  // per anchor
};

inline TripletSelection select_batch_hard(const Tensor& distances, const std::vector<int>& labels) {
  const std::size_t n = labels.size();
  require(distances.rank() == 2 && distances.dim(0) == n && distances.dim(1) == n,
          "select_batch_hard: distance matrix " + shape_str(distances.shape()) + " for " + std::to_string(n) +
              " labels");
  TripletSelection sel;
  for (std::size_t a = 0; a < n; ++a) {
    std::size_t pos = n, neg = n;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = distances[a * n + j];
      if (labels[j] == labels[a]) {
        if (pos == n || d > distances[a * n + pos]) pos = j;
      } else if (neg == n || d < distances[a * n + neg]) {
        neg = j;
      }
    }
    if (neg == n) throw ConfigError("batch-hard triplet: identity " + std::to_string(labels[a]) + " has no negatives");
    sel.positive.push_back(pos);
    sel.negative.push_back(neg);
  }
  return sel;
}

/// Batch-hard triplet loss on cosine distance. The hardest positive ranges
/// over every same-identity image, the anchor included. The hinge sum is
/// divided by the number of violating anchors; no violations gives 0.
inline Tensor batch_hard_triplet(const Tensor& embeddings, const std::vector<int>& labels, double alpha) {
  require(embeddings.rank() == 2 && embeddings.dim(0) == labels.size(),
          "batch_hard_triplet: " + shape_str(embeddings.shape()) + " embeddings for " +
              std::to_string(labels.size()) + " labels");
  const std::size_t n = labels.size();
  Tensor dist = pairwise_cosine_distance(embeddings);
  const auto sel = select_batch_hard(dist, labels);
  std::vector<std::size_t> pos_idx(n), neg_idx(n);
  for (std::size_t a = 0; a < n; ++a) {
    pos_idx[a] = a * n + sel.positive[a];
    neg_idx[a] = a * n + sel.negative[a];
  }
  Tensor hinge = relu(add_scalar(sub(gather(dist, pos_idx), gather(dist, neg_idx)), alpha));
  std::size_t violating = 0;
  for (double v : hinge.values()) violating += v > 0.0 ? 1 : 0;
  if (violating == 0) return Tensor::scalar(0.0);
  return scale(sum(hinge), 1.0 / static_cast<double>(violating));
}

/// Weights and switches of the objective.
struct LossWeights {
  double alpha = 0.20;
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  bool bcca_loss = true;
  bool part_reg = true;
  bool holistic_reg = true;
  bool stripe_subnets = true;
};

/// Individual terms of one forward pass; disabled terms are left empty/undefined.
struct LossTerms {
  std::vector<Tensor> id;         // K part cross-entropies
  Tensor triplet;                 // on the holistic embedding
  std::vector<Tensor> bcca;       // K attention supervision terms
  std::vector<Tensor> part_reg;   // K part-level KL terms
  Tensor holistic_reg;            // holistic KL term
  std::vector<Tensor> stripe_id;  // K stripe cross-entropies (training only)
};

/// Scalar breakdown of a LossTerms for logging.
struct LossValues {
  double id = 0.0;
  double triplet = 0.0;
  double bcca = 0.0;
  double part_reg = 0.0;
  double holistic_reg = 0.0;
  double stripe_id = 0.0;
  double total = 0.0;
};

namespace detail {

inline void accumulate(Tensor& acc, const Tensor& term, double weight = 1.0) {
  Tensor t = weight == 1.0 ? term : scale(term, weight);
  acc = acc.defined() ? add(acc, t) : t;
}

inline double value_sum(const std::vector<Tensor>& terms) {
  double s = 0.0;
  for (const auto& t : terms) s += t.item();
  return s;
}

}  // namespace detail

/// L = sum_k L_id + L_tp + lambda1 sum_k L_C + lambda2 (L_h + sum_k L_p) (+ stripe identity terms).
inline Tensor total_loss(const LossTerms& terms, const LossWeights& w, LossValues* values = nullptr) {
  Tensor total;
  for (const auto& t : terms.id) detail::accumulate(total, t);
  if (terms.triplet.defined()) detail::accumulate(total, terms.triplet);
  if (w.bcca_loss)
    for (const auto& t : terms.bcca) detail::accumulate(total, t, w.lambda1);
  if (w.holistic_reg && terms.holistic_reg.defined()) detail::accumulate(total, terms.holistic_reg, w.lambda2);
  if (w.part_reg)
    for (const auto& t : terms.part_reg) detail::accumulate(total, t, w.lambda2);
  if (w.stripe_subnets)
    for (const auto& t : terms.stripe_id) detail::accumulate(total, t);
  if (!total.defined()) total = Tensor::scalar(0.0);
  if (values) {
    values->id = detail::value_sum(terms.id);
    values->triplet = terms.triplet.defined() ? terms.triplet.item() : 0.0;
    values->bcca = w.bcca_loss ? detail::value_sum(terms.bcca) : 0.0;
    values->part_reg = w.part_reg ? detail::value_sum(terms.part_reg) : 0.0;
    values->holistic_reg = w.holistic_reg && terms.holistic_reg.defined() ? terms.holistic_reg.item() : 0.0;
    values->stripe_id = w.stripe_subnets ? detail::value_sum(terms.stripe_id) : 0.0;
    values->total = total.item();
  }
  return total;
}

}  // namespace bcd
