#pragma once

// Cosine-similarity retrieval with Rank-k (CMC) and mAP under the
// same-identity-same-camera exclusion rule.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "bcd/tensor.hpp"

namespace bcd {

/// Embeddings with identity and camera labels; used for both queries and gallery.
struct EmbeddingTable {
  std::size_t dim = 0;
  std::vector<double> data;  // rows × dim
  std::vector<int> identities;
  std::vector<int> cameras;

  std::size_t size() const { return identities.size(); }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * dim, dim}; }

  void validate(const char* what) const {
    require(dim > 0, std::string(what) + ": zero embedding dimension");
    require(data.size() == identities.size() * dim && cameras.size() == identities.size(),
            std::string(what) + ": embedding rows and label counts differ");
  }
};

/// rho = h1.h2 / (|h1||h2|).
inline double similarity(std::span<const double> h1, std::span<const double> h2) {
  require(h1.size() == h2.size(), "similarity: dimensions " + std::to_string(h1.size()) + " and " +
                                      std::to_string(h2.size()) + " differ");
  double dot = 0.0, n1 = 0.0, n2 = 0.0;
  for (std::size_t i = 0; i < h1.size(); ++i) {
    dot += h1[i] * h2[i];
    n1 += h1[i] * h1[i];
    n2 += h2[i] * h2[i];
  }
  require(n1 > 0.0 && n2 > 0.0, "similarity: zero-norm embedding");
  return dot / (std::sqrt(n1) * std::sqrt(n2));
}

struct RetrievalMetrics {
  double rank1 = 0.0;
  double map = 0.0;
  std::vector<double> cmc;             // cmc[r-1] = fraction of queries with a match in the top r
  std::size_t evaluated_queries = 0;   // queries with at least one valid match
  std::size_t skipped_queries = 0;     // queries with none, excluded from the averages
};

/// Gallery ranked by descending similarity, ties by ascending gallery index.
inline RetrievalMetrics evaluate(const EmbeddingTable& queries, const EmbeddingTable& gallery,
                                 std::size_t max_rank = 50) {
  queries.validate("queries");
  gallery.validate("gallery");
  require(queries.dim == gallery.dim, "evaluate: query and gallery dimensions differ");
  require(max_rank > 0, "evaluate: max_rank must be positive");
  const std::size_t g = gallery.size();
  const std::size_t depth = std::min(max_rank, std::max<std::size_t>(g, 1));
  RetrievalMetrics m;
  std::vector<double> hits(depth, 0.0);
  double ap_sum = 0.0;
  std::vector<double> sims(g);
  std::vector<std::size_t> order(g);
  for (std::size_t q = 0; q < queries.size(); ++q) {
    for (std::size_t j = 0; j < g; ++j) sims[j] = similarity(queries.row(q), gallery.row(j));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&sims](std::size_t a, std::size_t b) { return sims[a] > sims[b]; });
    std::size_t rank = 0, found = 0, first_hit = 0;
    double precision_sum = 0.0;
    for (std::size_t j : order) {
      const bool same_id = gallery.identities[j] == queries.identities[q];
      if (same_id && gallery.cameras[j] == queries.cameras[q]) continue;
      ++rank;
      if (same_id) {
        ++found;
        if (found == 1) first_hit = rank;
        precision_sum += static_cast<double>(found) / static_cast<double>(rank);
      }
    }
    if (found == 0) {
      ++m.skipped_queries;
      continue;
    }
    ++m.evaluated_queries;
    ap_sum += precision_sum / static_cast<double>(found);
    for (std::size_t r = first_hit; r <= depth; ++r) hits[r - 1] += 1.0;
  }
  if (m.evaluated_queries > 0) {
    const double nq = static_cast<double>(m.evaluated_queries);
    m.map = ap_sum / nq;
    m.cmc.resize(depth);
    for (std::size_t r = 0; r < depth; ++r) m.cmc[r] = hits[r] / nq;
    m.rank1 = m.cmc[0];
  }
  return m;
}

}  // namespace bcd
