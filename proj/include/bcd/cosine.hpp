#pragma once

// Cosine distance D(x, y) = 1 - x.y / (|x||y| + eps), shared by the BCCA
// supervision loss and the triplet loss.

#include "bcd/ops.hpp"

namespace bcd {

/// Row-paired distances between two N×d matrices -> [N].
inline Tensor cosine_distance_rows(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && a.shape() == b.shape(),
          "cosine_distance_rows: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor dots = sum_axis(mul(a, b), 1);
  Tensor denom = add_scalar(mul(l2_norm_rows(a), l2_norm_rows(b)), kNormEps);
  Tensor ones = Tensor::full(dots.shape(), 1.0);
  return sub(ones, div(dots, denom));
}

/// Distance between two vectors of equal length -> scalar [1].
inline Tensor cosine_distance(const Tensor& x, const Tensor& y) {
  require(x.rank() == 1 && x.shape() == y.shape(),
          "cosine_distance: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  return cosine_distance_rows(reshape(x, {1, x.numel()}), reshape(y, {1, y.numel()}));
}

/// All-pairs distance matrix of the rows of an N×d matrix -> N×N.
inline Tensor pairwise_cosine_distance(const Tensor& h) {
  require(h.rank() == 2, "pairwise_cosine_distance: expected N×d, got " + shape_str(h.shape()));
  const std::size_t n = h.dim(0);
  Tensor gram = matmul(h, transpose(h));
  Tensor norms = l2_norm_rows(h);
  Tensor outer = matmul(reshape(norms, {n, 1}), reshape(norms, {1, n}));
  return sub(Tensor::full({n, n}, 1.0), div(gram, add_scalar(outer, kNormEps)));
}

}  // namespace bcd
