#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "tsd/numeric/tensor.hpp"

namespace tsd {

inline constexpr double kLayerNormEps = 1e-6;
inline constexpr double kCosineEps = 1e-12;

// ---------------------------------------------------------------------------
// Linear algebra

/// a·b. `a` is [..., m, k]; `b` is either [k, n] (shared across the leading
/// dims of `a`) or [B, k, n] matching a rank-3 `a` of shape [B, m, k].
Tensor matmul(const Tensor& a, const Tensor& b);

/// a·bᵀ with the same batching rules; `b` is [n, k] or [B, n, k].
Tensor matmul_transposed(const Tensor& a, const Tensor& b);

// ---------------------------------------------------------------------------
// Elementwise. `b` must match `a` or equal a trailing suffix of its shape,
// in which case it is broadcast over the leading dims.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

// ---------------------------------------------------------------------------
// Normalization

/// Max-subtracted softmax along `axis`. -inf entries map to exactly 0; a
/// slice that is entirely -inf raises DegenerateSliceError.
Tensor softmax(const Tensor& x, std::ptrdiff_t axis = -1);

/// Normalizes over the last axis, then applies gain and bias (both [d]).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = kLayerNormEps);

struct BatchNormResult {
    Tensor output;
    std::vector<double> batch_mean;
    std::vector<double> batch_var;  // biased
};

/// Training-mode batch normalization of [B, F] with batch statistics.
BatchNormResult batch_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                           double eps = 1e-5);

// ---------------------------------------------------------------------------
// Shape manipulation

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& order);
Tensor concat(const std::vector<Tensor>& parts, std::ptrdiff_t axis = 0);
Tensor slice(const Tensor& x, std::ptrdiff_t axis, std::size_t begin, std::size_t end);
/// Repeats `x` `count` times along a new leading axis.
Tensor expand(const Tensor& x, std::size_t count);

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Sum over one axis, removing it.
Tensor sum(const Tensor& x, std::ptrdiff_t axis);

// ---------------------------------------------------------------------------
// Similarity and distance

/// Cosine similarity over the last axis: a·b / (|a||b| + 1e-12). Vectors
/// give a scalar; [..., d] inputs give [...].
Tensor cosine_similarity(const Tensor& a, const Tensor& b);

/// [..., P, D] -> [..., P, P] of row-pair cosine similarities.
Tensor pairwise_cosine(const Tensor& x);

/// [B, D] -> [B, B] Euclidean distances, sqrt(|xi - xj|² + 1e-12).
Tensor euclidean_distances(const Tensor& x);

/// [B, P, D] -> [P, B, B], one distance matrix per part.
Tensor part_euclidean_distances(const Tensor& x);

// ---------------------------------------------------------------------------
// Fused objectives

/// Mean label-smoothed cross-entropy of [B, K] logits. Targets are
/// (1 - smoothing)·onehot + smoothing/K.
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels,
                     double smoothing = 0.0);

/// Batch-hard triplet loss over a [B, B] distance matrix: mean over anchors
/// of max(0, hardest_positive - hardest_negative + margin).
Tensor batch_hard_triplet(const Tensor& distances, std::span<const std::int64_t> ids,
                          double margin);

/// Binary focal loss on probabilities, averaged over all entries. Inputs
/// are clamped to [1e-7, 1 - 1e-7]; clamped entries get zero gradient.
Tensor focal_loss(const Tensor& probabilities, std::span<const std::uint8_t> targets,
                  double alpha, double gamma);

/// Heatmap-weighted pooling: features [B, N, D], heatmaps [B, N, P+1]
/// (column 0 is background) -> [B, P, D] foreground part averages.
Tensor part_pool(const Tensor& features, const Tensor& heatmaps);

}  // namespace tsd
