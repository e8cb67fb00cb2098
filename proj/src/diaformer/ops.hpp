// Copyright 2026 The Diaformer Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "diaformer/tensor.hpp"

namespace diaformer::ops {

/// Batched matrix product over the last two dimensions. Leading dimensions
/// broadcast; a rank-2 operand is shared across the other's batch.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Swaps the last two dimensions.
Tensor transpose(const Tensor& a);

// Elementwise with trailing-dimension broadcasting (numpy rules).
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, real factor);

Tensor gelu(const Tensor& x);

/// Softmax over the last dimension after adding `mask` (0 or kMaskedScore).
/// The mask broadcasts over leading dimensions of `scores` and is not
/// differentiated. Throws std::invalid_argument when a row has no visible key.
Tensor masked_softmax(const Tensor& scores, const Tensor& mask);
Tensor softmax(const Tensor& scores);

inline constexpr real kLayerNormEps = static_cast<real>(1e-5);

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  real eps = kLayerNormEps);

/// Row lookup: table [V,H], ids -> [ids.size(), H].
Tensor embedding(const Tensor& table, std::span<const int> ids);

/// Same values under a new shape with the same element count.
Tensor reshape(const Tensor& x, Shape shape);

/// Selects rows of a rank-2 tensor.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);

/// [T, A*d] -> [A, T, d] and back.
Tensor split_heads(const Tensor& x, std::size_t heads);
Tensor merge_heads(const Tensor& x);

/// Inverted dropout. Identity when p == 0.
Tensor dropout(const Tensor& x, real p, std::mt19937_64& rng);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// -log softmax(logits)[label] for rank-1 logits.
Tensor cross_entropy(const Tensor& logits, int label);

/// Mean cross-entropy over the rows of [N,C] logits.
Tensor cross_entropy_rows(const Tensor& logits, std::span<const int> labels);

/// Concurrent-softmax cross entropy: for each labelled class i,
///   sigma*_i = e^{z_i} / (sum_{j unlabelled} e^{z_j} + e^{z_i})
/// and the loss is -sum_i log sigma*_i divided by the label count.
/// Throws std::invalid_argument on an empty or out-of-range label set.
Tensor concurrent_softmax_loss(const Tensor& logits, std::span<const int> labels);

/// Mean of concurrent_softmax_loss over the rows of [N,C] logits.
Tensor concurrent_softmax_loss_rows(const Tensor& logits,
                                    const std::vector<std::vector<int>>& labels);

}  // namespace diaformer::ops
