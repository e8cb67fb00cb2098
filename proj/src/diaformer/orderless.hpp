// Copyright 2026 The Diaformer Authors
// SPDX-License-Identifier: Apache-2.0
//
// Order-reduction helpers used when assembling training sequences: fresh
// implicit-symptom orders, synchronous label sets and repeated segments.

#pragma once

#include <cstddef>
#include <vector>

#include "diaformer/random.hpp"

namespace diaformer {

using Permutation = std::vector<std::size_t>;

/// Uniform random permutation of 0..n-1.
Permutation shuffle_sequence(std::size_t n, Rng& rng);

/// Identity permutation of 0..n-1.
Permutation identity_order(std::size_t n);

/// Label sets for the [S] run that follows the implicit symptoms.
/// `ordered_symptoms` are class ids in generation order. With synchronous
/// learning the i-th set holds every symptom from position i on; otherwise it
/// holds only the i-th symptom. A final {end_class} set is always appended.
std::vector<std::vector<int>> build_sync_labels(const std::vector<int>& ordered_symptoms,
                                                int end_class, bool sync_learning);

/// `repeats` fresh permutations of 0..n-1, or none when n <= 1.
std::vector<Permutation> build_repeated_sequences(std::size_t n, std::size_t repeats, Rng& rng);

/// Label sets of one repeated segment's [S]' tokens: for k = 1..n-1 the
/// symptoms at permutation positions >= k (or just position k without
/// synchronous learning). `ordered_symptoms` is the permuted class list.
std::vector<std::vector<int>> repeated_segment_labels(const std::vector<int>& ordered_symptoms,
                                                      bool sync_learning);

/// Number of [S] tokens in a training sequence with n implicit symptoms and
/// R repeated segments.
inline std::size_t s_token_count(std::size_t n, std::size_t repeats) {
  return (n + 1) + (n > 1 ? repeats * (n - 1) : 0);
}

}  // namespace diaformer
