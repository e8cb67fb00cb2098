// Copyright 2026 The Diaformer Authors
// SPDX-License-Identifier: Apache-2.0

#include "diaformer/orderless.hpp"

#include <numeric>

namespace diaformer {

Permutation identity_order(std::size_t n) {
  Permutation p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  return p;
}

Permutation shuffle_sequence(std::size_t n, Rng& rng) {
  Permutation p = identity_order(n);
  shuffle_in_place(std::span(p), rng);
  return p;
}

std::vector<std::vector<int>> build_sync_labels(const std::vector<int>& ordered_symptoms,
                                                int end_class, bool sync_learning) {
  std::vector<std::vector<int>> labels;
  labels.reserve(ordered_symptoms.size() + 1);
  for (std::size_t i = 0; i < ordered_symptoms.size(); ++i) {
    if (sync_learning) {
      labels.emplace_back(ordered_symptoms.begin() + static_cast<std::ptrdiff_t>(i),
                          ordered_symptoms.end());
    } else {
      labels.push_back({ordered_symptoms[i]});
    }
  }
  labels.push_back({end_class});
  return labels;
}

std::vector<Permutation> build_repeated_sequences(std::size_t n, std::size_t repeats, Rng& rng) {
  std::vector<Permutation> segments;
  if (n <= 1) return segments;
  segments.reserve(repeats);
  for (std::size_t r = 0; r < repeats; ++r) segments.push_back(shuffle_sequence(n, rng));
  return segments;
}

std::vector<std::vector<int>> repeated_segment_labels(const std::vector<int>& ordered_symptoms,
                                                      bool sync_learning) {
  std::vector<std::vector<int>> labels;
  for (std::size_t k = 1; k < ordered_symptoms.size(); ++k) {
    if (sync_learning) {
      labels.emplace_back(ordered_symptoms.begin() + static_cast<std::ptrdiff_t>(k),
                          ordered_symptoms.end());
    } else {
      labels.push_back({ordered_symptoms[k]});
    }
  }
  return labels;
}

}  // namespace diaformer
