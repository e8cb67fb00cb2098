// Copyright 2026 The Diaformer Authors
// SPDX-License-Identifier: Apache-2.0

#include "diaformer/sequence.hpp"

#include <limits>
#include <stdexcept>

namespace diaformer {

namespace {

constexpr std::size_t kSharedLane = std::numeric_limits<std::size_t>::max();

// Each position lives in a lane (the shared explicit prefix, the original
// sequence, or one repeated segment) at a level. A query sees itself plus
// every symptom of the shared lane or its own lane whose level does not
// exceed the query's level.
struct Placement {
  std::size_t lane;
  std::size_t level;
  bool symptom;
};

Placement place(const PositionRole& r) {
  switch (r.role) {
    case Role::Explicit: return {kSharedLane, 0, true};
    case Role::Implicit: return {0, r.index + 1, true};
    case Role::SToken: return {0, r.index, false};
    case Role::DToken: return {0, std::numeric_limits<std::size_t>::max(), false};
    case Role::RepeatSymptom: return {r.segment, r.index + 1, true};
    case Role::RepeatSToken: return {r.segment, r.index, false};
  }
  throw std::logic_error("unknown role");
}

void check_permutation(const Permutation& p, std::size_t n, const char* what) {
  if (p.size() != n) {
    throw std::invalid_argument(std::string(what) + ": expected a permutation of " +
                                std::to_string(n) + " items");
  }
  std::vector<char> seen(n, 0);
  for (auto i : p) {
    if (i >= n || seen[i]) throw std::invalid_argument(std::string(what) + ": not a permutation");
    seen[i] = 1;
  }
}

int state_of(bool present) {
  return static_cast<int>(present ? StateId::True : StateId::False);
}

void push(TrainingSequence& seq, int token, int state, TypeId type, PositionRole role) {
  seq.token_ids.push_back(token);
  seq.state_ids.push_back(state);
  seq.type_ids.push_back(static_cast<int>(type));
  seq.roles.push_back(role);
}

void push_special(TrainingSequence& seq, int token, PositionRole role) {
  push(seq, token, static_cast<int>(StateId::None), TypeId::Spec, role);
}

}  // namespace

std::vector<std::uint8_t> build_attention_mask(std::span<const PositionRole> roles) {
  const std::size_t t = roles.size();
  std::vector<Placement> placed;
  placed.reserve(t);
  for (const auto& r : roles) placed.push_back(place(r));
  std::vector<std::uint8_t> mask(t * t, 0);
  for (std::size_t q = 0; q < t; ++q) {
    const Placement& pq = placed[q];
    for (std::size_t k = 0; k < t; ++k) {
      const Placement& pk = placed[k];
      const bool same_lane = pk.lane == kSharedLane || pk.lane == pq.lane;
      const bool sees = q == k || (pk.symptom && same_lane && pk.level <= pq.level);
      mask[q * t + k] = sees ? 1 : 0;
    }
  }
  return mask;
}

TrainingSequence build_input(const EncodedRecord& record, const Permutation& imp_order,
                             const std::vector<Permutation>& repeat_orders,
                             const SymptomVocab& vocab, const SequenceOptions& options) {
  if (vocab.num_symptoms() == 0 || vocab.num_diseases() == 0) {
    throw std::invalid_argument("build_input: empty vocabulary");
  }
  const std::size_t n = record.implicit_symptoms.size();
  check_permutation(imp_order, n, "build_input imp_order");
  if (n <= 1 && !repeat_orders.empty()) {
    throw std::invalid_argument("build_input: repeated segments need at least two implicit symptoms");
  }
  for (const auto& p : repeat_orders) check_permutation(p, n, "build_input repeat order");

  TrainingSequence seq;
  const std::size_t length = record.explicit_symptoms.size() + n + (n + 1) +
                             repeat_orders.size() * 2 * (n > 0 ? n - 1 : 0) +
                             (options.include_disease ? 1 : 0);
  seq.token_ids.reserve(length);

  for (std::size_t i = 0; i < record.explicit_symptoms.size(); ++i) {
    const auto& s = record.explicit_symptoms[i];
    push(seq, s.id, state_of(s.present), TypeId::Exp, {Role::Explicit, i, 0});
  }
  std::vector<int> ordered;
  ordered.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = record.implicit_symptoms[imp_order[i]];
    ordered.push_back(s.id);
    push(seq, s.id, state_of(s.present), TypeId::Imp, {Role::Implicit, i, 0});
  }
  for (std::size_t i = 0; i <= n; ++i) {
    seq.s_positions.push_back(seq.length());
    push_special(seq, vocab.s_token(), {Role::SToken, i, 0});
  }
  seq.s_labels = build_sync_labels(ordered, vocab.end_class(), options.sync_learning);

  for (std::size_t r = 0; r < repeat_orders.size(); ++r) {
    const auto& perm = repeat_orders[r];
    std::vector<int> permuted;
    for (auto idx : perm) permuted.push_back(record.implicit_symptoms[idx].id);
    auto labels = repeated_segment_labels(permuted, options.sync_learning);
    for (std::size_t j = 0; j + 1 < n; ++j) {
      const auto& s = record.implicit_symptoms[perm[j]];
      push(seq, s.id, state_of(s.present), TypeId::Imp, {Role::RepeatSymptom, j, r + 1});
      seq.s_positions.push_back(seq.length());
      push_special(seq, vocab.s_token(), {Role::RepeatSToken, j + 1, r + 1});
      seq.s_labels.push_back(std::move(labels[j]));
    }
  }

  if (options.include_disease) {
    seq.d_position = seq.length();
    push_special(seq, vocab.d_token(), {Role::DToken, 0, 0});
    seq.disease_label = record.disease;
  }
  seq.visibility = build_attention_mask(seq.roles);
  return seq;
}

TrainingSequence build_inference_input(std::span<const EncodedSymptom> explicit_symptoms,
                                       std::span<const EncodedSymptom> acquired,
                                       const SymptomVocab& vocab, Head head) {
  TrainingSequence seq;
  for (std::size_t i = 0; i < explicit_symptoms.size(); ++i) {
    const auto& s = explicit_symptoms[i];
    push(seq, s.id, state_of(s.present), TypeId::Exp, {Role::Explicit, i, 0});
  }
  for (std::size_t i = 0; i < acquired.size(); ++i) {
    const auto& s = acquired[i];
    push(seq, s.id, state_of(s.present), TypeId::Imp, {Role::Implicit, i, 0});
  }
  if (head == Head::Symptom) {
    seq.s_positions.push_back(seq.length());
    push_special(seq, vocab.s_token(), {Role::SToken, acquired.size(), 0});
  } else {
    seq.d_position = seq.length();
    push_special(seq, vocab.d_token(), {Role::DToken, 0, 0});
  }
  seq.visibility = build_attention_mask(seq.roles);
  return seq;
}

}  // namespace diaformer
