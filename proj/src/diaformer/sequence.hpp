// Copyright 2026 The Diaformer Authors
// SPDX-License-Identifier: Apache-2.0
//
// Input assembly for the symptom attention network.
//
// Training layout for m explicit and n implicit symptoms with R repeated
// segments:
//
//   exp_1..exp_m  imp_1..imp_n  [S]_1..[S]_{n+1}  seg_1 .. seg_R  [D]
//
// where each segment interleaves the first n-1 symptoms of its own
// permutation p with [S]' tokens: p_1 [S]'_2 p_2 [S]'_3 ... p_{n-1} [S]'_n.
// [S]_1 and the END prediction are shared between the original order and the
// segments.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "diaformer/data.hpp"
#include "diaformer/orderless.hpp"

namespace diaformer {

enum class StateId : int { True = 0, False = 1, None = 2 };
enum class TypeId : int { Exp = 0, Imp = 1, Spec = 2 };

inline constexpr std::size_t kStateCount = 3;
inline constexpr std::size_t kTypeCount = 3;

enum class Role : std::uint8_t {
  Explicit,       // index: 0..m-1
  Implicit,       // index: position in generation order, 0..n-1
  SToken,         // index i sees implicit positions < i; 0..n
  DToken,
  RepeatSymptom,  // index: permutation position, 0..n-2
  RepeatSToken,   // index k sees its segment's symptoms < k; 1..n-1
};

struct PositionRole {
  Role role = Role::Explicit;
  std::size_t index = 0;
  std::size_t segment = 0;  // 0 = original sequence, 1..R = repeated segments

  friend bool operator==(const PositionRole&, const PositionRole&) = default;
};

struct TrainingSequence {
  std::vector<int> token_ids;
  std::vector<int> state_ids;
  std::vector<int> type_ids;
  std::vector<PositionRole> roles;
  /// Row-major query x key; 1 where the query may attend to the key.
  std::vector<std::uint8_t> visibility;
  std::vector<std::size_t> s_positions;
  std::vector<std::vector<int>> s_labels;  // empty at inference
  std::optional<std::size_t> d_position;
  int disease_label = -1;

  std::size_t length() const { return token_ids.size(); }
  bool visible(std::size_t query, std::size_t key) const {
    return visibility[query * length() + key] != 0;
  }
};

struct SequenceOptions {
  bool sync_learning = true;
  bool include_disease = true;
};

/// Builds the training layout. `imp_order` permutes record.implicit_symptoms;
/// each entry of `repeat_orders` is a further permutation of the same list and
/// must be empty when there is at most one implicit symptom.
TrainingSequence build_input(const EncodedRecord& record, const Permutation& imp_order,
                             const std::vector<Permutation>& repeat_orders,
                             const SymptomVocab& vocab, const SequenceOptions& options = {});

/// Which head an inference sequence ends with.
enum class Head { Symptom, Disease };

/// [explicit, acquired (in acquisition order), [S] or [D]].
TrainingSequence build_inference_input(std::span<const EncodedSymptom> explicit_symptoms,
                                       std::span<const EncodedSymptom> acquired,
                                       const SymptomVocab& vocab, Head head);

/// Visibility matrix implied by the position roles.
std::vector<std::uint8_t> build_attention_mask(std::span<const PositionRole> roles);

}  // namespace diaformer
