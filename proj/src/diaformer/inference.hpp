// Copyright 2026 The Diaformer Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "diaformer/data.hpp"
#include "diaformer/model.hpp"

namespace diaformer {

struct InferenceConfig {
  double rho_e = 0.9;    // stop when p(END) exceeds this
  double rho_p = 0.01;   // stop when the next candidate falls below this
  std::size_t max_turns = 20;

  void validate() const;
};

/// Per-dataset candidate-probability floors used with the public corpora.
inline constexpr double kRhoPMuZhi = 0.009;
inline constexpr double kRhoPDxy = 0.012;
inline constexpr double kRhoPSynthetic = 0.01;

enum class StopReason { EndSymbol, LowProbability, TurnBudget, Exhausted };

const char* to_string(StopReason reason);

struct InquiryStep {
  int symptom = 0;
  SimulatorAnswer answer = SimulatorAnswer::NotSure;
};

struct Diagnosis {
  int disease = 0;
  double probability = 0;
  std::vector<double> distribution;
};

struct DialogueState {
  /// Explicit symptoms first, then answered inquiries in answer order.
  std::vector<EncodedSymptom> known;
  std::size_t explicit_count = 0;
  /// Per symptom id: already known or asked (NotSure answers included).
  std::vector<char> inquired;
  std::vector<InquiryStep> history;
  std::size_t turns = 0;
  std::optional<StopReason> stop_reason;
  std::optional<Diagnosis> diagnosis;

  std::span<const EncodedSymptom> explicit_symptoms() const {
    return std::span(known).first(explicit_count);
  }
  std::span<const EncodedSymptom> acquired() const {
    return std::span(known).subspan(explicit_count);
  }
};

/// Softmax over inquiry classes at an [S] appended after the known symptoms.
Tensor next_inquiry_distribution(const DialogueState& state, const DiaformerModel& model,
                                 const SymptomVocab& vocab);

/// Disease distribution at a [D] appended after the known symptoms.
Diagnosis diagnose(const DialogueState& state, const DiaformerModel& model,
                   const SymptomVocab& vocab);

class AnswerSource {
 public:
  virtual ~AnswerSource() = default;
  virtual SimulatorAnswer answer(int symptom_id) = 0;
};

class SimulatorSource final : public AnswerSource {
 public:
  explicit SimulatorSource(const EncodedRecord& record) : record_(record) {}
  SimulatorAnswer answer(int symptom_id) override { return simulator_answer(record_, symptom_id); }

 private:
  const EncodedRecord& record_;
};

/// Thresholded inquiry loop, advanced one answer at a time. After
/// construction and after every answer() the dialogue either has a pending
/// question or has stopped with a diagnosis.
class Dialogue {
 public:
  Dialogue(const DiaformerModel& model, const SymptomVocab& vocab, InferenceConfig config,
           std::vector<EncodedSymptom> explicit_symptoms);

  std::optional<int> pending_question() const { return pending_; }
  bool finished() const { return state_.stop_reason.has_value(); }
  const DialogueState& state() const { return state_; }

  /// Answers the pending question. Throws std::logic_error if there is none.
  void answer(SimulatorAnswer answer);

 private:
  void advance();
  void stop(StopReason reason);

  const DiaformerModel* model_;
  const SymptomVocab* vocab_;
  InferenceConfig config_;
  DialogueState state_;
  std::vector<std::pair<double, int>> candidates_;  // descending probability
  std::size_t cursor_ = 0;
  bool needs_distribution_ = true;
  std::optional<int> pending_;
};

DialogueState run_dialogue(const DiaformerModel& model, const SymptomVocab& vocab,
                           const InferenceConfig& config,
                           std::vector<EncodedSymptom> explicit_symptoms, AnswerSource& source);
DialogueState run_dialogue(const DiaformerModel& model, const SymptomVocab& vocab,
                           const InferenceConfig& config, const EncodedRecord& record);

struct EvalMetrics {
  double dacc = 0;
  double srec = 0;
  double aturn = 0;
  std::size_t n_records = 0;
  std::map<std::string, std::size_t> stop_reason_histogram;

  std::string to_json() const;
};

/// Fraction of the record's implicit symptoms acquired during the dialogue;
/// 1 when the record has none.
double symptom_recall(const EncodedRecord& record, const DialogueState& state);

EvalMetrics compute_metrics(std::span<const EncodedRecord> records,
                            std::span<const DialogueState> states);

using Agent = std::function<DialogueState(const EncodedRecord&)>;

EvalMetrics evaluate_agent(std::span<const EncodedRecord> records, const Agent& agent,
                           std::size_t threads = 1);

/// Runs the simulator dialogue on every record. Records are independent, so
/// `threads` > 1 splits them across workers without changing the result.
EvalMetrics evaluate(std::span<const EncodedRecord> records, const DiaformerModel& model,
                     const SymptomVocab& vocab, const InferenceConfig& config,
                     std::size_t threads = 1);

/// Linear softmax classifier over a bag of symptoms (+1 present, -1 denied,
/// 0 unknown).
struct BagClassifierOptions {
  bool include_implicit = false;
  std::size_t steps = 400;
  double lr = 0.05;
};

double bag_classifier_accuracy(std::span<const EncodedRecord> train,
                               std::span<const EncodedRecord> test, const SymptomVocab& vocab,
                               const BagClassifierOptions& options = {});

/// Diagnosis accuracy from explicit symptoms alone, with no inquiry.
double explicit_only_baseline(std::span<const EncodedRecord> train,
                              std::span<const EncodedRecord> test, const SymptomVocab& vocab);

}  // namespace diaformer
