// Copyright 2026 The Diaformer Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace diaformer {

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A named symptom with its polarity (true = present, false = denied).
struct SymptomValue {
  std::string name;
  bool present = true;

  friend bool operator==(const SymptomValue&, const SymptomValue&) = default;
};

/// One diagnosis case. Symptom lists keep file order.
struct DiagnosisRecord {
  std::vector<SymptomValue> explicit_symptoms;
  std::vector<SymptomValue> implicit_symptoms;
  std::string disease;

  friend bool operator==(const DiagnosisRecord&, const DiagnosisRecord&) = default;
};

/// Checks the record invariants (disjoint, duplicate-free symptom sets and a
/// non-empty disease). Throws DatasetError.
void validate_record(const DiagnosisRecord& record, std::size_t index = 0);

std::vector<DiagnosisRecord> parse_dataset(const std::string& json_text);
std::vector<DiagnosisRecord> load_dataset(const std::filesystem::path& path);
std::string dataset_to_json(const std::vector<DiagnosisRecord>& records);
void save_dataset(const std::vector<DiagnosisRecord>& records,
                  const std::filesystem::path& path);

/// Symptom and disease name <-> id maps. Inquiry classes are the symptom ids
/// followed by END; token ids are the symptom ids followed by [S] and [D].
class SymptomVocab {
 public:
  SymptomVocab() = default;
  SymptomVocab(std::vector<std::string> symptoms, std::vector<std::string> diseases);

  std::size_t num_symptoms() const { return symptoms_.size(); }
  std::size_t num_diseases() const { return diseases_.size(); }
  /// C_inq: symptoms plus END.
  std::size_t inquiry_classes() const { return symptoms_.size() + 1; }
  std::size_t token_count() const { return symptoms_.size() + 2; }

  int end_class() const { return static_cast<int>(symptoms_.size()); }
  int s_token() const { return static_cast<int>(symptoms_.size()); }
  int d_token() const { return static_cast<int>(symptoms_.size()) + 1; }

  std::optional<int> symptom_id(const std::string& name) const;
  std::optional<int> disease_id(const std::string& name) const;
  const std::string& symptom_name(int id) const { return symptoms_.at(static_cast<std::size_t>(id)); }
  const std::string& disease_name(int id) const { return diseases_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& symptoms() const { return symptoms_; }
  const std::vector<std::string>& diseases() const { return diseases_; }

  std::string to_json() const;
  static SymptomVocab from_json(const std::string& json_text);

  friend bool operator==(const SymptomVocab& a, const SymptomVocab& b) {
    return a.symptoms_ == b.symptoms_ && a.diseases_ == b.diseases_;
  }

 private:
  std::vector<std::string> symptoms_;  // sorted
  std::vector<std::string> diseases_;  // sorted
};

/// Every symptom and disease named in `records`, sorted by name.
SymptomVocab build_vocab(const std::vector<DiagnosisRecord>& records);

struct EncodedSymptom {
  int id = 0;
  bool present = true;

  friend bool operator==(const EncodedSymptom&, const EncodedSymptom&) = default;
};

/// A record mapped onto vocabulary ids. Names missing from the vocabulary are
/// dropped; dropped implicit symptoms are still counted for recall.
struct EncodedRecord {
  std::vector<EncodedSymptom> explicit_symptoms;
  std::vector<EncodedSymptom> implicit_symptoms;
  int disease = -1;  // -1 when the disease is not in the vocabulary
  std::size_t unknown_implicit = 0;
};

EncodedRecord encode_record(const DiagnosisRecord& record, const SymptomVocab& vocab);
std::vector<EncodedRecord> encode_records(const std::vector<DiagnosisRecord>& records,
                                          const SymptomVocab& vocab);

enum class SimulatorAnswer { True, False, NotSure };

const char* to_string(SimulatorAnswer answer);

/// Rule-based patient: answers from the record's goal symptoms.
SimulatorAnswer simulator_answer(const EncodedRecord& record, int symptom_id);
SimulatorAnswer simulator_answer(const DiagnosisRecord& record, const SymptomVocab& vocab,
                                 int symptom_id);

/// Parametric disease/symptom generator settings.
struct GeneratorSpec {
  std::vector<std::string> diseases;
  std::vector<std::string> symptoms;
  /// probabilities[d][s]: chance that symptom s is present for disease d.
  std::vector<std::vector<double>> probabilities;
  /// Weights over explicit counts; index = count (index 0 is ignored).
  std::vector<double> explicit_count_weights{0.0, 1.0};
  /// Weights over the implicit-count cap; index = cap. Empty = no cap.
  std::vector<double> implicit_cap_weights;
  /// Denied symptoms added per present symptom (rounded), drawn from the
  /// disease's absent symptoms.
  double false_fraction = 0.0;
  std::size_t num_records = 0;
  std::uint64_t seed = 0;

  void validate() const;
  std::string to_json() const;
  static GeneratorSpec from_json(const std::string& json_text);
};

/// Settings used by the synthetic benchmark: 10 diseases, 40 symptoms, with
/// overlapping symptom profiles so that a single self-reported symptom is
/// ambiguous but the full symptom set is not.
GeneratorSpec default_generator_spec(std::size_t num_records = 2000,
                                     std::uint64_t seed = 20260417);

std::vector<DiagnosisRecord> generate_synthetic(const GeneratorSpec& spec, std::uint64_t seed);

}  // namespace diaformer
