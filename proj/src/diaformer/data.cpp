// Copyright 2026 The Diaformer Authors
// SPDX-License-Identifier: Apache-2.0

#include "diaformer/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_set>

#include "diaformer/random.hpp"
#include "json.hpp"

namespace diaformer {

using ordered_json = nlohmann::ordered_json;

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DatasetError("cannot write " + path.string());
  out << text;
  if (!out) throw DatasetError("write failed for " + path.string());
}

std::string record_prefix(std::size_t index) {
  return "record " + std::to_string(index) + ": ";
}

std::vector<SymptomValue> parse_symptom_map(const ordered_json& j, const char* key,
                                            std::size_t index) {
  if (!j.is_object()) {
    throw DatasetError(record_prefix(index) + key + " must be an object of name: bool");
  }
  std::vector<SymptomValue> out;
  for (const auto& [name, value] : j.items()) {
    if (!value.is_boolean()) {
      throw DatasetError(record_prefix(index) + key + "[\"" + name + "\"] must be a boolean");
    }
    out.push_back({name, value.get<bool>()});
  }
  return out;
}

ordered_json symptom_map_json(const std::vector<SymptomValue>& symptoms) {
  ordered_json j = ordered_json::object();
  for (const auto& s : symptoms) j[s.name] = s.present;
  return j;
}

}  // namespace

void validate_record(const DiagnosisRecord& record, std::size_t index) {
  std::unordered_set<std::string> seen;
  for (const auto& s : record.explicit_symptoms) {
    if (!seen.insert(s.name).second) {
      throw DatasetError(record_prefix(index) + "duplicate explicit symptom \"" + s.name + "\"");
    }
  }
  std::unordered_set<std::string> implicit_seen;
  for (const auto& s : record.implicit_symptoms) {
    if (!implicit_seen.insert(s.name).second) {
      throw DatasetError(record_prefix(index) + "duplicate implicit symptom \"" + s.name + "\"");
    }
    if (seen.count(s.name)) {
      throw DatasetError(record_prefix(index) + "symptom \"" + s.name +
                         "\" is both explicit and implicit");
    }
  }
  if (record.disease.empty()) throw DatasetError(record_prefix(index) + "empty disease_tag");
}

std::vector<DiagnosisRecord> parse_dataset(const std::string& json_text) {
  // The callback rejects duplicate keys, which a plain parse would collapse.
  std::vector<std::set<std::string>> open_objects;
  std::size_t record_count = 0;
  auto callback = [&](int depth, ordered_json::parse_event_t event, ordered_json& parsed) {
    using E = ordered_json::parse_event_t;
    switch (event) {
      case E::object_start:
        if (depth == 1) ++record_count;
        open_objects.emplace_back();
        break;
      case E::object_end:
        if (!open_objects.empty()) open_objects.pop_back();
        break;
      case E::key: {
        const auto key = parsed.get<std::string>();
        if (!open_objects.empty() && !open_objects.back().insert(key).second) {
          throw DatasetError(record_prefix(record_count ? record_count - 1 : 0) +
                             "duplicate key \"" + key + "\"");
        }
        break;
      }
      default:
        break;
    }
    return true;
  };

  ordered_json root;
  try {
    root = ordered_json::parse(json_text, callback);
  } catch (const ordered_json::parse_error& e) {
    throw DatasetError(std::string("malformed JSON: ") + e.what());
  }
  if (!root.is_array()) throw DatasetError("dataset must be a JSON array of records");

  std::vector<DiagnosisRecord> records;
  records.reserve(root.size());
  for (std::size_t i = 0; i < root.size(); ++i) {
    const auto& r = root[i];
    if (!r.is_object()) throw DatasetError(record_prefix(i) + "not an object");
    for (const auto& [key, _] : r.items()) {
      if (key != "explicit_symptoms" && key != "implicit_symptoms" && key != "disease_tag") {
        throw DatasetError(record_prefix(i) + "unknown field \"" + key + "\"");
      }
    }
    for (const char* key : {"explicit_symptoms", "implicit_symptoms", "disease_tag"}) {
      if (!r.contains(key)) throw DatasetError(record_prefix(i) + "missing field \"" + key + "\"");
    }
    if (!r["disease_tag"].is_string()) {
      throw DatasetError(record_prefix(i) + "disease_tag must be a string");
    }
    DiagnosisRecord rec;
    rec.explicit_symptoms = parse_symptom_map(r["explicit_symptoms"], "explicit_symptoms", i);
    rec.implicit_symptoms = parse_symptom_map(r["implicit_symptoms"], "implicit_symptoms", i);
    rec.disease = r["disease_tag"].get<std::string>();
    validate_record(rec, i);
    records.push_back(std::move(rec));
  }
  return records;
}

std::vector<DiagnosisRecord> load_dataset(const std::filesystem::path& path) {
  try {
    return parse_dataset(read_file(path));
  } catch (const DatasetError& e) {
    throw DatasetError(path.string() + ": " + e.what());
  }
}

std::string dataset_to_json(const std::vector<DiagnosisRecord>& records) {
  ordered_json root = ordered_json::array();
  for (const auto& r : records) {
    ordered_json j;
    j["explicit_symptoms"] = symptom_map_json(r.explicit_symptoms);
    j["implicit_symptoms"] = symptom_map_json(r.implicit_symptoms);
    j["disease_tag"] = r.disease;
    root.push_back(std::move(j));
  }
  return root.dump(1);
}

void save_dataset(const std::vector<DiagnosisRecord>& records, const std::filesystem::path& path) {
  write_file(path, dataset_to_json(records) + "\n");
}

// ---------------------------------------------------------------------------

SymptomVocab::SymptomVocab(std::vector<std::string> symptoms, std::vector<std::string> diseases)
    : symptoms_(std::move(symptoms)), diseases_(std::move(diseases)) {
  auto check = [](const std::vector<std::string>& names, const char* what) {
    if (!std::is_sorted(names.begin(), names.end()) ||
        std::adjacent_find(names.begin(), names.end()) != names.end()) {
      throw DatasetError(std::string("vocabulary ") + what + " must be sorted and unique");
    }
  };
  check(symptoms_, "symptoms");
  check(diseases_, "diseases");
}

std::optional<int> SymptomVocab::symptom_id(const std::string& name) const {
  auto it = std::lower_bound(symptoms_.begin(), symptoms_.end(), name);
  if (it == symptoms_.end() || *it != name) return std::nullopt;
  return static_cast<int>(it - symptoms_.begin());
}

std::optional<int> SymptomVocab::disease_id(const std::string& name) const {
  auto it = std::lower_bound(diseases_.begin(), diseases_.end(), name);
  if (it == diseases_.end() || *it != name) return std::nullopt;
  return static_cast<int>(it - diseases_.begin());
}

std::string SymptomVocab::to_json() const {
  ordered_json j;
  j["symptoms"] = symptoms_;
  j["diseases"] = diseases_;
  return j.dump();
}

SymptomVocab SymptomVocab::from_json(const std::string& json_text) {
  try {
    auto j = ordered_json::parse(json_text);
    return SymptomVocab(j.at("symptoms").get<std::vector<std::string>>(),
                        j.at("diseases").get<std::vector<std::string>>());
  } catch (const ordered_json::exception& e) {
    throw DatasetError(std::string("bad vocabulary JSON: ") + e.what());
  }
}

SymptomVocab build_vocab(const std::vector<DiagnosisRecord>& records) {
  std::set<std::string> symptoms;
  std::set<std::string> diseases;
  for (const auto& r : records) {
    for (const auto& s : r.explicit_symptoms) symptoms.insert(s.name);
    for (const auto& s : r.implicit_symptoms) symptoms.insert(s.name);
    diseases.insert(r.disease);
  }
  return SymptomVocab({symptoms.begin(), symptoms.end()}, {diseases.begin(), diseases.end()});
}

EncodedRecord encode_record(const DiagnosisRecord& record, const SymptomVocab& vocab) {
  EncodedRecord out;
  for (const auto& s : record.explicit_symptoms) {
    if (auto id = vocab.symptom_id(s.name)) out.explicit_symptoms.push_back({*id, s.present});
  }
  for (const auto& s : record.implicit_symptoms) {
    if (auto id = vocab.symptom_id(s.name)) {
      out.implicit_symptoms.push_back({*id, s.present});
    } else {
      ++out.unknown_implicit;
    }
  }
  out.disease = vocab.disease_id(record.disease).value_or(-1);
  return out;
}

std::vector<EncodedRecord> encode_records(const std::vector<DiagnosisRecord>& records,
                                          const SymptomVocab& vocab) {
  std::vector<EncodedRecord> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(encode_record(r, vocab));
  return out;
}

const char* to_string(SimulatorAnswer answer) {
  switch (answer) {
    case SimulatorAnswer::True: return "true";
    case SimulatorAnswer::False: return "false";
    case SimulatorAnswer::NotSure: return "not_sure";
  }
  return "?";
}

SimulatorAnswer simulator_answer(const EncodedRecord& record, int symptom_id) {
  for (const auto* set : {&record.explicit_symptoms, &record.implicit_symptoms}) {
    for (const auto& s : *set) {
      if (s.id == symptom_id) return s.present ? SimulatorAnswer::True : SimulatorAnswer::False;
    }
  }
  return SimulatorAnswer::NotSure;
}

SimulatorAnswer simulator_answer(const DiagnosisRecord& record, const SymptomVocab& vocab,
                                 int symptom_id) {
  if (symptom_id < 0 || static_cast<std::size_t>(symptom_id) >= vocab.num_symptoms()) {
    throw std::out_of_range("simulator_answer: symptom id " + std::to_string(symptom_id));
  }
  const std::string& name = vocab.symptom_name(symptom_id);
  for (const auto* set : {&record.explicit_symptoms, &record.implicit_symptoms}) {
    for (const auto& s : *set) {
      if (s.name == name) return s.present ? SimulatorAnswer::True : SimulatorAnswer::False;
    }
  }
  return SimulatorAnswer::NotSure;
}

// ---------------------------------------------------------------------------

void GeneratorSpec::validate() const {
  if (diseases.empty() || symptoms.empty()) {
    throw DatasetError("generator spec needs at least one disease and one symptom");
  }
  if (probabilities.size() != diseases.size()) {
    throw DatasetError("generator spec: one probability row per disease required");
  }
  for (std::size_t d = 0; d < probabilities.size(); ++d) {
    if (probabilities[d].size() != symptoms.size()) {
      throw DatasetError("generator spec: row " + std::to_string(d) + " has " +
                         std::to_string(probabilities[d].size()) + " entries, expected " +
                         std::to_string(symptoms.size()));
    }
    bool any_positive = false;
    for (double p : probabilities[d]) {
      if (!(p >= 0.0 && p <= 1.0)) {
        throw DatasetError("generator spec: probability outside [0,1] in row " +
                           std::to_string(d));
      }
      any_positive = any_positive || p > 0.0;
    }
    if (!any_positive) {
      throw DatasetError("generator spec: row " + std::to_string(d) + " can never produce a symptom");
    }
  }
  auto check_weights = [](const std::vector<double>& w, const char* what, bool allow_empty) {
    if (w.empty() && allow_empty) return;
    double total = 0;
    for (double x : w) {
      if (!(x >= 0.0) || !std::isfinite(x)) throw DatasetError(std::string("generator spec: bad ") + what);
      total += x;
    }
    if (!(total > 0)) throw DatasetError(std::string("generator spec: ") + what + " sum to zero");
  };
  check_weights(explicit_count_weights, "explicit_count_weights", false);
  if (explicit_count_weights.size() < 2 ||
      std::all_of(explicit_count_weights.begin() + 1, explicit_count_weights.end(),
                  [](double w) { return w == 0.0; })) {
    throw DatasetError("generator spec: explicit counts must allow at least one symptom");
  }
  check_weights(implicit_cap_weights, "implicit_cap_weights", true);
  if (!(false_fraction >= 0.0) || !std::isfinite(false_fraction)) {
    throw DatasetError("generator spec: false_fraction must be >= 0");
  }
  std::set<std::string> unique(symptoms.begin(), symptoms.end());
  if (unique.size() != symptoms.size()) throw DatasetError("generator spec: duplicate symptom names");
  std::set<std::string> unique_d(diseases.begin(), diseases.end());
  if (unique_d.size() != diseases.size()) throw DatasetError("generator spec: duplicate disease names");
}

std::string GeneratorSpec::to_json() const {
  ordered_json j;
  j["diseases"] = diseases;
  j["symptoms"] = symptoms;
  j["probabilities"] = probabilities;
  j["explicit_count_weights"] = explicit_count_weights;
  j["implicit_cap_weights"] = implicit_cap_weights;
  j["false_fraction"] = false_fraction;
  j["num_records"] = num_records;
  j["seed"] = seed;
  return j.dump(1);
}

GeneratorSpec GeneratorSpec::from_json(const std::string& json_text) {
  GeneratorSpec spec;
  try {
    auto j = ordered_json::parse(json_text);
    spec.diseases = j.at("diseases").get<std::vector<std::string>>();
    spec.symptoms = j.at("symptoms").get<std::vector<std::string>>();
    spec.probabilities = j.at("probabilities").get<std::vector<std::vector<double>>>();
    if (j.contains("explicit_count_weights")) {
      spec.explicit_count_weights = j["explicit_count_weights"].get<std::vector<double>>();
    }
    if (j.contains("implicit_cap_weights")) {
      spec.implicit_cap_weights = j["implicit_cap_weights"].get<std::vector<double>>();
    }
    spec.false_fraction = j.value("false_fraction", 0.0);
    spec.num_records = j.at("num_records").get<std::size_t>();
    spec.seed = j.value("seed", std::uint64_t{0});
  } catch (const ordered_json::exception& e) {
    throw DatasetError(std::string("bad generator spec JSON: ") + e.what());
  }
  spec.validate();
  return spec;
}

GeneratorSpec default_generator_spec(std::size_t num_records, std::uint64_t seed) {
  constexpr std::size_t kDiseases = 10;
  constexpr std::size_t kSymptoms = 40;
  constexpr std::size_t kCorePool = 30;  // symptoms 0..29 form disease profiles
  GeneratorSpec spec;
  for (std::size_t d = 0; d < kDiseases; ++d) {
    spec.diseases.push_back("disease_" + std::string(d < 10 ? "0" : "") + std::to_string(d));
  }
  for (std::size_t s = 0; s < kSymptoms; ++s) {
    spec.symptoms.push_back("symptom_" + std::string(s < 10 ? "0" : "") + std::to_string(s));
  }
  spec.probabilities.assign(kDiseases, std::vector<double>(kSymptoms, 0.01));
  for (std::size_t d = 0; d < kDiseases; ++d) {
    auto& row = spec.probabilities[d];
    // Six profile symptoms; the last three are shared with the next disease,
    // the first three with the previous one.
    for (std::size_t k = 0; k < 6; ++k) row[(3 * d + k) % kCorePool] = 0.9;
    // Background symptoms, weakly informative.
    for (std::size_t s = kCorePool; s < kSymptoms; ++s) {
      row[s] = ((s + d) % 3 == 0) ? 0.05 : 0.02;
    }
  }
  spec.explicit_count_weights = {0.0, 0.8, 0.2};
  spec.false_fraction = 0.15;
  spec.num_records = num_records;
  spec.seed = seed;
  return spec;
}

std::vector<DiagnosisRecord> generate_synthetic(const GeneratorSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  const std::size_t num_symptoms = spec.symptoms.size();
  std::vector<DiagnosisRecord> records;
  records.reserve(spec.num_records);
  while (records.size() < spec.num_records) {
    const auto d = static_cast<std::size_t>(uniform_index(rng, spec.diseases.size()));
    const auto& row = spec.probabilities[d];
    std::vector<std::size_t> present;
    std::vector<std::size_t> absent;
    for (std::size_t s = 0; s < num_symptoms; ++s) {
      (bernoulli(rng, row[s]) ? present : absent).push_back(s);
    }
    if (present.empty()) continue;  // a self-report needs something to report

    shuffle_in_place(std::span(present), rng);
    const std::size_t want_explicit = sample_weighted(rng, spec.explicit_count_weights);
    const std::size_t n_explicit = std::clamp<std::size_t>(want_explicit, 1, present.size());

    const auto n_false = std::min(
        absent.size(),
        static_cast<std::size_t>(std::lround(spec.false_fraction * static_cast<double>(present.size()))));
    shuffle_in_place(std::span(absent), rng);

    std::vector<SymptomValue> implicit;
    for (std::size_t i = n_explicit; i < present.size(); ++i) {
      implicit.push_back({spec.symptoms[present[i]], true});
    }
    for (std::size_t i = 0; i < n_false; ++i) implicit.push_back({spec.symptoms[absent[i]], false});
    shuffle_in_place(std::span(implicit), rng);
    if (!spec.implicit_cap_weights.empty()) {
      const std::size_t cap = sample_weighted(rng, spec.implicit_cap_weights);
      if (implicit.size() > cap) implicit.resize(cap);
    }
    // Records list their goal symptoms in catalog order, as a symptom table
    // would produce them.
    std::sort(implicit.begin(), implicit.end(),
              [](const SymptomValue& a, const SymptomValue& b) { return a.name < b.name; });

    DiagnosisRecord rec;
    for (std::size_t i = 0; i < n_explicit; ++i) {
      rec.explicit_symptoms.push_back({spec.symptoms[present[i]], true});
    }
    rec.implicit_symptoms = std::move(implicit);
    rec.disease = spec.diseases[d];
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace diaformer
