// Copyright 2026 The Diaformer Authors
// SPDX-License-Identifier: Apache-2.0

#include "diaformer/inference.hpp"

#include <algorithm>
#include <thread>

#include "diaformer/ops.hpp"
#include "json.hpp"

namespace diaformer {

void InferenceConfig::validate() const {
  if (!(rho_e > 0.0 && rho_e <= 1.0)) throw ConfigError("rho_e must be in (0, 1]");
  // rho_p = 1 is allowed (stop before any inquiry) even though it exceeds rho_e.
  if (!(rho_p > 0.0 && rho_p <= 1.0)) throw ConfigError("rho_p must be in (0, 1]");
}

const char* to_string(StopReason reason) {
  switch (reason) {
    case StopReason::EndSymbol: return "end_symbol";
    case StopReason::LowProbability: return "low_probability";
    case StopReason::TurnBudget: return "turn_budget";
    case StopReason::Exhausted: return "exhausted";
  }
  return "?";
}

Tensor next_inquiry_distribution(const DialogueState& state, const DiaformerModel& model,
                                 const SymptomVocab& vocab) {
  NoGradGuard no_grad;
  const auto seq =
      build_inference_input(state.explicit_symptoms(), state.acquired(), vocab, Head::Symptom);
  const auto out = model.forward(seq);
  return ops::softmax(ops::reshape(out.s_logits, {vocab.inquiry_classes()}));
}

Diagnosis diagnose(const DialogueState& state, const DiaformerModel& model,
                   const SymptomVocab& vocab) {
  NoGradGuard no_grad;
  const auto seq =
      build_inference_input(state.explicit_symptoms(), state.acquired(), vocab, Head::Disease);
  const Tensor probs = ops::softmax(model.forward(seq).d_logits);
  Diagnosis d;
  d.distribution.assign(probs.data().begin(), probs.data().end());
  d.disease = static_cast<int>(std::max_element(d.distribution.begin(), d.distribution.end()) -
                               d.distribution.begin());
  d.probability = d.distribution[static_cast<std::size_t>(d.disease)];
  return d;
}

Dialogue::Dialogue(const DiaformerModel& model, const SymptomVocab& vocab, InferenceConfig config,
                   std::vector<EncodedSymptom> explicit_symptoms)
    : model_(&model), vocab_(&vocab), config_(config) {
  config_.validate();
  state_.inquired.assign(vocab.num_symptoms(), 0);
  for (const auto& s : explicit_symptoms) {
    if (s.id < 0 || static_cast<std::size_t>(s.id) >= vocab.num_symptoms()) {
      throw std::out_of_range("dialogue: unknown symptom id " + std::to_string(s.id));
    }
    if (state_.inquired[static_cast<std::size_t>(s.id)]) {
      throw std::invalid_argument("dialogue: duplicate explicit symptom " + vocab.symptom_name(s.id));
    }
    state_.inquired[static_cast<std::size_t>(s.id)] = 1;
  }
  state_.known = std::move(explicit_symptoms);
  state_.explicit_count = state_.known.size();
  advance();
}

void Dialogue::stop(StopReason reason) {
  pending_.reset();
  state_.stop_reason = reason;
  state_.diagnosis = diagnose(state_, *model_, *vocab_);
}

void Dialogue::advance() {
  for (;;) {
    if (state_.turns >= config_.max_turns) return stop(StopReason::TurnBudget);
    if (needs_distribution_) {
      const Tensor dist = next_inquiry_distribution(state_, *model_, *vocab_);
      needs_distribution_ = false;
      const auto probs = dist.data();
      if (probs[static_cast<std::size_t>(vocab_->end_class())] > config_.rho_e) {
        return stop(StopReason::EndSymbol);
      }
      candidates_.clear();
      for (std::size_t id = 0; id < vocab_->num_symptoms(); ++id) {
        if (!state_.inquired[id]) candidates_.emplace_back(static_cast<double>(probs[id]), static_cast<int>(id));
      }
      std::stable_sort(candidates_.begin(), candidates_.end(),
                       [](const auto& a, const auto& b) { return a.first > b.first; });
      cursor_ = 0;
    }
    while (cursor_ < candidates_.size() &&
           state_.inquired[static_cast<std::size_t>(candidates_[cursor_].second)]) {
      ++cursor_;
    }
    if (cursor_ == candidates_.size()) return stop(StopReason::Exhausted);
    if (candidates_[cursor_].first < config_.rho_p) return stop(StopReason::LowProbability);
    pending_ = candidates_[cursor_].second;
    return;
  }
}

void Dialogue::answer(SimulatorAnswer answer) {
  if (!pending_) throw std::logic_error("dialogue: no pending question");
  const int id = *pending_;
  pending_.reset();
  ++state_.turns;
  state_.inquired[static_cast<std::size_t>(id)] = 1;
  state_.history.push_back({id, answer});
  if (answer == SimulatorAnswer::NotSure) {
    ++cursor_;
  } else {
    state_.known.push_back({id, answer == SimulatorAnswer::True});
    needs_distribution_ = true;
  }
  advance();
}

DialogueState run_dialogue(const DiaformerModel& model, const SymptomVocab& vocab,
                           const InferenceConfig& config,
                           std::vector<EncodedSymptom> explicit_symptoms, AnswerSource& source) {
  Dialogue dialogue(model, vocab, config, std::move(explicit_symptoms));
  while (auto question = dialogue.pending_question()) dialogue.answer(source.answer(*question));
  return dialogue.state();
}

DialogueState run_dialogue(const DiaformerModel& model, const SymptomVocab& vocab,
                           const InferenceConfig& config, const EncodedRecord& record) {
  SimulatorSource source(record);
  return run_dialogue(model, vocab, config, record.explicit_symptoms, source);
}

// ---------------------------------------------------------------------------

std::string EvalMetrics::to_json() const {
  nlohmann::ordered_json j;
  j["dacc"] = dacc;
  j["srec"] = srec;
  j["aturn"] = aturn;
  j["n_records"] = n_records;
  j["stop_reason_histogram"] = stop_reason_histogram;
  return j.dump();
}

double symptom_recall(const EncodedRecord& record, const DialogueState& state) {
  const std::size_t total = record.implicit_symptoms.size() + record.unknown_implicit;
  if (total == 0) return 1.0;
  std::size_t hit = 0;
  for (const auto& s : record.implicit_symptoms) {
    const auto acquired = state.acquired();
    if (std::any_of(acquired.begin(), acquired.end(), [&](const auto& a) { return a.id == s.id; })) {
      ++hit;
    }
  }
  return static_cast<double>(hit) / static_cast<double>(total);
}

EvalMetrics compute_metrics(std::span<const EncodedRecord> records,
                            std::span<const DialogueState> states) {
  if (records.empty()) throw std::invalid_argument("evaluate: empty test set");
  if (records.size() != states.size()) throw std::invalid_argument("evaluate: one state per record required");
  EvalMetrics m;
  m.n_records = records.size();
  for (const char* name : {"end_symbol", "low_probability", "turn_budget", "exhausted"}) {
    m.stop_reason_histogram[name] = 0;
  }
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& st = states[i];
    if (st.diagnosis && st.diagnosis->disease == records[i].disease) m.dacc += 1;
    m.srec += symptom_recall(records[i], st);
    m.aturn += static_cast<double>(st.turns);
    if (st.stop_reason) ++m.stop_reason_histogram[to_string(*st.stop_reason)];
  }
  const auto n = static_cast<double>(records.size());
  m.dacc /= n;
  m.srec /= n;
  m.aturn /= n;
  return m;
}

EvalMetrics evaluate_agent(std::span<const EncodedRecord> records, const Agent& agent,
                           std::size_t threads) {
  if (records.empty()) throw std::invalid_argument("evaluate: empty test set");
  std::vector<DialogueState> states(records.size());
  threads = std::clamp<std::size_t>(threads, 1, records.size());
  if (threads == 1) {
    for (std::size_t i = 0; i < records.size(); ++i) states[i] = agent(records[i]);
  } else {
    std::vector<std::thread> workers;
    std::vector<std::exception_ptr> errors(threads);
    for (std::size_t w = 0; w < threads; ++w) {
      workers.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < records.size(); i += threads) states[i] = agent(records[i]);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : workers) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  return compute_metrics(records, states);
}

EvalMetrics evaluate(std::span<const EncodedRecord> records, const DiaformerModel& model,
                     const SymptomVocab& vocab, const InferenceConfig& config,
                     std::size_t threads) {
  config.validate();
  return evaluate_agent(
      records, [&](const EncodedRecord& r) { return run_dialogue(model, vocab, config, r); },
      threads);
}

// ---------------------------------------------------------------------------

namespace {

Tensor bag_features(std::span<const EncodedRecord> records, std::size_t num_symptoms,
                    bool include_implicit) {
  std::vector<real> x(records.size() * num_symptoms, real{0});
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto put = [&](const EncodedSymptom& s) {
      x[i * num_symptoms + static_cast<std::size_t>(s.id)] = s.present ? real{1} : real{-1};
    };
    for (const auto& s : records[i].explicit_symptoms) put(s);
    if (include_implicit) {
      for (const auto& s : records[i].implicit_symptoms) put(s);
    }
  }
  return Tensor::from({records.size(), num_symptoms}, std::move(x));
}

}  // namespace

double bag_classifier_accuracy(std::span<const EncodedRecord> train,
                               std::span<const EncodedRecord> test, const SymptomVocab& vocab,
                               const BagClassifierOptions& options) {
  if (train.empty() || test.empty()) throw std::invalid_argument("bag classifier: empty split");
  const std::size_t s = vocab.num_symptoms();
  const std::size_t c = vocab.num_diseases();
  std::vector<int> labels;
  std::vector<EncodedRecord> usable;
  for (const auto& r : train) {
    if (r.disease >= 0) {
      labels.push_back(r.disease);
      usable.push_back(r);
    }
  }
  if (usable.empty()) throw std::invalid_argument("bag classifier: no labelled training records");
  const Tensor x = bag_features(usable, s, options.include_implicit);

  std::vector<Parameter> params;
  params.emplace_back("weight", Tensor::zeros({s, c}, true));
  params.emplace_back("bias", Tensor::zeros({c}, true));
  AdamOptions adam;
  adam.lr = static_cast<real>(options.lr);
  for (std::size_t step = 0; step < options.steps; ++step) {
    const Tensor logits = ops::add(ops::matmul(x, params[0].tensor), params[1].tensor);
    ops::cross_entropy_rows(logits, labels).backward();
    adam_step(params, adam);
  }

  NoGradGuard no_grad;
  const Tensor xt = bag_features(test, s, options.include_implicit);
  const Tensor logits = ops::add(ops::matmul(xt, params[0].tensor), params[1].tensor);
  const auto z = logits.data();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto row = z.subspan(i * c, c);
    const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    if (best == test[i].disease) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

double explicit_only_baseline(std::span<const EncodedRecord> train,
                              std::span<const EncodedRecord> test, const SymptomVocab& vocab) {
  return bag_classifier_accuracy(train, test, vocab, {});
}

}  // namespace diaformer
