// Copyright 2026 The Diaformer Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <set>

#include "diaformer/inference.hpp"
#include "diaformer/ops.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace diaformer;
using doctest::Approx;

namespace {

SymptomVocab numbered_vocab(std::size_t symptoms, std::size_t diseases) {
  std::vector<std::string> s, d;
  for (std::size_t i = 0; i < symptoms; ++i) s.push_back("s" + std::string(i < 10 ? "0" : "") + std::to_string(i));
  for (std::size_t i = 0; i < diseases; ++i) d.push_back("d" + std::to_string(i));
  return SymptomVocab(s, d);
}

ModelConfig small_config(const SymptomVocab& v, std::uint64_t seed = 1) {
  ModelConfig c;
  c.layers = 1;
  c.hidden = 16;
  c.heads = 2;
  c.dropout = 0;
  c.init_std = 0.3;
  c.num_symptoms = v.num_symptoms();
  c.num_diseases = v.num_diseases();
  c.seed = seed;
  return c;
}

// Makes the inquiry distribution independent of the input: softmax(bias).
void fix_inquiry_logits(DiaformerModel& model, const std::vector<real>& bias) {
  for (auto& x : model.parameter("head.symptom.weight").tensor.mutable_data()) x = 0;
  auto b = model.parameter("head.symptom.bias").tensor.mutable_data();
  REQUIRE(b.size() == bias.size());
  std::copy(bias.begin(), bias.end(), b.begin());
}

EncodedRecord record(std::vector<EncodedSymptom> exp, std::vector<EncodedSymptom> imp, int disease) {
  EncodedRecord r;
  r.explicit_symptoms = std::move(exp);
  r.implicit_symptoms = std::move(imp);
  r.disease = disease;
  return r;
}

std::vector<int> asked(const DialogueState& s) {
  std::vector<int> out;
  for (const auto& h : s.history) out.push_back(h.symptom);
  return out;
}

}  // namespace

TEST_CASE("inference config validation") {
  CHECK_NOTHROW(InferenceConfig{}.validate());
  CHECK_NOTHROW((InferenceConfig{0.9, 1.0, 20}).validate());
  CHECK_THROWS_AS((InferenceConfig{0.0, 0.01, 20}).validate(), ConfigError);
  CHECK_THROWS_AS((InferenceConfig{0.9, 0.0, 20}).validate(), ConfigError);
  CHECK_THROWS_AS((InferenceConfig{1.5, 0.01, 20}).validate(), ConfigError);
  CHECK(InferenceConfig{}.rho_e == 0.9);
  CHECK(InferenceConfig{}.max_turns == 20);
}

TEST_CASE("inquiry distribution sums to one and matches the training [S]_1") {
  const auto v = numbered_vocab(10, 3);
  DiaformerModel model(small_config(v));
  DialogueState state;
  state.known = {{2, true}, {7, false}};
  state.explicit_count = 2;
  const auto dist = next_inquiry_distribution(state, model, v);
  double total = 0;
  for (auto p : dist.data()) total += p;
  CHECK(total == Approx(1.0).epsilon(1e-6));

  const auto seq = build_input(record({{2, true}, {7, false}}, {}, 0), {}, {}, v);
  const auto train_row = ops::softmax(ops::reshape(model.forward(seq).s_logits, {v.inquiry_classes()}));
  for (std::size_t i = 0; i < v.inquiry_classes(); ++i) CHECK(dist.at(i) == Approx(train_row.at(i)).epsilon(1e-12));
}

TEST_CASE("diagnosis distribution") {
  const auto v = numbered_vocab(10, 4);
  DiaformerModel model(small_config(v));
  DialogueState state;
  state.known = {{2, true}, {3, true}};
  state.explicit_count = 1;
  const auto d = diagnose(state, model, v);
  CHECK(d.distribution.size() == 4);
  double total = 0;
  for (auto p : d.distribution) total += p;
  CHECK(total == Approx(1.0).epsilon(1e-6));
  CHECK(d.probability == *std::max_element(d.distribution.begin(), d.distribution.end()));

  const auto one = numbered_vocab(5, 1);
  DiaformerModel single(small_config(one));
  const auto only = diagnose(state, single, one);
  CHECK(only.disease == 0);
  CHECK(only.probability == Approx(1.0));
}

TEST_CASE("a confident END stops before any inquiry") {
  const auto v = numbered_vocab(6, 2);
  DiaformerModel model(small_config(v));
  std::vector<real> bias(7, 0);
  bias[6] = 10;
  fix_inquiry_logits(model, bias);
  const auto s = run_dialogue(model, v, {}, record({{0, true}}, {{1, true}}, 0));
  CHECK(s.turns == 0);
  CHECK(s.stop_reason == StopReason::EndSymbol);
  REQUIRE(s.diagnosis.has_value());
}

TEST_CASE("a floor of one stops before any inquiry") {
  const auto v = numbered_vocab(6, 2);
  DiaformerModel model(small_config(v, 2));
  const auto s = run_dialogue(model, v, {0.9, 1.0, 20}, record({{0, true}}, {}, 1));
  CHECK(s.turns == 0);
  CHECK(s.stop_reason == StopReason::LowProbability);
  CHECK(s.history.empty());
}

TEST_CASE("not-sure answers consume turns and move to the next candidate") {
  const auto v = numbered_vocab(8, 2);
  DiaformerModel model(small_config(v));
  // s00 > s01 > s02 > s03 >> rest; END stays low.
  fix_inquiry_logits(model, {5, 4, 3, 2, -10, -10, -10, -10, 0});
  const auto r = record({{5, true}}, {{2, true}}, 0);
  const auto s = run_dialogue(model, v, {}, r);
  CHECK(asked(s) == std::vector<int>{0, 1, 2, 3});
  CHECK(s.history[0].answer == SimulatorAnswer::NotSure);
  CHECK(s.history[2].answer == SimulatorAnswer::True);
  CHECK(s.turns == 4);
  CHECK(s.stop_reason == StopReason::LowProbability);
  // Only the answered symptom joins the sequence.
  CHECK(s.known == std::vector<EncodedSymptom>{{5, true}, {2, true}});
  CHECK(symptom_recall(r, s) == 1.0);
}

TEST_CASE("recall counts the fraction of implicit symptoms acquired") {
  const auto v = numbered_vocab(8, 2);
  DiaformerModel model(small_config(v));
  fix_inquiry_logits(model, {5, 4, 3, -10, -10, -10, -10, -10, 0});
  const auto r = record({{7, true}}, {{1, false}, {4, true}, {6, true}}, 0);
  const auto s = run_dialogue(model, v, {}, r);
  CHECK(asked(s) == std::vector<int>{0, 1, 2});
  CHECK(s.turns == 3);
  CHECK(symptom_recall(r, s) == Approx(1.0 / 3));
  CHECK(s.known.back() == EncodedSymptom{1, false});
}

TEST_CASE("the turn budget is checked before each question") {
  const auto v = numbered_vocab(8, 2);
  DiaformerModel model(small_config(v));
  fix_inquiry_logits(model, {3, 3, 3, 3, 3, 3, 3, 3, 0});
  const auto s = run_dialogue(model, v, {0.9, 0.01, 3}, record({{0, true}}, {{1, true}}, 0));
  CHECK(s.turns == 3);
  CHECK(s.stop_reason == StopReason::TurnBudget);

  const auto zero = run_dialogue(model, v, {0.9, 0.01, 0}, record({{0, true}}, {{1, true}}, 0));
  CHECK(zero.turns == 0);
  CHECK(zero.stop_reason == StopReason::TurnBudget);
}

TEST_CASE("running out of candidates stops the dialogue") {
  const auto v = numbered_vocab(3, 2);
  DiaformerModel model(small_config(v));
  fix_inquiry_logits(model, {1, 1, 1, -5});
  const auto s = run_dialogue(model, v, {0.9, 0.01, 20}, record({{0, true}}, {}, 0));
  CHECK(asked(s) == std::vector<int>{1, 2});
  CHECK(s.stop_reason == StopReason::Exhausted);
}

TEST_CASE("dialogue step API") {
  const auto v = numbered_vocab(8, 2);
  DiaformerModel model(small_config(v));
  fix_inquiry_logits(model, {5, 4, 3, -10, -10, -10, -10, -10, 0});
  Dialogue d(model, v, {}, {{6, true}});
  REQUIRE(d.pending_question() == 0);
  d.answer(SimulatorAnswer::False);
  CHECK(d.pending_question() == 1);
  d.answer(SimulatorAnswer::NotSure);
  CHECK(d.pending_question() == 2);
  d.answer(SimulatorAnswer::True);
  CHECK(d.finished());
  CHECK_THROWS_AS(d.answer(SimulatorAnswer::True), std::logic_error);
  CHECK(d.state().turns == 3);
  CHECK(d.state().acquired().size() == 2);

  CHECK_THROWS_AS(Dialogue(model, v, {}, {{8, true}}), std::out_of_range);
  CHECK_THROWS_AS(Dialogue(model, v, {}, {{1, true}, {1, false}}), std::invalid_argument);
  CHECK_THROWS_AS(Dialogue(model, v, {0.9, 0, 20}, {{1, true}}), ConfigError);
}

TEST_CASE("dialogue properties over random models and records") {
  const auto raw = generate_synthetic(default_generator_spec(150, 8), 8);
  const auto v = build_vocab(raw);
  const auto records = encode_records(raw, v);
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    DiaformerModel model(small_config(v, seed));
    const InferenceConfig config{0.9, 0.005, 1 + seed * 6};
    for (const auto& r : records) {
      const auto s = run_dialogue(model, v, config, r);
      CHECK(s.turns <= config.max_turns);
      CHECK(s.turns == s.history.size());
      const auto q = asked(s);
      CHECK(std::set<int>(q.begin(), q.end()).size() == q.size());
      for (const auto& e : r.explicit_symptoms) CHECK(std::find(q.begin(), q.end(), e.id) == q.end());
      for (const auto& a : s.acquired()) {
        CHECK(std::any_of(r.implicit_symptoms.begin(), r.implicit_symptoms.end(),
                          [&](const auto& i) { return i == a; }));
      }
      CHECK(s.diagnosis.has_value());
    }
  }
}

TEST_CASE("dialogues and evaluation are deterministic") {
  const auto raw = generate_synthetic(default_generator_spec(60, 9), 9);
  const auto v = build_vocab(raw);
  const auto records = encode_records(raw, v);
  DiaformerModel model(small_config(v, 4));
  for (const auto& r : records) {
    const auto a = run_dialogue(model, v, {0.9, 0.005, 20}, r);
    const auto b = run_dialogue(model, v, {0.9, 0.005, 20}, r);
    CHECK(asked(a) == asked(b));
    CHECK(a.diagnosis->distribution == b.diagnosis->distribution);
  }
  const auto m1 = evaluate(records, model, v, {0.9, 0.005, 20}, 1);
  const auto m3 = evaluate(records, model, v, {0.9, 0.005, 20}, 3);
  CHECK(m1.to_json() == m3.to_json());
  CHECK_THROWS_AS(evaluate({}, model, v, {}), std::invalid_argument);
}

TEST_CASE("metrics on a hand-computed three-record fixture") {
  std::vector<EncodedRecord> records{
      record({{0, true}}, {{1, true}, {2, true}, {3, false}}, 0),
      record({{4, true}}, {}, 1),
      record({{5, true}}, {{6, true}, {7, true}}, 2),
  };
  records[2].unknown_implicit = 1;

  std::vector<DialogueState> states(3);
  states[0].known = {{0, true}, {1, true}, {3, false}};
  states[0].explicit_count = 1;
  states[0].turns = 3;
  states[0].stop_reason = StopReason::LowProbability;
  states[0].diagnosis = Diagnosis{0, 0.8, {0.8, 0.1, 0.1}};
  states[1].known = {{4, true}};
  states[1].explicit_count = 1;
  states[1].turns = 0;
  states[1].stop_reason = StopReason::EndSymbol;
  states[1].diagnosis = Diagnosis{2, 0.5, {0.2, 0.3, 0.5}};
  states[2].known = {{5, true}, {6, true}};
  states[2].explicit_count = 1;
  states[2].turns = 5;
  states[2].stop_reason = StopReason::TurnBudget;
  states[2].diagnosis = Diagnosis{2, 0.9, {0.05, 0.05, 0.9}};

  const auto m = compute_metrics(records, states);
  CHECK(m.n_records == 3);
  CHECK(m.dacc == Approx(2.0 / 3));
  CHECK(m.srec == Approx((2.0 / 3 + 1.0 + 1.0 / 3) / 3));
  CHECK(m.aturn == Approx(8.0 / 3));
  CHECK(m.stop_reason_histogram.at("low_probability") == 1);
  CHECK(m.stop_reason_histogram.at("end_symbol") == 1);
  CHECK(m.stop_reason_histogram.at("turn_budget") == 1);
  CHECK(m.stop_reason_histogram.at("exhausted") == 0);

  const auto via_agent = evaluate_agent(records, [&](const EncodedRecord& r) {
    return states[static_cast<std::size_t>(&r - records.data())];
  });
  CHECK(via_agent.to_json() == m.to_json());
}

TEST_CASE("oracle and silent agents bound the recall") {
  const auto raw = generate_synthetic(default_generator_spec(200, 10), 10);
  const auto v = build_vocab(raw);
  const auto records = encode_records(raw, v);

  const auto oracle = evaluate_agent(records, [](const EncodedRecord& r) {
    DialogueState s;
    s.known = r.explicit_symptoms;
    s.explicit_count = s.known.size();
    for (const auto& i : r.implicit_symptoms) {
      s.known.push_back(i);
      s.history.push_back({i.id, i.present ? SimulatorAnswer::True : SimulatorAnswer::False});
    }
    s.turns = r.implicit_symptoms.size();
    s.stop_reason = StopReason::EndSymbol;
    s.diagnosis = Diagnosis{r.disease, 1, {}};
    return s;
  });
  double mean_imp = 0;
  for (const auto& r : records) mean_imp += static_cast<double>(r.implicit_symptoms.size());
  mean_imp /= static_cast<double>(records.size());
  CHECK(oracle.srec == 1.0);
  CHECK(oracle.aturn == Approx(mean_imp));
  CHECK(oracle.dacc == 1.0);

  std::vector<EncodedRecord> with_implicit;
  for (const auto& r : records) {
    if (!r.implicit_symptoms.empty()) with_implicit.push_back(r);
  }
  const auto silent = evaluate_agent(with_implicit, [](const EncodedRecord& r) {
    DialogueState s;
    s.known = r.explicit_symptoms;
    s.explicit_count = s.known.size();
    s.stop_reason = StopReason::EndSymbol;
    s.diagnosis = Diagnosis{0, 1, {}};
    return s;
  });
  CHECK(silent.srec == 0.0);
  CHECK(silent.aturn == 0.0);
}

TEST_CASE("bag classifier separates linearly separable data") {
  const auto v = numbered_vocab(4, 2);
  std::vector<EncodedRecord> train, test;
  for (int i = 0; i < 20; ++i) {
    const int d = i % 2;
    train.push_back(record({{d, true}}, {}, d));
    train.push_back(record({{d, true}, {2 + d, i % 3 == 0}}, {}, d));
  }
  test.push_back(record({{0, true}}, {}, 0));
  test.push_back(record({{1, true}, {2, false}}, {}, 1));
  CHECK(explicit_only_baseline(train, test, v) == 1.0);
  CHECK_THROWS_AS(explicit_only_baseline({}, test, v), std::invalid_argument);
}

TEST_CASE("explicit-only baseline ignores implicit symptoms") {
  const auto v = numbered_vocab(4, 2);
  std::vector<EncodedRecord> train;
  for (int i = 0; i < 20; ++i) train.push_back(record({{0, true}}, {{1 + i % 2, true}}, i % 2));
  const std::vector<EncodedRecord> test{record({{0, true}}, {{1, true}}, 0), record({{0, true}}, {{2, true}}, 1)};
  CHECK(explicit_only_baseline(train, test, v) == 0.5);
  CHECK(bag_classifier_accuracy(train, test, v, {true, 400, 0.05}) == 1.0);
}

TEST_CASE("metrics JSON") {
  EvalMetrics m;
  m.dacc = 0.5;
  m.n_records = 2;
  const auto j = nlohmann::json::parse(m.to_json());
  for (const char* key : {"dacc", "srec", "aturn", "n_records", "stop_reason_histogram"}) CHECK(j.contains(key));
}
