// Copyright 2026 The Diaformer Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance suite. Prints one PASS/FAIL/SKIP line per criterion and exits
// non-zero if any criterion fails. With a single --only criterion that is
// skipped, exits with 77.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "CLI11.hpp"
#include "diaformer/inference.hpp"
#include "diaformer/ops.hpp"
#include "diaformer/training.hpp"

using namespace diaformer;
namespace fs = std::filesystem;

namespace {

enum class Verdict { Pass, Fail, Skip };

struct Outcome {
  Verdict verdict;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Outcome verdict(bool ok, std::string detail) { return {ok ? Verdict::Pass : Verdict::Fail, std::move(detail)}; }

// ---------------------------------------------------------------------------

Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  GradientSuiteOptions options;  // L=2, H=32, A=2; m=2, n=3, R=2; every entry
  const auto r = check_model_gradients(options);
  const double elapsed = seconds_since(t0);
  return verdict(r.max_rel_err <= 1e-5 && elapsed < 60.0,
                 fmt("max_rel_err=%.3g over %zu entries (worst %s), %.1fs", r.max_rel_err, r.checked,
                     r.worst.c_str(), elapsed));
}

// ---------------------------------------------------------------------------

// Direct transliteration: L = -sum_i y_i log(e^{z_i} / (sum_j (1-y_j) e^{z_j} + e^{z_i})) / |y|.
double concurrent_softmax_reference(const std::vector<double>& z, const std::vector<int>& y) {
  long double loss = 0;
  int count = 0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (!y[i]) continue;
    long double denom = std::exp(static_cast<long double>(z[i]));
    for (std::size_t j = 0; j < z.size(); ++j) denom += (1 - y[j]) * std::exp(static_cast<long double>(z[j]));
    loss -= std::log(std::exp(static_cast<long double>(z[i])) / denom);
    ++count;
  }
  return static_cast<double>(loss / count);
}

Outcome concurrent_softmax_oracle() {
  Rng rng(8);
  double worst = 0, worst_single = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t c = 2 + uniform_index(rng, 60);
    std::vector<double> z(c);
    std::normal_distribution<double> normal(0.0, 1.0 + uniform01(rng) * 4.0);
    for (auto& v : z) v = normal(rng);
    // Every 4th trial is a single-label case.
    const std::size_t k = trial % 4 == 0 ? 1 : 1 + uniform_index(rng, c);
    const auto order = shuffle_sequence(c, rng);
    std::vector<int> y(c, 0), labels;
    for (std::size_t i = 0; i < k; ++i) {
      y[order[i]] = 1;
      labels.push_back(static_cast<int>(order[i]));
    }
    const Tensor logits = Tensor::from({c}, std::vector<real>(z.begin(), z.end()));
    const double got = ops::concurrent_softmax_loss(logits, labels).item();
    worst = std::max(worst, std::abs(got - concurrent_softmax_reference(z, y)));
    if (k == 1) {
      worst_single = std::max(worst_single, std::abs(got - double(ops::cross_entropy(logits, labels[0]).item())));
    }
  }
  return verdict(worst <= 1e-9 && worst_single <= 1e-9,
                 fmt("max |diff| vs transliteration %.3g, singleton vs cross-entropy %.3g", worst, worst_single));
}

// ---------------------------------------------------------------------------

SymptomVocab numbered_vocab(std::size_t symptoms, std::size_t diseases) {
  std::vector<std::string> s, d;
  for (std::size_t i = 0; i < symptoms; ++i) s.push_back(fmt("s%02zu", i));
  for (std::size_t i = 0; i < diseases; ++i) d.push_back(fmt("d%zu", i));
  return SymptomVocab(s, d);
}

EncodedRecord random_record(Rng& rng, std::size_t symptoms, std::size_t m, std::size_t n) {
  const auto ids = shuffle_sequence(symptoms, rng);
  EncodedRecord r;
  for (std::size_t i = 0; i < m; ++i) r.explicit_symptoms.push_back({static_cast<int>(ids[i]), bernoulli(rng, 0.7)});
  for (std::size_t i = 0; i < n; ++i) r.implicit_symptoms.push_back({static_cast<int>(ids[m + i]), bernoulli(rng, 0.7)});
  r.disease = 0;
  return r;
}

Outcome mask_no_leakage() {
  const std::size_t S = 16;
  const auto vocab = numbered_vocab(S, 3);
  ModelConfig config;
  config.layers = 2;
  config.hidden = 16;
  config.heads = 2;
  config.dropout = 0;
  config.init_std = 0.3;
  config.num_symptoms = S;
  config.num_diseases = 3;
  config.seed = 11;
  DiaformerModel model(config);
  NoGradGuard no_grad;
  Rng rng(12);

  const auto token_count = static_cast<int>(vocab.token_count());
  double worst_hidden = 0, weakest_visible = INFINITY;
  std::size_t hidden_pairs = 0, visible_pairs = 0;
  for (int layout = 0; layout < 200; ++layout) {
    const std::size_t m = 1 + uniform_index(rng, 4), n = uniform_index(rng, 6), repeats = uniform_index(rng, 5);
    const auto record = random_record(rng, S, m, n);
    const auto seq = build_input(record, shuffle_sequence(n, rng), build_repeated_sequences(n, repeats, rng), vocab);
    const auto base = model.forward(seq).s_logits;
    const std::size_t width = vocab.inquiry_classes();
    for (std::size_t k = 0; k < seq.length(); ++k) {
      auto changed = seq;
      changed.token_ids[k] = (seq.token_ids[k] + 1 + static_cast<int>(uniform_index(rng, token_count - 1))) % token_count;
      const auto out = model.forward(changed).s_logits;
      for (std::size_t i = 0; i < seq.s_positions.size(); ++i) {
        double diff = 0;
        for (std::size_t c = 0; c < width; ++c) {
          diff = std::max(diff, std::abs(double(out.data()[i * width + c]) - double(base.data()[i * width + c])));
        }
        if (seq.visible(seq.s_positions[i], k)) {
          weakest_visible = std::min(weakest_visible, diff);
          ++visible_pairs;
        } else {
          worst_hidden = std::max(worst_hidden, diff);
          ++hidden_pairs;
        }
      }
    }
  }
  return verdict(worst_hidden <= 1e-6 && weakest_visible > 1e-6,
                 fmt("invisible: max change %.3g over %zu pairs; visible: min change %.3g over %zu pairs",
                     worst_hidden, hidden_pairs, weakest_visible, visible_pairs));
}

// ---------------------------------------------------------------------------

// Visibility from the attention rules, computed from (m, n, R) and positions
// alone: explicit symptoms are seen by everyone and see only each other; an
// implicit symptom sees those generated before it; [S]_i sees implicit
// symptoms strictly before i; [D] sees every implicit symptom; a repeated
// segment is a private copy of the same rules over its own permutation.
struct RuleToken {
  enum Tag { Exp, Imp, S, Seg, SegS, D } tag;
  std::size_t index;
  std::size_t segment;
};

std::vector<RuleToken> rule_layout(std::size_t m, std::size_t n, std::size_t repeats) {
  std::vector<RuleToken> t;
  for (std::size_t i = 0; i < m; ++i) t.push_back({RuleToken::Exp, i, 0});
  for (std::size_t i = 0; i < n; ++i) t.push_back({RuleToken::Imp, i, 0});
  for (std::size_t i = 0; i <= n; ++i) t.push_back({RuleToken::S, i, 0});
  if (n > 1) {
    for (std::size_t r = 1; r <= repeats; ++r) {
      for (std::size_t j = 0; j + 1 < n; ++j) {
        t.push_back({RuleToken::Seg, j, r});
        t.push_back({RuleToken::SegS, j + 1, r});
      }
    }
  }
  t.push_back({RuleToken::D, 0, 0});
  return t;
}

bool rule_visible(const RuleToken& q, const RuleToken& k, bool self) {
  if (self || k.tag == RuleToken::Exp) return true;
  switch (q.tag) {
    case RuleToken::Imp: return k.tag == RuleToken::Imp && k.index < q.index;
    case RuleToken::S: return k.tag == RuleToken::Imp && k.index < q.index;
    case RuleToken::D: return k.tag == RuleToken::Imp;
    case RuleToken::Seg: return k.tag == RuleToken::Seg && k.segment == q.segment && k.index < q.index;
    case RuleToken::SegS: return k.tag == RuleToken::Seg && k.segment == q.segment && k.index < q.index;
    default: return false;
  }
}

Outcome mask_oracle() {
  const auto vocab = numbered_vocab(10, 2);
  Rng rng(13);
  std::size_t layouts = 0, cells = 0, mismatches = 0;
  std::string first;
  for (std::size_t m = 0; m <= 6; ++m) {
    for (std::size_t n = 0; m + n <= 6; ++n) {
      for (std::size_t repeats = 0; repeats <= 2; ++repeats) {
        const auto record = random_record(rng, 10, m, n);
        const auto seq =
            build_input(record, shuffle_sequence(n, rng), build_repeated_sequences(n, repeats, rng), vocab);
        const auto mask = build_attention_mask(seq.roles);
        const auto rules = rule_layout(m, n, repeats);
        ++layouts;
        if (rules.size() != seq.length() || mask != seq.visibility) {
          ++mismatches;
          if (first.empty()) first = fmt("layout m=%zu n=%zu R=%zu", m, n, repeats);
          continue;
        }
        for (std::size_t q = 0; q < rules.size(); ++q) {
          for (std::size_t k = 0; k < rules.size(); ++k, ++cells) {
            if ((mask[q * rules.size() + k] != 0) != rule_visible(rules[q], rules[k], q == k)) {
              ++mismatches;
              if (first.empty()) first = fmt("m=%zu n=%zu R=%zu query %zu key %zu", m, n, repeats, q, k);
            }
          }
        }
      }
    }
  }
  return verdict(mismatches == 0, fmt("%zu layouts, %zu cells, %zu mismatches%s%s", layouts, cells, mismatches,
                                      first.empty() ? "" : ", first: ", first.c_str()));
}

// ---------------------------------------------------------------------------

constexpr std::uint64_t kSyntheticSeed = 20260417;

struct SyntheticTask {
  SymptomVocab vocab;
  std::vector<EncodedRecord> train, test;
};

const SyntheticTask& synthetic_task() {
  static const SyntheticTask task = [] {
    const auto spec = default_generator_spec(2500, kSyntheticSeed);
    const auto raw = generate_synthetic(spec, spec.seed);
    const std::vector<DiagnosisRecord> train(raw.begin(), raw.begin() + 2000), test(raw.begin() + 2000, raw.end());
    SyntheticTask t;
    t.vocab = build_vocab(train);
    t.train = encode_records(train, t.vocab);
    t.test = encode_records(test, t.vocab);
    return t;
  }();
  return task;
}

ModelConfig tiny_model(const SymptomVocab& vocab, std::uint64_t seed) {
  ModelConfig c;
  c.layers = 2;
  c.hidden = 64;
  c.heads = 2;
  c.num_symptoms = vocab.num_symptoms();
  c.num_diseases = vocab.num_diseases();
  c.seed = seed;
  return c;
}

TrainConfig tiny_training(std::size_t epochs, std::uint64_t seed) {
  TrainConfig t;
  t.epochs = epochs;
  t.lr = 1e-3;
  t.seed = seed;
  t.holdout_fraction = 0;
  return t;
}

InferenceConfig synthetic_inference() {
  InferenceConfig c;
  c.rho_p = kRhoPSynthetic;
  c.max_turns = 20;
  return c;
}

Outcome synthetic_end_to_end() {
  const auto& task = synthetic_task();
  const double baseline = explicit_only_baseline(task.train, task.test, task.vocab);
  BagClassifierOptions full_info;
  full_info.include_implicit = true;
  const double oracle = bag_classifier_accuracy(task.train, task.test, task.vocab, full_info);

  DiaformerModel model(tiny_model(task.vocab, 1));
  const auto t0 = Clock::now();
  train(model, task.vocab, task.train, {}, tiny_training(8, 1));
  const double train_seconds = seconds_since(t0);
  const auto m = evaluate(task.test, model, task.vocab, synthetic_inference());

  const bool ok = oracle - baseline >= 0.15 && m.dacc >= baseline + 0.10 && m.srec >= 0.60 && train_seconds <= 900;
  return verdict(ok, fmt("DAcc %.3f (baseline %.3f, need >= %.3f), SRec %.3f (need >= 0.60), ATurn %.2f; "
                         "full-information oracle %.3f, headroom %.3f; training %.0fs",
                         m.dacc, baseline, baseline + 0.10, m.srec, m.aturn, oracle, oracle - baseline,
                         train_seconds));
}

// ---------------------------------------------------------------------------

Outcome orderless_ablation() {
  const auto& task = synthetic_task();
  const std::size_t epochs = 3;
  double full_sum = 0, ordered_sum = 0;
  std::ostringstream per_seed;
  for (std::uint64_t seed : {1, 2, 3}) {
    double srec[2];
    for (int variant = 0; variant < 2; ++variant) {
      DiaformerModel model(tiny_model(task.vocab, seed));
      auto config = tiny_training(epochs, seed);
      if (variant == 1) config = config.ordered();
      train(model, task.vocab, task.train, {}, config);
      srec[variant] = evaluate(task.test, model, task.vocab, synthetic_inference()).srec;
    }
    full_sum += srec[0];
    ordered_sum += srec[1];
    per_seed << fmt(" seed %llu: %.3f vs %.3f;", static_cast<unsigned long long>(seed), srec[0], srec[1]);
  }
  const double full = full_sum / 3, ordered = ordered_sum / 3;
  return verdict(full - ordered > 0, fmt("mean SRec full %.3f, ordered %.3f, margin %.3f (%zu epochs;%s)", full,
                                         ordered, full - ordered, epochs, per_seed.str().c_str()));
}

// ---------------------------------------------------------------------------

fs::path data_dir() {
  if (const char* env = std::getenv("DIAFORMER_DATA_DIR")) return env;
  return DIAFORMER_DATA_DIR;
}

Outcome public_datasets() {
  struct Corpus {
    const char* name;
    double rho_p;
    double required;
  };
  const Corpus corpora[] = {{"muzhi", kRhoPMuZhi, 0.70}, {"dxy", kRhoPDxy, 0.78}};
  std::string detail;
  bool any = false, ok = true;
  for (const auto& c : corpora) {
    const auto dir = data_dir() / c.name;
    if (!fs::exists(dir / "train.json") || !fs::exists(dir / "test.json")) {
      detail += fmt("%s: not found under %s; ", c.name, dir.string().c_str());
      continue;
    }
    any = true;
    const auto train_raw = load_dataset(dir / "train.json");
    const auto vocab = build_vocab(train_raw);
    const auto train_records = encode_records(train_raw, vocab);
    const auto test_records = encode_records(load_dataset(dir / "test.json"), vocab);

    ModelConfig mc;  // L=5, H=512
    mc.num_symptoms = vocab.num_symptoms();
    mc.num_diseases = vocab.num_diseases();
    TrainConfig tc;  // lr 5e-5, batch 16
    tc.eval.rho_p = c.rho_p;
    const auto [tr, ho] = split_holdout(train_records, tc.holdout_fraction, tc.seed);
    DiaformerModel model(mc);
    train(model, vocab, tr, ho, tc);
    InferenceConfig ic;
    ic.rho_p = c.rho_p;
    const auto m = evaluate(test_records, model, vocab, ic);
    ok = ok && m.dacc >= c.required;
    detail += fmt("%s: DAcc %.3f (need >= %.2f), SRec %.3f, ATurn %.2f; ", c.name, m.dacc, c.required, m.srec,
                  m.aturn);
  }
  if (!any) return {Verdict::Skip, detail + "datasets absent"};
  return verdict(ok, detail);
}

// ---------------------------------------------------------------------------

Outcome determinism() {
  const auto& task = synthetic_task();
  const std::vector<EncodedRecord> train_part(task.train.begin(), task.train.begin() + 400);
  const std::vector<EncodedRecord> test_part(task.test.begin(), task.test.begin() + 200);
  auto run = [&] {
    DiaformerModel model(tiny_model(task.vocab, 5));
    auto config = tiny_training(2, 5);
    config.holdout_fraction = 0.1;
    const auto [tr, ho] = split_holdout(train_part, config.holdout_fraction, config.seed);
    std::vector<double> losses;
    std::vector<std::string> epoch_metrics;
    train(model, task.vocab, tr, ho, config, [&](const EpochMetrics& m) {
      losses.push_back(m.loss);
      epoch_metrics.push_back(m.to_json());
    });
    return std::make_tuple(losses, epoch_metrics, evaluate(test_part, model, task.vocab, synthetic_inference(), 4).to_json());
  };
  const auto a = run(), b = run();
  const bool ok = a == b;
  return verdict(ok, fmt("loss traces %s, evaluation metrics %s (%s)",
                         std::get<0>(a) == std::get<0>(b) ? "identical" : "differ",
                         std::get<2>(a) == std::get<2>(b) ? "identical" : "differ", std::get<2>(a).c_str()));
}

// ---------------------------------------------------------------------------

struct Criterion {
  const char* id;
  Outcome (*run)();
};

const std::vector<Criterion>& criteria() {
  static const std::vector<Criterion> all = {
      {"gradient_correctness", gradient_correctness},
      {"concurrent_softmax_oracle", concurrent_softmax_oracle},
      {"mask_no_leakage", mask_no_leakage},
      {"mask_oracle", mask_oracle},
      {"synthetic_end_to_end", synthetic_end_to_end},
      {"orderless_ablation", orderless_ablation},
      {"public_datasets", public_datasets},
      {"determinism", determinism},
  };
  return all;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app("Diaformer acceptance suite");
  std::vector<std::string> only;
  bool list = false;
  std::vector<std::string> ids;
  for (const auto& c : criteria()) ids.push_back(c.id);
  app.add_option("--only", only, "Run only these criteria")->check(CLI::IsMember(ids));
  app.add_flag("--list", list, "List criteria and exit");
  CLI11_PARSE(app, argc, argv);

  if (list) {
    for (const auto& id : ids) std::printf("%s\n", id.c_str());
    return 0;
  }

  int failed = 0, skipped = 0, ran = 0;
  for (const auto& c : criteria()) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    ++ran;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {Verdict::Fail, std::string("error: ") + e.what()};
    }
    const char* tag = o.verdict == Verdict::Pass ? "PASS" : o.verdict == Verdict::Fail ? "FAIL" : "SKIP";
    failed += o.verdict == Verdict::Fail;
    skipped += o.verdict == Verdict::Skip;
    std::printf("%s %s: %s [%.1fs]\n", tag, c.id, o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  if (failed) return 1;
  return ran == 1 && skipped == 1 ? 77 : 0;
}
