// Copyright 2026 The Diaformer Authors
// SPDX-License-Identifier: Apache-2.0

#include "diaformer/training.hpp"

#include <cmath>
#include <sstream>

#include "diaformer/ops.hpp"
#include "json.hpp"

namespace diaformer {

using json = nlohmann::ordered_json;

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be finite and >= 0");
  if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) {
    throw ConfigError("holdout_fraction must be in [0, 1)");
  }
  eval.validate();
}

TrainConfig TrainConfig::ordered() const {
  TrainConfig c = *this;
  c.shuffle_each_step = false;
  c.sync_learning = false;
  c.repeats = 0;
  return c;
}

std::string train_config_to_json(const TrainConfig& c) {
  json j;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["lr"] = c.lr;
  j["repeats"] = c.repeats;
  j["shuffle_each_step"] = c.shuffle_each_step;
  j["sync_learning"] = c.sync_learning;
  j["seed"] = c.seed;
  j["clip_norm"] = c.clip_norm;
  j["holdout_fraction"] = c.holdout_fraction;
  j["patience"] = c.patience;
  j["rho_e"] = c.eval.rho_e;
  j["rho_p"] = c.eval.rho_p;
  j["max_turns"] = c.eval.max_turns;
  j["eval_threads"] = c.eval_threads;
  return j.dump();
}

TrainConfig train_config_from_json(const std::string& json_text) {
  TrainConfig c;
  try {
    const auto j = json::parse(json_text);
    if (!j.is_object()) throw ConfigError("training config must be a JSON object");
    static const char* kKnown[] = {"epochs", "batch_size", "lr", "repeats", "shuffle_each_step",
                                   "sync_learning", "seed", "clip_norm", "holdout_fraction",
                                   "patience", "rho_e", "rho_p", "max_turns", "eval_threads",
                                   "model"};
    for (const auto& [key, _] : j.items()) {
      if (std::find(std::begin(kKnown), std::end(kKnown), key) == std::end(kKnown)) {
        throw ConfigError("unknown training config key \"" + key + "\"");
      }
    }
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.repeats = j.value("repeats", c.repeats);
    c.shuffle_each_step = j.value("shuffle_each_step", c.shuffle_each_step);
    c.sync_learning = j.value("sync_learning", c.sync_learning);
    c.seed = j.value("seed", c.seed);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.holdout_fraction = j.value("holdout_fraction", c.holdout_fraction);
    c.patience = j.value("patience", c.patience);
    c.eval.rho_e = j.value("rho_e", c.eval.rho_e);
    c.eval.rho_p = j.value("rho_p", c.eval.rho_p);
    c.eval.max_turns = j.value("max_turns", c.eval.max_turns);
    c.eval_threads = j.value("eval_threads", c.eval_threads);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad training config JSON: ") + e.what());
  }
  c.validate();
  return c;
}

std::string EpochMetrics::to_json() const {
  json j;
  j["epoch"] = epoch;
  j["steps"] = steps;
  j["loss"] = loss;
  j["l_dis"] = l_dis;
  j["l_sym"] = l_sym;
  if (eval) {
    j["dacc"] = eval->dacc;
    j["srec"] = eval->srec;
    j["aturn"] = eval->aturn;
  }
  return j.dump();
}

TrainingSequence make_training_sequence(const EncodedRecord& record, const SymptomVocab& vocab,
                                        const TrainConfig& config, Rng& rng) {
  const std::size_t n = record.implicit_symptoms.size();
  const Permutation order =
      config.shuffle_each_step ? shuffle_sequence(n, rng) : identity_order(n);
  const auto repeats = build_repeated_sequences(n, config.repeats, rng);
  SequenceOptions options;
  options.sync_learning = config.sync_learning;
  return build_input(record, order, repeats, vocab, options);
}

EpochMetrics train_epoch(std::span<const EncodedRecord> records, DiaformerModel& model,
                         const SymptomVocab& vocab, const TrainConfig& config, Rng& rng) {
  config.validate();
  if (records.empty()) throw TrainingError("train_epoch: no training records");
  const Permutation visit = shuffle_sequence(records.size(), rng);
  auto& params = model.parameters();
  AdamOptions adam;
  adam.lr = static_cast<real>(config.lr);

  EpochMetrics metrics;
  double loss_sum = 0, dis_sum = 0, sym_sum = 0;
  for (std::size_t start = 0; start < visit.size(); start += config.batch_size) {
    const std::size_t end = std::min(visit.size(), start + config.batch_size);
    const real inv_batch = real{1} / static_cast<real>(end - start);
    Tensor batch_loss;
    double step_loss = 0;
    for (std::size_t b = start; b < end; ++b) {
      const auto& record = records[visit[b]];
      if (record.disease < 0) throw TrainingError("training record without a known disease");
      const auto seq = make_training_sequence(record, vocab, config, rng);
      const auto out = model.forward(seq, &rng);
      const auto parts = model.loss(out, seq);
      const Tensor weighted = ops::scale(parts.total, inv_batch);
      batch_loss = batch_loss.defined() ? ops::add(batch_loss, weighted) : weighted;
      step_loss += parts.total.item();
      dis_sum += parts.disease.item();
      sym_sum += parts.symptom.item();
    }
    if (!std::isfinite(step_loss)) {
      std::ostringstream msg;
      msg << "non-finite loss at step " << metrics.steps << " (records";
      for (std::size_t b = start; b < end; ++b) msg << ' ' << visit[b];
      msg << ')';
      throw TrainingError(msg.str());
    }
    loss_sum += step_loss;
    batch_loss.backward();
    if (config.clip_norm > 0) clip_grad_norm(params, static_cast<real>(config.clip_norm));
    adam_step(params, adam);
    ++metrics.steps;
  }
  const auto n = static_cast<double>(records.size());
  metrics.loss = loss_sum / n;
  metrics.l_dis = dis_sum / n;
  metrics.l_sym = sym_sum / n;
  return metrics;
}

std::pair<std::vector<EncodedRecord>, std::vector<EncodedRecord>> split_holdout(
    std::span<const EncodedRecord> records, double fraction, std::uint64_t seed) {
  Rng rng(seed);
  const Permutation order = shuffle_sequence(records.size(), rng);
  const auto n_holdout = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(records.size())));
  std::pair<std::vector<EncodedRecord>, std::vector<EncodedRecord>> out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_holdout ? out.second : out.first).push_back(records[order[i]]);
  }
  return out;
}

TrainResult train(DiaformerModel& model, const SymptomVocab& vocab,
                  std::span<const EncodedRecord> train_records,
                  std::span<const EncodedRecord> holdout, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  config.validate();
  Rng rng(config.seed);
  TrainResult result;
  std::optional<DiaformerModel> best;
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    EpochMetrics m = train_epoch(train_records, model, vocab, config, rng);
    m.epoch = epoch;
    if (!holdout.empty()) {
      m.eval = evaluate(holdout, model, vocab, config.eval, config.eval_threads);
      if (!best || m.eval->dacc > result.best_dacc) {
        result.best_dacc = m.eval->dacc;
        result.best_epoch = epoch;
        best = model.clone();
        since_best = 0;
      } else {
        ++since_best;
      }
    }
    result.history.push_back(m);
    if (on_epoch) on_epoch(m);
    if (!holdout.empty() && config.patience > 0 && since_best >= config.patience) break;
  }
  if (best) model.copy_values_from(*best);
  return result;
}

GradCheckResult check_model_gradients(const GradientSuiteOptions& o) {
  const std::size_t num_symptoms = o.explicit_count + o.implicit_count + 3;
  std::vector<std::string> symptoms, diseases;
  for (std::size_t i = 0; i < num_symptoms; ++i) symptoms.push_back("s" + std::to_string(100 + i));
  for (std::size_t i = 0; i < 3; ++i) diseases.push_back("d" + std::to_string(i));
  const SymptomVocab vocab(symptoms, diseases);

  Rng rng(o.seed);
  const Permutation ids = shuffle_sequence(num_symptoms, rng);
  EncodedRecord record;
  for (std::size_t i = 0; i < o.explicit_count + o.implicit_count; ++i) {
    const EncodedSymptom s{static_cast<int>(ids[i]), bernoulli(rng, 0.6)};
    (i < o.explicit_count ? record.explicit_symptoms : record.implicit_symptoms).push_back(s);
  }
  record.disease = static_cast<int>(uniform_index(rng, diseases.size()));

  const std::size_t n = o.implicit_count;
  const auto seq = build_input(record, shuffle_sequence(n, rng),
                               build_repeated_sequences(n, o.repeats, rng), vocab, {});

  ModelConfig config;
  config.layers = o.layers;
  config.hidden = o.hidden;
  config.heads = o.heads;
  config.dropout = 0;
  config.num_symptoms = vocab.num_symptoms();
  config.num_diseases = vocab.num_diseases();
  config.seed = o.seed;
  DiaformerModel model(config);

  std::vector<Tensor> inputs;
  for (const auto& p : model.parameters()) inputs.push_back(p.tensor);
  GradCheckOptions gc;
  gc.max_entries_per_tensor = o.max_entries_per_tensor;
  gc.fourth_order = true;
  return grad_check([&] { return model.loss(model.forward(seq), seq).total; }, inputs, gc);
}

}  // namespace diaformer
