// Copyright 2026 The Diaformer Authors
// SPDX-License-Identifier: Apache-2.0

#include "diaformer/diaformer.h"

#include <cstdlib>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>

#include "diaformer/data.hpp"
#include "diaformer/inference.hpp"
#include "diaformer/model.hpp"
#include "diaformer/training.hpp"
#include "json.hpp"

using json = nlohmann::ordered_json;
namespace df = diaformer;

struct df_model {
  std::unique_ptr<df::DiaformerModel> model;
  df::SymptomVocab vocab;
};

struct df_dialogue {
  const df_model* owner;
  df::Dialogue dialogue;
};

namespace {

thread_local std::string g_last_error;

df_status fail(df_status status, const std::string& message) {
  g_last_error = message;
  return status;
}

class StatusError : public std::runtime_error {
 public:
  StatusError(df_status status, const std::string& message)
      : std::runtime_error(message), status(status) {}
  df_status status;
};

template <class F>
df_status guarded(F&& body) {
  try {
    body();
    return DF_OK;
  } catch (const StatusError& e) {
    return fail(e.status, e.what());
  } catch (const df::ConfigError& e) {
    return fail(DF_ERR_INVALID_ARGUMENT, e.what());
  } catch (const df::DatasetError& e) {
    return fail(DF_ERR_PARSE, e.what());
  } catch (const df::CheckpointError& e) {
    return fail(DF_ERR_IO, e.what());
  } catch (const df::TrainingError& e) {
    return fail(DF_ERR_NUMERIC, e.what());
  } catch (const json::exception& e) {
    return fail(DF_ERR_PARSE, e.what());
  } catch (const std::invalid_argument& e) {
    return fail(DF_ERR_INVALID_ARGUMENT, e.what());
  } catch (const std::out_of_range& e) {
    return fail(DF_ERR_INVALID_ARGUMENT, e.what());
  } catch (const std::logic_error& e) {
    return fail(DF_ERR_STATE, e.what());
  } catch (const std::bad_alloc&) {
    return fail(DF_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(DF_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(DF_ERR_INTERNAL, "unknown error");
  }
}

void require(bool ok, const char* what) {
  if (!ok) throw StatusError(DF_ERR_INVALID_ARGUMENT, what);
}

char* copy_string(const std::string& s) {
  auto* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

json parse_object(const char* text, const char* what) {
  if (!text || !*text) return json::object();
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw StatusError(DF_ERR_PARSE, std::string(what) + ": " + e.what());
  }
  if (!j.is_object()) throw StatusError(DF_ERR_PARSE, std::string(what) + " must be a JSON object");
  return j;
}

struct EvalOptions {
  df::InferenceConfig config;
  std::size_t threads = 1;
};

EvalOptions inference_options(const char* text) {
  const json j = parse_object(text, "inference config");
  EvalOptions o;
  for (const auto& [key, _] : j.items()) {
    if (key != "rho_e" && key != "rho_p" && key != "max_turns" && key != "threads") {
      throw StatusError(DF_ERR_INVALID_ARGUMENT, "unknown inference option \"" + key + "\"");
    }
  }
  try {
    o.config.rho_e = j.value("rho_e", o.config.rho_e);
    o.config.rho_p = j.value("rho_p", o.config.rho_p);
    o.config.max_turns = j.value("max_turns", o.config.max_turns);
    o.threads = j.value("threads", o.threads);
  } catch (const json::exception& e) {
    throw StatusError(DF_ERR_INVALID_ARGUMENT, std::string("inference config: ") + e.what());
  }
  o.config.validate();
  return o;
}

std::vector<df::DiagnosisRecord> read_dataset(const char* path) {
  require(path != nullptr, "dataset path is required");
  if (!std::ifstream(path)) throw StatusError(DF_ERR_IO, std::string("cannot open ") + path);
  return df::load_dataset(path);
}

json history_json(const df::DialogueState& st, const df::SymptomVocab& vocab) {
  json history = json::array();
  for (const auto& step : st.history) {
    history.push_back({{"symptom", vocab.symptom_name(step.symptom)},
                       {"answer", df::to_string(step.answer)}});
  }
  return history;
}

json diagnosis_json(const df::Diagnosis& d, const df::SymptomVocab& vocab) {
  json dist = json::object();
  for (std::size_t i = 0; i < d.distribution.size(); ++i) {
    dist[vocab.disease_name(static_cast<int>(i))] = d.distribution[i];
  }
  return {{"disease", vocab.disease_name(d.disease)},
          {"probability", d.probability},
          {"distribution", dist}};
}

json state_json(const df::DialogueState& st, std::optional<int> pending,
                const df::SymptomVocab& vocab) {
  json j;
  j["status"] = pending ? "awaiting_answer" : "diagnosed";
  j["pending_question"] = pending ? json(vocab.symptom_name(*pending)) : json(nullptr);
  j["turns"] = st.turns;
  json known = json::array();
  for (std::size_t i = 0; i < st.known.size(); ++i) {
    known.push_back({{"symptom", vocab.symptom_name(st.known[i].id)},
                     {"present", st.known[i].present},
                     {"source", i < st.explicit_count ? "explicit" : "inquiry"}});
  }
  j["known"] = known;
  j["history"] = history_json(st, vocab);
  j["stop_reason"] = st.stop_reason ? json(df::to_string(*st.stop_reason)) : json(nullptr);
  j["diagnosis"] = st.diagnosis ? diagnosis_json(*st.diagnosis, vocab) : json(nullptr);
  return j;
}

}  // namespace

extern "C" {

const char* df_version(void) { return "1.0.0"; }

const char* df_last_error(void) { return g_last_error.c_str(); }

const char* df_status_name(df_status status) {
  switch (status) {
    case DF_OK: return "ok";
    case DF_ERR_INVALID_ARGUMENT: return "invalid_argument";
    case DF_ERR_IO: return "io";
    case DF_ERR_PARSE: return "parse";
    case DF_ERR_STATE: return "state";
    case DF_ERR_NUMERIC: return "numeric";
    case DF_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

void df_string_free(char* s) { std::free(s); }

df_status df_generate_data(const char* spec_path, uint64_t seed, uint64_t num_records,
                           const char* out_path) {
  return guarded([&] {
    require(out_path != nullptr, "output path is required");
    df::GeneratorSpec spec = df::default_generator_spec();
    if (spec_path) {
      std::ifstream in(spec_path);
      if (!in) throw StatusError(DF_ERR_IO, std::string("cannot open ") + spec_path);
      const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      spec = df::GeneratorSpec::from_json(text);
    }
    if (num_records) spec.num_records = num_records;
    df::save_dataset(df::generate_synthetic(spec, seed), out_path);
  });
}

df_status df_default_generator_spec(char** spec_json) {
  return guarded([&] {
    require(spec_json != nullptr, "output pointer is required");
    *spec_json = copy_string(df::default_generator_spec().to_json());
  });
}

df_status df_train(const char* dataset_path, const char* config_json,
                   const char* checkpoint_path, const char* metrics_log_path) {
  return guarded([&] {
    require(checkpoint_path != nullptr, "checkpoint path is required");
    json j = parse_object(config_json, "training config");
    json model_j = json::object();
    if (j.contains("model")) {
      model_j = j["model"];
      require(model_j.is_object(), "\"model\" must be an object");
      j.erase("model");
    }
    const df::TrainConfig config = df::train_config_from_json(j.dump());
    for (const auto& [key, _] : model_j.items()) {
      if (key == "num_symptoms" || key == "num_diseases") {
        throw StatusError(DF_ERR_INVALID_ARGUMENT, "model." + key + " comes from the dataset");
      }
    }

    const auto raw = read_dataset(dataset_path);
    require(!raw.empty(), "training dataset is empty");
    const df::SymptomVocab vocab = df::build_vocab(raw);
    const auto records = df::encode_records(raw, vocab);

    df::ModelConfig mc = df::config_from_json(model_j.dump());
    mc.num_symptoms = vocab.num_symptoms();
    mc.num_diseases = vocab.num_diseases();
    df::DiaformerModel model(mc);

    std::ofstream log;
    if (metrics_log_path) {
      log.open(metrics_log_path);
      if (!log) throw StatusError(DF_ERR_IO, std::string("cannot write ") + metrics_log_path);
    }
    auto [train_set, holdout] = df::split_holdout(records, config.holdout_fraction, config.seed);
    if (train_set.empty()) throw StatusError(DF_ERR_INVALID_ARGUMENT, "holdout leaves no training records");
    df::train(model, vocab, train_set, holdout, config, [&](const df::EpochMetrics& m) {
      if (log.is_open()) log << m.to_json() << '\n' << std::flush;
    });
    df::save_checkpoint(checkpoint_path, model, vocab);
  });
}

df_status df_model_load(const char* checkpoint_path, df_model** out) {
  return guarded([&] {
    require(checkpoint_path != nullptr && out != nullptr, "checkpoint path and output are required");
    *out = nullptr;
    auto ckpt = df::load_checkpoint(checkpoint_path);
    *out = new df_model{std::move(ckpt.model), std::move(ckpt.vocab)};
  });
}

void df_model_free(df_model* model) { delete model; }

df_status df_model_vocab_json(const df_model* model, char** out_json) {
  return guarded([&] {
    require(model != nullptr && out_json != nullptr, "model and output are required");
    *out_json = copy_string(model->vocab.to_json());
  });
}

df_status df_model_config_json(const df_model* model, char** out_json) {
  return guarded([&] {
    require(model != nullptr && out_json != nullptr, "model and output are required");
    *out_json = copy_string(df::config_to_json(model->model->config()));
  });
}

df_status df_evaluate(const df_model* model, const char* dataset_path, const char* inference_json,
                      const char* transcripts_path, char** metrics_json) {
  return guarded([&] {
    require(model != nullptr && metrics_json != nullptr, "model and output are required");
    const EvalOptions opts = inference_options(inference_json);
    const auto records = df::encode_records(read_dataset(dataset_path), model->vocab);
    require(!records.empty(), "evaluation dataset is empty");

    std::vector<df::DialogueState> states(records.size());
    const auto metrics = df::evaluate_agent(
        records,
        [&](const df::EncodedRecord& r) {
          auto st = df::run_dialogue(*model->model, model->vocab, opts.config, r);
          states[static_cast<std::size_t>(&r - records.data())] = st;
          return st;
        },
        opts.threads);

    if (transcripts_path) {
      std::ofstream out(transcripts_path);
      if (!out) throw StatusError(DF_ERR_IO, std::string("cannot write ") + transcripts_path);
      for (std::size_t i = 0; i < records.size(); ++i) {
        json line = state_json(states[i], std::nullopt, model->vocab);
        line.erase("status");
        line.erase("pending_question");
        json full{{"record", i}};
        full.update(line);
        out << full.dump() << '\n';
      }
    }
    *metrics_json = copy_string(metrics.to_json());
  });
}

df_status df_baseline(const char* train_path, const char* test_path, double* dacc) {
  return guarded([&] {
    require(dacc != nullptr, "output is required");
    const auto train_raw = read_dataset(train_path);
    const auto test_raw = read_dataset(test_path);
    require(!train_raw.empty() && !test_raw.empty(), "datasets must not be empty");
    const auto vocab = df::build_vocab(train_raw);
    *dacc = df::explicit_only_baseline(df::encode_records(train_raw, vocab),
                                       df::encode_records(test_raw, vocab), vocab);
  });
}

df_status df_gradcheck(const char* options_json, char** report_json) {
  return guarded([&] {
    require(report_json != nullptr, "output is required");
    const json j = parse_object(options_json, "gradcheck options");
    df::GradientSuiteOptions o;
    o.layers = j.value("layers", o.layers);
    o.hidden = j.value("hidden", o.hidden);
    o.heads = j.value("heads", o.heads);
    o.explicit_count = j.value("explicit", o.explicit_count);
    o.implicit_count = j.value("implicit", o.implicit_count);
    o.repeats = j.value("repeats", o.repeats);
    o.seed = j.value("seed", o.seed);
    o.max_entries_per_tensor = j.value("max_entries_per_tensor", o.max_entries_per_tensor);
    const auto r = df::check_model_gradients(o);
    json out{{"max_rel_err", r.max_rel_err},
             {"max_abs_err", r.max_abs_err},
             {"checked", r.checked},
             {"worst", r.worst}};
    *report_json = copy_string(out.dump());
  });
}

df_status df_dialogue_create(const df_model* model, const char* explicit_json,
                             const char* inference_json, df_dialogue** out) {
  return guarded([&] {
    require(model != nullptr && out != nullptr, "model and output are required");
    *out = nullptr;
    const EvalOptions opts = inference_options(inference_json);
    const json j = parse_object(explicit_json, "explicit symptoms");
    std::vector<df::EncodedSymptom> explicit_symptoms;
    for (const auto& [name, value] : j.items()) {
      if (!value.is_boolean()) {
        throw StatusError(DF_ERR_INVALID_ARGUMENT, "symptom \"" + name + "\" must map to a boolean");
      }
      const auto id = model->vocab.symptom_id(name);
      if (!id) throw StatusError(DF_ERR_INVALID_ARGUMENT, "unknown symptom \"" + name + "\"");
      explicit_symptoms.push_back({*id, value.get<bool>()});
    }
    *out = new df_dialogue{model, df::Dialogue(*model->model, model->vocab, opts.config,
                                               std::move(explicit_symptoms))};
  });
}

void df_dialogue_free(df_dialogue* dialogue) { delete dialogue; }

df_status df_dialogue_answer(df_dialogue* dialogue, const char* answer) {
  return guarded([&] {
    require(dialogue != nullptr && answer != nullptr, "dialogue and answer are required");
    df::SimulatorAnswer a;
    if (std::strcmp(answer, "true") == 0) {
      a = df::SimulatorAnswer::True;
    } else if (std::strcmp(answer, "false") == 0) {
      a = df::SimulatorAnswer::False;
    } else if (std::strcmp(answer, "not_sure") == 0) {
      a = df::SimulatorAnswer::NotSure;
    } else {
      throw StatusError(DF_ERR_INVALID_ARGUMENT,
                        std::string("answer must be true, false or not_sure, got \"") + answer + "\"");
    }
    if (dialogue->dialogue.finished()) throw StatusError(DF_ERR_STATE, "dialogue is already diagnosed");
    dialogue->dialogue.answer(a);
  });
}

int df_dialogue_awaiting(const df_dialogue* dialogue) {
  return dialogue && dialogue->dialogue.pending_question() ? 1 : 0;
}

df_status df_dialogue_snapshot(const df_dialogue* dialogue, char** out_json) {
  return guarded([&] {
    require(dialogue != nullptr && out_json != nullptr, "dialogue and output are required");
    const auto& d = dialogue->dialogue;
    *out_json = copy_string(state_json(d.state(), d.pending_question(), dialogue->owner->vocab).dump());
  });
}

}  // extern "C"
