/* Copyright 2026 The Diaformer Authors
 * SPDX-License-Identifier: Apache-2.0
 *
 * C interface to the Diaformer symptom-inquiry model.
 *
 * All functions return a df_status. On failure a message is available from
 * df_last_error() on the calling thread until the next failing call. Strings
 * returned through char** out-parameters are owned by the caller and must be
 * released with df_string_free().
 */
#ifndef DIAFORMER_DIAFORMER_H_
#define DIAFORMER_DIAFORMER_H_

#include <stdint.h>

#if defined(_WIN32)
#  if defined(DIAFORMER_BUILDING_LIBRARY)
#    define DF_API __declspec(dllexport)
#  else
#    define DF_API __declspec(dllimport)
#  endif
#elif defined(DIAFORMER_BUILDING_LIBRARY)
#  define DF_API __attribute__((visibility("default")))
#else
#  define DF_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum df_status {
  DF_OK = 0,
  DF_ERR_INVALID_ARGUMENT = 1, /* bad flag, config value, symptom name, answer */
  DF_ERR_IO = 2,               /* file missing or unwritable, bad checkpoint */
  DF_ERR_PARSE = 3,            /* malformed dataset or JSON document */
  DF_ERR_STATE = 4,            /* operation not allowed in the current state */
  DF_ERR_NUMERIC = 5,          /* non-finite loss during training */
  DF_ERR_INTERNAL = 6
} df_status;

typedef struct df_model df_model;
typedef struct df_dialogue df_dialogue;

DF_API const char* df_version(void);
DF_API const char* df_last_error(void);
DF_API const char* df_status_name(df_status status);
DF_API void df_string_free(char* s);

/* Writes a synthetic dataset. spec_path may be NULL for the built-in
 * generator spec; num_records == 0 keeps the spec's record count. */
DF_API df_status df_generate_data(const char* spec_path, uint64_t seed, uint64_t num_records,
                                  const char* out_path);

/* Writes the built-in generator spec as JSON. */
DF_API df_status df_default_generator_spec(char** spec_json);

/* Trains on a dataset and writes a checkpoint. config_json holds training
 * keys (epochs, batch_size, lr, repeats, shuffle_each_step, sync_learning,
 * seed, clip_norm, holdout_fraction, patience, rho_e, rho_p, max_turns,
 * eval_threads) and an optional "model" object (layers, hidden, heads,
 * ffn_multiplier, dropout, init_std, seed). May be NULL for defaults.
 * metrics_log_path, if not NULL, receives one JSON line per epoch. */
DF_API df_status df_train(const char* dataset_path, const char* config_json,
                          const char* checkpoint_path, const char* metrics_log_path);

DF_API df_status df_model_load(const char* checkpoint_path, df_model** out);
DF_API void df_model_free(df_model* model);

/* {"symptoms": [...], "diseases": [...]} */
DF_API df_status df_model_vocab_json(const df_model* model, char** out_json);
DF_API df_status df_model_config_json(const df_model* model, char** out_json);

/* Simulator evaluation. inference_json may hold rho_e, rho_p, max_turns and
 * threads; NULL uses defaults. transcripts_path, if not NULL, receives one
 * JSON line per record with the inquiry history and diagnosis. */
DF_API df_status df_evaluate(const df_model* model, const char* dataset_path,
                             const char* inference_json, const char* transcripts_path,
                             char** metrics_json);

/* Explicit-only baseline accuracy: linear classifier trained on train_path,
 * scored on test_path. */
DF_API df_status df_baseline(const char* train_path, const char* test_path, double* dacc);

/* Finite-difference check of the full training loss on a small random model.
 * options_json may set layers, hidden, heads, explicit, implicit, repeats
 * and seed. The report holds max_rel_err, max_abs_err, checked and worst. */
DF_API df_status df_gradcheck(const char* options_json, char** report_json);

/* Starts a dialogue. explicit_json is an object of symptom name -> bool.
 * The model must outlive the dialogue. */
DF_API df_status df_dialogue_create(const df_model* model, const char* explicit_json,
                                    const char* inference_json, df_dialogue** out);
DF_API void df_dialogue_free(df_dialogue* dialogue);

/* answer is "true", "false" or "not_sure". DF_ERR_STATE when the dialogue
 * has already produced a diagnosis. */
DF_API df_status df_dialogue_answer(df_dialogue* dialogue, const char* answer);

/* 1 while a question is pending, 0 once diagnosed. */
DF_API int df_dialogue_awaiting(const df_dialogue* dialogue);

/* Snapshot: status, pending_question, turns, known, history, stop_reason and
 * diagnosis (disease, probability, distribution). */
DF_API df_status df_dialogue_snapshot(const df_dialogue* dialogue, char** out_json);

#ifdef __cplusplus
}
#endif

#endif /* DIAFORMER_DIAFORMER_H_ */
