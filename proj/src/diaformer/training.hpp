// Copyright 2026 The Diaformer Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "diaformer/inference.hpp"
#include "diaformer/model.hpp"

namespace diaformer {

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 16;
  double lr = 5e-5;
  std::size_t repeats = 4;
  bool shuffle_each_step = true;
  bool sync_learning = true;
  std::uint64_t seed = 1;
  double clip_norm = 1.0;  // <= 0 disables clipping
  /// Fraction of the training records held out for early stopping on DAcc.
  double holdout_fraction = 0.1;
  std::size_t patience = 10;
  InferenceConfig eval;
  std::size_t eval_threads = 1;

  void validate() const;

  /// Disables sequence shuffle, synchronous learning and repeated segments.
  TrainConfig ordered() const;
};

std::string train_config_to_json(const TrainConfig& config);
/// Missing keys keep their defaults.
TrainConfig train_config_from_json(const std::string& json_text);

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  std::size_t steps = 0;
  double loss = 0;
  double l_dis = 0;
  double l_sym = 0;
  std::optional<EvalMetrics> eval;

  /// One JSON line: epoch, loss, l_dis, l_sym and eval dacc/srec/aturn.
  std::string to_json() const;
};

/// Training sequence for one record under the configured orderless settings.
TrainingSequence make_training_sequence(const EncodedRecord& record, const SymptomVocab& vocab,
                                        const TrainConfig& config, Rng& rng);

/// One pass over `records` in mini-batches with fresh shuffles and repeated
/// segments at every step. Throws TrainingError on a non-finite loss.
EpochMetrics train_epoch(std::span<const EncodedRecord> records, DiaformerModel& model,
                         const SymptomVocab& vocab, const TrainConfig& config, Rng& rng);

struct TrainResult {
  std::vector<EpochMetrics> history;
  std::size_t best_epoch = 0;  // 0 when no held-out evaluation ran
  double best_dacc = 0;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Full training run. With a non-empty `holdout` the model is evaluated after
/// every epoch, training stops after `patience` epochs without a DAcc
/// improvement, and the best parameters are restored at the end.
TrainResult train(DiaformerModel& model, const SymptomVocab& vocab,
                  std::span<const EncodedRecord> train_records,
                  std::span<const EncodedRecord> holdout, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

/// Deterministic split of `records` into (train, holdout).
std::pair<std::vector<EncodedRecord>, std::vector<EncodedRecord>> split_holdout(
    std::span<const EncodedRecord> records, double fraction, std::uint64_t seed);

/// Finite-difference check of every parameter gradient of the full loss on
/// one random record. Dropout is off.
struct GradientSuiteOptions {
  std::size_t layers = 2;
  std::size_t hidden = 32;
  std::size_t heads = 2;
  std::size_t explicit_count = 2;
  std::size_t implicit_count = 3;
  std::size_t repeats = 2;
  std::uint64_t seed = 7;
  /// Entries checked per tensor; 0 checks all of them.
  std::size_t max_entries_per_tensor = 0;
};

GradCheckResult check_model_gradients(const GradientSuiteOptions& options = {});

}  // namespace diaformer
