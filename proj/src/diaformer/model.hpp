// Copyright 2026 The Diaformer Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "diaformer/data.hpp"
#include "diaformer/optim.hpp"
#include "diaformer/random.hpp"
#include "diaformer/sequence.hpp"
#include "diaformer/tensor.hpp"

namespace diaformer {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ModelConfig {
  std::size_t layers = 5;
  std::size_t hidden = 512;
  // 512 is not divisible by 6 heads; 8 keeps the head width at 64.
  std::size_t heads = 8;
  std::size_t ffn_multiplier = 4;
  double dropout = 0.1;
  double init_std = 0.02;
  std::size_t num_symptoms = 0;
  std::size_t num_diseases = 0;
  std::uint64_t seed = 1;

  std::size_t inquiry_classes() const { return num_symptoms + 1; }
  std::size_t token_count() const { return num_symptoms + 2; }
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct ForwardOutput {
  Tensor s_logits;  // [num S positions, C_inq]; undefined when there are none
  Tensor d_logits;  // [C_dis]; undefined without a [D] position
};

struct LossParts {
  Tensor total;
  Tensor symptom;  // mean concurrent-softmax loss over [S] tokens
  Tensor disease;  // cross entropy at [D]
};

/// Transformer over symptom tokens with a symptom-inquiry head at [S]
/// positions and a disease head at [D]. Pre-LN blocks, GELU feed-forward,
/// summed token/state/type embeddings and no position embedding.
class DiaformerModel {
 public:
  explicit DiaformerModel(ModelConfig config);
  DiaformerModel(const DiaformerModel&) = delete;
  DiaformerModel& operator=(const DiaformerModel&) = delete;
  DiaformerModel(DiaformerModel&&) = default;
  DiaformerModel& operator=(DiaformerModel&&) = default;

  const ModelConfig& config() const { return config_; }

  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  Parameter& parameter(std::string_view name);
  const Parameter& parameter(std::string_view name) const;

  /// Runs the network on one sequence. Dropout is applied only when
  /// `dropout_rng` is given and the configured rate is positive.
  ForwardOutput forward(const TrainingSequence& seq, Rng* dropout_rng = nullptr) const;

  /// L_dis + L_sym for a training sequence.
  LossParts loss(const ForwardOutput& out, const TrainingSequence& seq) const;

  /// Deep copy of parameter values (moment buffers included).
  DiaformerModel clone() const;

  /// Copies parameter values from a model with the same configuration.
  void copy_values_from(const DiaformerModel& other);

 private:
  struct Block {
    std::size_t ln1_gain, ln1_bias, wq, bq, wk, bk, wv, bv, wo, bo;
    std::size_t ln2_gain, ln2_bias, w1, b1, w2, b2;
  };

  enum class Init { Normal, Zeros, Ones };
  std::size_t add_param(std::string name, Shape shape, Init init, Rng& rng);
  const Tensor& p(std::size_t index) const { return params_[index].tensor; }

  ModelConfig config_;
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> by_name_;
  std::size_t tok_emb_ = 0, state_emb_ = 0, type_emb_ = 0;
  std::vector<Block> blocks_;
  std::size_t lnf_gain_ = 0, lnf_bias_ = 0, w_sym_ = 0, b_sym_ = 0, w_dis_ = 0, b_dis_ = 0;
};

/// Additive mask (0 visible, kMaskedScore hidden) from a visibility matrix.
Tensor additive_mask(const TrainingSequence& seq);

struct Checkpoint {
  std::unique_ptr<DiaformerModel> model;
  SymptomVocab vocab;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Binary checkpoint: magic, version, JSON header (config, vocabulary,
/// tensor names and shapes), then raw parameter values in host byte order.
void save_checkpoint(const std::filesystem::path& path, const DiaformerModel& model,
                     const SymptomVocab& vocab);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const std::string& json_text);

}  // namespace diaformer
