// Copyright 2026 The Diaformer Authors
// SPDX-License-Identifier: Apache-2.0

// A small dataset and trained checkpoint built through the C API.

#pragma once

#include <stdexcept>
#include <string>

#include "diaformer/diaformer.h"
#include "support.hpp"

namespace testing {

inline void expect_ok(df_status status) {
  if (status != DF_OK) throw std::runtime_error(std::string(df_status_name(status)) + ": " + df_last_error());
}

inline std::string take(char* s) {
  std::string out(s ? s : "");
  df_string_free(s);
  return out;
}

class TrainedModel {
 public:
  TrainedModel() {
    data_ = (dir_ / "data.json").string();
    checkpoint_ = (dir_ / "model.ckpt").string();
    expect_ok(df_generate_data(nullptr, 77, 240, data_.c_str()));
    expect_ok(df_train(data_.c_str(),
                       R"({"epochs": 2, "lr": 0.002, "holdout_fraction": 0, "seed": 3,
                           "model": {"layers": 1, "hidden": 16, "heads": 2, "seed": 3}})",
                       checkpoint_.c_str(), nullptr));
    expect_ok(df_model_load(checkpoint_.c_str(), &model_));
  }
  ~TrainedModel() { df_model_free(model_); }
  TrainedModel(const TrainedModel&) = delete;
  TrainedModel& operator=(const TrainedModel&) = delete;

  const df_model* model() const { return model_; }
  const std::string& data_path() const { return data_; }
  const std::string& checkpoint_path() const { return checkpoint_; }
  const TempDir& dir() const { return dir_; }

 private:
  TempDir dir_;
  std::string data_, checkpoint_;
  df_model* model_ = nullptr;
};

}  // namespace testing
