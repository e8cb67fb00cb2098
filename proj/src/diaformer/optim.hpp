// Copyright 2026 The Diaformer Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "diaformer/tensor.hpp"

namespace diaformer {

/// A trainable tensor with its Adam moment buffers.
struct Parameter {
  std::string name;
  Tensor tensor;
  std::vector<real> adam_m;
  std::vector<real> adam_v;
  std::int64_t step_count = 0;

  Parameter() = default;
  Parameter(std::string name, Tensor value);
};

struct AdamOptions {
  real lr = static_cast<real>(5e-5);
  real beta1 = static_cast<real>(0.9);
  real beta2 = static_cast<real>(0.999);
  real eps = static_cast<real>(1e-8);
};

/// One bias-corrected Adam update per parameter; gradients are cleared after.
/// Parameters without an accumulated gradient see a zero gradient.
void adam_step(std::span<Parameter> params, const AdamOptions& options);

/// Rescales all gradients so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
real clip_grad_norm(std::span<Parameter> params, real max_norm);

void zero_grad(std::span<Parameter> params);

struct GradCheckResult {
  double max_rel_err = 0;
  double max_abs_err = 0;
  std::size_t checked = 0;
  std::string worst;  // "<tensor index>[<flat index>]"
};

struct GradCheckOptions {
  /// Central-difference step; 0 picks one suited to the build precision.
  double step = 0;
  /// Relative error is |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
  /// Five-point central stencil (error O(h^4)) instead of the three-point one.
  bool fourth_order = false;
  /// Check at most this many entries per tensor (evenly strided); 0 = all.
  std::size_t max_entries_per_tensor = 0;
};

/// Compares reverse-mode gradients of the scalar `f` against central finite
/// differences for every entry of `inputs`. `f` must be deterministic.
GradCheckResult grad_check(const std::function<Tensor()>& f,
                           std::vector<Tensor> inputs,
                           const GradCheckOptions& options = {});

}  // namespace diaformer
