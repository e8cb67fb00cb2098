// Copyright 2026 The Diaformer Authors
// SPDX-License-Identifier: Apache-2.0

#include "diaformer/optim.hpp"

#include <algorithm>
#include <cmath>

namespace diaformer {

Parameter::Parameter(std::string n, Tensor value)
    : name(std::move(n)),
      tensor(std::move(value)),
      adam_m(tensor.size(), real{0}),
      adam_v(tensor.size(), real{0}) {
  tensor.node()->requires_grad = true;
}

void adam_step(std::span<Parameter> params, const AdamOptions& o) {
  for (auto& p : params) {
    ++p.step_count;
    const auto t = static_cast<real>(p.step_count);
    const real bias1 = real{1} - std::pow(o.beta1, t);
    const real bias2 = real{1} - std::pow(o.beta2, t);
    auto values = p.tensor.mutable_data();
    const bool has_grad = p.tensor.has_grad();
    const std::vector<real>& grad = p.tensor.node()->grad;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const real g = has_grad ? grad[i] : real{0};
      p.adam_m[i] = o.beta1 * p.adam_m[i] + (real{1} - o.beta1) * g;
      p.adam_v[i] = o.beta2 * p.adam_v[i] + (real{1} - o.beta2) * g * g;
      const real m_hat = p.adam_m[i] / bias1;
      const real v_hat = p.adam_v[i] / bias2;
      values[i] -= o.lr * m_hat / (std::sqrt(v_hat) + o.eps);
    }
    p.tensor.zero_grad();
  }
}

real clip_grad_norm(std::span<Parameter> params, real max_norm) {
  real sq = 0;
  for (const auto& p : params) {
    for (real g : p.tensor.node()->grad) sq += g * g;
  }
  const real norm = std::sqrt(sq);
  if (norm > max_norm && norm > real{0}) {
    const real factor = max_norm / norm;
    for (auto& p : params) {
      for (real& g : p.tensor.node()->grad) g *= factor;
    }
  }
  return norm;
}

void zero_grad(std::span<Parameter> params) {
  for (auto& p : params) p.tensor.zero_grad();
}

GradCheckResult grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                           const GradCheckOptions& options) {
  const bool wide = options.fourth_order;
  const double h = options.step > 0                      ? options.step
                   : sizeof(real) != sizeof(double)      ? 1e-2
                   : wide                                ? 1e-3
                                                         : 1e-5;
  for (auto& t : inputs) {
    t.node()->requires_grad = true;
    t.zero_grad();
  }
  f().backward();
  std::vector<std::vector<real>> analytic;
  analytic.reserve(inputs.size());
  for (auto& t : inputs) {
    analytic.push_back(t.grad());
    t.zero_grad();
  }

  GradCheckResult result;
  NoGradGuard no_grad;
  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    auto values = inputs[ti].mutable_data();
    std::size_t stride = 1;
    if (options.max_entries_per_tensor > 0 && values.size() > options.max_entries_per_tensor) {
      stride = (values.size() + options.max_entries_per_tensor - 1) /
               options.max_entries_per_tensor;
    }
    for (std::size_t i = 0; i < values.size(); i += stride) {
      const real original = values[i];
      auto at = [&](double offset) {
        values[i] = static_cast<real>(original + offset);
        return static_cast<double>(f().item());
      };
      double numeric;
      if (wide) {
        numeric = (8 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12 * h);
      } else {
        numeric = (at(h) - at(-h)) / (2 * h);
      }
      values[i] = original;
      const double a = static_cast<double>(analytic[ti][i]);
      const double abs_err = std::abs(a - numeric);
      const double rel_err =
          abs_err / std::max({std::abs(a), std::abs(numeric), options.floor});
      result.max_abs_err = std::max(result.max_abs_err, abs_err);
      if (rel_err > result.max_rel_err) {
        result.max_rel_err = rel_err;
        result.worst = std::to_string(ti) + "[" + std::to_string(i) + "]";
      }
      ++result.checked;
    }
  }
  return result;
}

}  // namespace diaformer
