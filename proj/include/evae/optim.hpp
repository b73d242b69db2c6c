// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace evae {

// Flat views of parameter (or gradient) storage, one span per tensor.
using ParamSpans = std::vector<std::span<double>>;

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t t = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  AdamState() = default;
  explicit AdamState(const ParamSpans& params);
};

struct AdamStepResult {
  bool applied = true;
  std::string diagnostic;  // set when the step was rejected
};

// Bias-corrected Adam (Kingma & Ba). A gradient containing NaN/Inf rejects the
// whole step: parameters and state are left untouched and the reason returned.
AdamStepResult adam_step(const ParamSpans& params, const ParamSpans& grads, AdamState& state, double lr);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coordinates = 0;
  bool passed = false;
};

// Central differences (f(p+h) - f(p-h)) / 2h per coordinate, compared against
// `analytic` with rel = |a - n| / max(|a|, |n|, denom_floor). The parameters
// are perturbed in place and restored bit-exactly.
GradCheckReport grad_check(const std::function<double()>& loss, const ParamSpans& params,
                           const ParamSpans& analytic, double h, double tolerance, double denom_floor = 1e-8);

}  // namespace evae
