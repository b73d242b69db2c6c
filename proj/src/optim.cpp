// SPDX-License-Identifier: Apache-2.0

#include "evae/optim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "evae/errors.hpp"

namespace evae {

AdamState::AdamState(const ParamSpans& params) {
  for (const auto& p : params) {
    m.emplace_back(p.size(), 0.0);
    v.emplace_back(p.size(), 0.0);
  }
}

AdamStepResult adam_step(const ParamSpans& params, const ParamSpans& grads, AdamState& state, double lr) {
  if (!(lr > 0.0)) throw ConfigError("adam_step: learning rate must be > 0");
  if (params.size() != grads.size()) throw DimensionError("adam_step: parameter/gradient count mismatch");
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.size(), 0.0);
      state.v.emplace_back(p.size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw DimensionError("adam_step: state does not match parameters");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k].size() != grads[k].size() || state.m[k].size() != params[k].size()) {
      throw DimensionError("adam_step: tensor " + std::to_string(k) + " size mismatch");
    }
    for (std::size_t i = 0; i < grads[k].size(); ++i) {
      if (!std::isfinite(grads[k][i])) {
        return {false, "non-finite gradient in tensor " + std::to_string(k) + " at index " + std::to_string(i)};
      }
    }
  }

  state.t += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& m = state.m[k];
    auto& v = state.v[k];
    const auto g = grads[k];
    auto p = params[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
  return {};
}

GradCheckReport grad_check(const std::function<double()>& loss, const ParamSpans& params,
                           const ParamSpans& analytic, double h, double tolerance, double denom_floor) {
  if (params.size() != analytic.size()) throw DimensionError("grad_check: parameter/gradient count mismatch");
  GradCheckReport rep;
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k].size() != analytic[k].size()) throw DimensionError("grad_check: tensor size mismatch");
    for (std::size_t i = 0; i < params[k].size(); ++i) {
      double& p = params[k][i];
      const double saved = p;
      p = saved + h;
      const double up = loss();
      p = saved - h;
      const double down = loss();
      p = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), denom_floor});
      const double rel = std::abs(a - numeric) / denom;
      ++rep.coordinates;
      if (rel > rep.max_rel_error || !std::isfinite(rel)) {
        rep.max_rel_error = std::isfinite(rel) ? rel : std::numeric_limits<double>::infinity();
        rep.worst_tensor = k;
        rep.worst_index = i;
        rep.analytic = a;
        rep.numeric = numeric;
      }
    }
  }
  rep.passed = rep.max_rel_error < tolerance;
  return rep;
}

}  // namespace evae
