// SPDX-License-Identifier: Apache-2.0
//
// Diagnostics: latent unit activity, per-unit KL, Parzen-window log-density
// of generated samples, and importance-weighted log-likelihood.
//
// For epitomic models the selector y* of an example is chosen at the
// posterior mean (eps = 0) in activity and importance-weighted evaluation, so
// those numbers are deterministic functions of the parameters.

#pragma once

#include <vector>

#include "evae/data.hpp"
#include "evae/model.hpp"
#include "evae/rng.hpp"

namespace evae {

constexpr double kActivityThreshold = 0.02;

struct ActivityReport {
  Vector activity;      // A_u, length D
  Vector per_unit_kl;   // dataset mean KL per unit, length D
  double threshold = kActivityThreshold;
  int active_count = 0;
};

// A_u = population variance over the dataset of the posterior mean of unit u.
// Epitomic models use m_{y*(x)} (.) mu(x); masked units contribute 0 KL.
ActivityReport unit_activity(const Model& model, const Matrix& X);

struct Correlation {
  double r = 0.0;
  bool defined = false;  // false when either vector is constant or D < 2
};

Correlation pearson(const Vector& a, const Vector& b);
Correlation activity_kl_correlation(const ActivityReport& report);

struct ParzenResult {
  double sigma = 0.0;
  double mean_log_density = 0.0;  // nats
  double std_error = 0.0;
  Eigen::Index n_samples = 0;
  Vector per_point;  // log p(t) per test point
};

constexpr int kParzenSamples = 10000;

// 20 values log-spaced over [0.05, 1.0].
std::vector<double> default_sigma_grid();

// log p(t) = logsumexp_i(-|t - s_i|^2 / (2 sigma^2)) - log n - (N/2) log(2 pi sigma^2),
// reported as mean and standard error over the test points.
ParzenResult parzen_log_density(const Matrix& samples, const Matrix& test, double sigma);

// Grid value maximizing the validation mean log-density; ties go to the
// smaller sigma. Throws ConfigError on an empty grid or empty inputs.
double parzen_sigma_select(const Matrix& samples, const Matrix& validation, const std::vector<double>& grid);

struct IwllResult {
  int k = 0;
  double mean_estimate = 0.0;  // mean L_k, nats per example (log-likelihood, <= 0 for discrete data)
  double std_error = 0.0;
  Vector per_example;
};

// L_k = logsumexp_i[log p(x, z_i) - log q(z_i | x)] - log k, z_i ~ q(. | x),
// drawn per example as a k x latent block. Epitomic models add -log M for the
// point-mass selector.
IwllResult iw_log_likelihood(const Model& model, const Matrix& X, int k, Rng& rng);

struct ElboResult {
  double mean_bound = 0.0;  // mean of -total (higher is better)
  double std_error = 0.0;
  double mean_recon = 0.0;
  double mean_kl_z = 0.0;
  double kl_y = 0.0;
  Vector per_example;  // per-example bound averaged over n_mc draws
};

// Monte-Carlo mean of the single-sample bound (eval mode; y* re-selected per
// draw for epitomic models). Rows are processed in chunks in order, so the
// noise stream matches one model_loss call over the whole dataset.
ElboResult elbo_eval(const Model& model, const Matrix& X, int n_mc, Rng& rng);

}  // namespace evae
