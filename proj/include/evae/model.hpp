// SPDX-License-Identifier: Apache-2.0
//
// The model family: VAE (with KL weight), dropout VAE, epitomic VAE and the
// mixture-of-VAEs ablation, all sharing one encoder/decoder building block.
//
// Random draws inside a loss evaluation happen in a fixed order: first the
// B x D reparameterization noise (row-major), then, for dropout_vae in
// training mode, B x D keep/drop uniforms.

#pragma once

#include <span>
#include <string>
#include <vector>

#include "evae/config.hpp"
#include "evae/layers.hpp"
#include "evae/optim.hpp"
#include "evae/rng.hpp"
#include "evae/tensor.hpp"

namespace evae {

// M binary masks over the D latent units; mask y is ones on [y*s, y*s + K).
struct EpitomeMaskSet {
  int D = 0;
  int K = 0;
  int s = 0;
  Matrix masks;  // M x D, entries 0.0 / 1.0

  int count() const { return static_cast<int>(masks.rows()); }
  int start(int y) const { return y * s; }
  bool contains(int y, int d) const { return d >= start(y) && d < start(y) + K; }
};

// Throws ConfigError unless 1 <= s <= K <= D and (D - K) % s == 0.
EpitomeMaskSet build_epitome_masks(int D, int K, int s);

// One encoder/decoder pair with a `latent`-wide stochastic layer.
struct Network {
  Mlp encoder;             // x -> hidden, ReLU output
  DenseLayer head_mu;      // hidden -> latent
  DenseLayer head_logvar;  // hidden -> latent
  Mlp decoder;             // latent -> hidden, ReLU output
  DenseLayer out_mu;       // hidden -> N (logits for bernoulli)
  DenseLayer out_logvar;   // hidden -> N, gaussian only (empty otherwise)

  Eigen::Index latent() const { return head_mu.out_dim(); }
  Eigen::Index param_count() const;
};

struct Model {
  ModelConfig config;  // always resolved
  EpitomeMaskSet masks;
  std::vector<Network> nets;  // one entry, or M for mvae

  static Model init(const ModelConfig& cfg, Rng& rng);
  static Model zeros(const ModelConfig& cfg);
  Model zeros_like() const;

  int num_epitomes() const { return masks.count(); }

  ParamSpans params();
  // Stable names in the same order as params(), e.g. "net0.encoder.0.W".
  std::vector<std::string> param_names() const;
  Eigen::Index param_count() const;
};

// Parameter count of one Network of hidden width `hidden`:
//   encoder  N*H + H + (L-1)(H*H + H) + 2(H*latent + latent)
//   decoder  latent*H + H + (L-1)(H*H + H) + c(H*N + N),  c = 2 for gaussian, else 1
Eigen::Index network_param_count(int obs_dim, int latent, int depth, int hidden, DecoderFamily family);

// Largest per-component width H' with M * count(H', latent=K) <= count(H, latent=D).
// Throws ConfigError when even H' = 1 exceeds the budget.
int mvae_hidden_size(int hidden, int depth, int obs_dim, int latent_dim, int epitome_size, int num_components,
                     DecoderFamily family = DecoderFamily::bernoulli);

// ---- elementwise densities --------------------------------------------------

// 0.5 (mu^2 + exp(logvar) - 1 - logvar), entrywise.
Matrix gaussian_kl_per_dim(const Matrix& mu, const Matrix& logvar);
// mu + exp(logvar / 2) * eps.
Matrix reparameterize(const Matrix& mu, const Matrix& logvar, const Matrix& eps);
// Per-row -sum[x log sigmoid(l) + (1 - x) log(1 - sigmoid(l))] = sum[softplus(l) - x l].
Vector bernoulli_nll(const Matrix& x, const Matrix& logits);
// Per-row 0.5 sum[(x - mu)^2 exp(-lv) + lv + log 2pi].
Vector gaussian_nll(const Matrix& x, const Matrix& mu, const Matrix& logvar);
Matrix sigmoid(const Matrix& x);
// B x D inverted-dropout multipliers: 0 with probability `rate`, else 1/(1-rate).
// One uniform per entry, row-major.
Matrix dropout_multiplier(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng);
// Inverted dropout on z: entries dropped with probability `rate`, survivors scaled by 1/(1-rate).
Matrix dropout_latent(const Matrix& z, double rate, Rng& rng);

// ---- encoder / decoder --------------------------------------------------------

struct Posterior {
  Matrix mu;
  Matrix logvar;  // clamped to +-logvar_clamp
};

// For mvae, `component` selects which component's encoder (K-wide output).
Posterior encode(const Model& model, const Matrix& x, int component = 0);

struct DecoderOutput {
  Matrix mean;    // logits (bernoulli) or mu_x (gaussian)
  Matrix logvar;  // gaussian only, clamped
};

// z is B x D and must already be masked for evae. For mvae, rows are routed to
// component y, which reads the K coordinates of mask(y). Throws IndexError for
// y outside [0, M).
DecoderOutput decode(const Model& model, const Matrix& z, int y);

// Decoder mean in data space: sigmoid(logits) or mu_x.
Matrix decoder_mean(const Model& model, const DecoderOutput& out);

// ---- losses -------------------------------------------------------------------

struct LossBreakdown {
  double recon = 0.0;
  Vector kl_z_per_dim;  // length D, zero outside mask(y_star) for evae/mvae
  double kl_y = 0.0;    // ln M for evae/mvae, else 0
  double kl_weight = 1.0;
  double total = 0.0;   // recon + kl_weight * sum(kl_z_per_dim) + kl_y
  int y_star = 0;
};

struct BatchLoss {
  Vector recon;   // B
  Matrix kl_z;    // B x D
  Vector total;   // B
  double kl_y = 0.0;
  double kl_weight = 1.0;
  std::vector<int> y;

  Eigen::Index size() const { return recon.size(); }
  LossBreakdown breakdown(Eigen::Index i) const;
  double mean_total() const { return total.mean(); }
};

struct LossOptions {
  double kl_weight = 1.0;
  bool training = false;  // enables latent dropout for dropout_vae
};

// Loss of a batch with epitome assignments `y` (one per row in [0, M), or
// empty for all zeros) and noise `eps` (B x D). `keep` is the dropout
// multiplier (B x D, entries 0 or 1/(1-rate)) or nullptr. When `grad` is not
// null, gradients of grad_scale * sum_i total_i are accumulated into it.
BatchLoss batch_loss(const Model& model, const Matrix& x, std::span<const int> y, const Matrix& eps,
                     const Matrix* keep, const LossOptions& opts, Model* grad = nullptr, double grad_scale = 1.0);

// Single-sample VAE bound (vae and dropout_vae); draws eps (and dropout) from rng.
BatchLoss vae_loss(const Model& model, const Matrix& x, Rng& rng, double kl_weight, bool training = false);

// Per-epitome cost with shared noise eps (B x D).
BatchLoss evae_per_epitome_cost(const Model& model, const Matrix& x, int y, const Matrix& eps);

// B x M matrix of candidate totals, common noise across candidates.
Matrix epitome_costs(const Model& model, const Matrix& x, const Matrix& eps);

// Row-wise argmin of epitome_costs; ties go to the lowest index.
std::vector<int> evae_select_y(const Model& model, const Matrix& x, const Matrix& eps);

// Draws eps, selects y* per example and returns the selected breakdown.
BatchLoss evae_loss(const Model& model, const Matrix& x, Rng& rng, Model* grad = nullptr, double grad_scale = 1.0);

// Variant dispatch for evaluation (eval mode, configured kl_weight).
BatchLoss model_loss(const Model& model, const Matrix& x, Rng& rng);

struct Samples {
  Matrix mean;  // n x N decoder means
  std::vector<int> y;
};

// y ~ U{0..M-1} then z ~ N(0, I_D), per sample in that order.
Samples sample_generate(const Model& model, Rng& rng, int n);

}  // namespace evae
