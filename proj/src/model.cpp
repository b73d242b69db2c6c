// SPDX-License-Identifier: Apache-2.0

#include "evae/model.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "evae/errors.hpp"

namespace evae {

EpitomeMaskSet build_epitome_masks(int D, int K, int s) {
  if (D < 1 || K < 1 || K > D || s < 1 || s > K) {
    throw ConfigError("epitome shape (D=" + std::to_string(D) + ", K=" + std::to_string(K) + ", s=" +
                      std::to_string(s) + ") violates 1 <= s <= K <= D");
  }
  if ((D - K) % s != 0) {
    throw ConfigError("epitomes do not tile the latent space: (D - K) = " + std::to_string(D - K) +
                      " is not divisible by stride " + std::to_string(s));
  }
  EpitomeMaskSet set;
  set.D = D;
  set.K = K;
  set.s = s;
  const int M = (D - K) / s + 1;
  set.masks = Matrix::Zero(M, D);
  for (int y = 0; y < M; ++y) set.masks.row(y).segment(y * s, K).setOnes();
  return set;
}

Eigen::Index Network::param_count() const {
  return encoder.param_count() + head_mu.param_count() + head_logvar.param_count() + decoder.param_count() +
         out_mu.param_count() + out_logvar.param_count();
}

Eigen::Index network_param_count(int obs_dim, int latent, int depth, int hidden, DecoderFamily family) {
  const Eigen::Index N = obs_dim, Z = latent, L = depth, H = hidden;
  const Eigen::Index inner = (L - 1) * (H * H + H);
  const Eigen::Index enc = N * H + H + inner + 2 * (H * Z + Z);
  const Eigen::Index heads = family == DecoderFamily::gaussian ? 2 : 1;
  const Eigen::Index dec = Z * H + H + inner + heads * (H * N + N);
  return enc + dec;
}

int mvae_hidden_size(int hidden, int depth, int obs_dim, int latent_dim, int epitome_size, int num_components,
                     DecoderFamily family) {
  if (hidden < 1 || depth < 1 || obs_dim < 1 || latent_dim < 1 || epitome_size < 1 || num_components < 1) {
    throw ConfigError("mvae_hidden_size: all arguments must be >= 1");
  }
  const Eigen::Index budget = network_param_count(obs_dim, latent_dim, depth, hidden, family);
  auto fits = [&](int h) {
    return num_components * network_param_count(obs_dim, epitome_size, depth, h, family) <= budget;
  };
  if (!fits(1)) {
    throw ConfigError("mvae_hidden_size: " + std::to_string(num_components) +
                      " components do not fit the parameter budget even at width 1");
  }
  // Parameter count is strictly increasing in width: exponential then binary search.
  int lo = 1, hi = 2;
  while (fits(hi)) {
    lo = hi;
    hi *= 2;
  }
  while (hi - lo > 1) {
    const int mid = lo + (hi - lo) / 2;
    (fits(mid) ? lo : hi) = mid;
  }
  return lo;
}

namespace {

Network make_network(const ModelConfig& c, int latent, int hidden, Rng* rng) {
  std::vector<Eigen::Index> enc_w{c.obs_dim};
  std::vector<Eigen::Index> dec_w{latent};
  for (int i = 0; i < c.depth; ++i) {
    enc_w.push_back(hidden);
    dec_w.push_back(hidden);
  }
  Network n;
  const bool gaussian = c.decoder == DecoderFamily::gaussian;
  if (rng) {
    n.encoder = Mlp::glorot(*rng, enc_w, true);
    n.head_mu = glorot_init(*rng, hidden, latent);
    n.head_logvar = glorot_init(*rng, hidden, latent);
    n.decoder = Mlp::glorot(*rng, dec_w, true);
    n.out_mu = glorot_init(*rng, hidden, c.obs_dim);
    if (gaussian) n.out_logvar = glorot_init(*rng, hidden, c.obs_dim);
  } else {
    n.encoder = Mlp::zeros(enc_w, true);
    n.head_mu = DenseLayer(hidden, latent);
    n.head_logvar = DenseLayer(hidden, latent);
    n.decoder = Mlp::zeros(dec_w, true);
    n.out_mu = DenseLayer(hidden, c.obs_dim);
    if (gaussian) n.out_logvar = DenseLayer(hidden, c.obs_dim);
  }
  return n;
}

Model make_model(const ModelConfig& cfg, Rng* rng) {
  Model m;
  m.config = cfg.resolved();
  const auto& c = m.config;
  m.masks = build_epitome_masks(c.latent_dim, c.epitome_size, c.epitome_stride);
  if (c.variant == Variant::mvae) {
    for (int j = 0; j < m.masks.count(); ++j) m.nets.push_back(make_network(c, c.epitome_size, c.mvae_hidden, rng));
  } else {
    m.nets.push_back(make_network(c, c.latent_dim, c.hidden, rng));
  }
  return m;
}

void push(ParamSpans& out, Matrix& m) {
  if (m.size() > 0) out.emplace_back(m.data(), static_cast<std::size_t>(m.size()));
}
void push(ParamSpans& out, RowVector& v) {
  if (v.size() > 0) out.emplace_back(v.data(), static_cast<std::size_t>(v.size()));
}
void push(ParamSpans& out, DenseLayer& l) {
  push(out, l.W);
  push(out, l.b);
}

void names(std::vector<std::string>& out, const std::string& prefix, const DenseLayer& l) {
  if (l.W.size() > 0) out.push_back(prefix + ".W");
  if (l.b.size() > 0) out.push_back(prefix + ".b");
}

// ---- shared forward/backward building blocks ----------------------------------

Matrix clamp(const Matrix& m, double c) { return m.cwiseMax(-c).cwiseMin(c); }

// 1 where the unclamped value lies strictly inside (-c, c), else 0.
Matrix inside(const Matrix& raw, double c) {
  return ((raw.array() > -c) && (raw.array() < c)).cast<double>().matrix();
}

Matrix softplus(const Matrix& l) {
  return l.cwiseMax(0.0).array() + (-l.array().abs()).exp().log1p();
}

struct EncPass {
  MlpTape tape;
  Matrix h, mu, lvraw, lv, sd, z, kl;
};

EncPass encode_pass(const Network& net, const ModelConfig& c, const Matrix& x, const Matrix& eps, bool keep_tape) {
  EncPass p;
  p.h = mlp_forward(net.encoder, x, keep_tape ? &p.tape : nullptr);
  p.mu = dense_forward(net.head_mu, p.h);
  p.lvraw = dense_forward(net.head_logvar, p.h);
  p.lv = clamp(p.lvraw, c.logvar_clamp);
  p.sd = (0.5 * p.lv.array()).exp().matrix();
  require_shape(eps, x.rows(), p.mu.cols(), "reparameterization noise");
  p.z = p.mu + p.sd.cwiseProduct(eps);
  p.kl = gaussian_kl_per_dim(p.mu, p.lv);
  return p;
}

struct DecPass {
  MlpTape tape;
  Matrix zin, g, out, lvxraw, lvx;
  Vector recon;
  Matrix kl;  // masked
};

DecPass decode_pass(const Network& net, const ModelConfig& c, const EncPass& e, const Matrix& x, const Matrix* mask,
                    const Matrix* keep, bool keep_tape) {
  DecPass d;
  d.zin = e.z;
  d.kl = e.kl;
  if (mask) {
    d.zin.array() *= mask->array();
    d.kl.array() *= mask->array();
  }
  if (keep) d.zin.array() *= keep->array();
  d.g = mlp_forward(net.decoder, d.zin, keep_tape ? &d.tape : nullptr);
  d.out = dense_forward(net.out_mu, d.g);
  if (c.decoder == DecoderFamily::bernoulli) {
    d.recon = bernoulli_nll(x, d.out);
  } else {
    d.lvxraw = dense_forward(net.out_logvar, d.g);
    d.lvx = clamp(d.lvxraw, c.logvar_clamp);
    d.recon = gaussian_nll(x, d.out, d.lvx);
  }
  return d;
}

void backward_pass(const Network& net, const ModelConfig& c, const EncPass& e, const DecPass& d, const Matrix& x,
                   const Matrix& eps, const Matrix* mask, const Matrix* keep, double kl_weight, Network& grad,
                   double scale) {
  Matrix dg;
  if (c.decoder == DecoderFamily::bernoulli) {
    const Matrix dout = scale * (sigmoid(d.out) - x);
    dg = dense_backward(net.out_mu, d.g, dout, grad.out_mu);
  } else {
    const Matrix diff = x - d.out;
    const Matrix inv = (-d.lvx.array()).exp().matrix();
    const Matrix dmu_x = -scale * diff.cwiseProduct(inv);
    Matrix dlvx = (scale * 0.5) * (1.0 - diff.array().square() * inv.array()).matrix();
    dlvx.array() *= inside(d.lvxraw, c.logvar_clamp).array();
    dg = dense_backward(net.out_mu, d.g, dmu_x, grad.out_mu);
    dg += dense_backward(net.out_logvar, d.g, dlvx, grad.out_logvar);
  }
  Matrix dz = mlp_backward(net.decoder, d.tape, dg, grad.decoder);
  if (keep) dz.array() *= keep->array();
  if (mask) dz.array() *= mask->array();

  const double w = scale * kl_weight;
  Matrix dmu_kl = w * e.mu;
  Matrix dlv_kl = (w * 0.5) * (e.lv.array().exp() - 1.0).matrix();
  if (mask) {
    dmu_kl.array() *= mask->array();
    dlv_kl.array() *= mask->array();
  }
  const Matrix dmu = dz + dmu_kl;
  Matrix dlv = (0.5 * dz.array() * eps.array() * e.sd.array()).matrix() + dlv_kl;
  dlv.array() *= inside(e.lvraw, c.logvar_clamp).array();

  Matrix dh = dense_backward(net.head_mu, e.h, dmu, grad.head_mu);
  dh += dense_backward(net.head_logvar, e.h, dlv, grad.head_logvar);
  mlp_backward(net.encoder, e.tape, dh, grad.encoder, false);
}

Matrix mask_rows(const EpitomeMaskSet& masks, std::span<const int> y) {
  Matrix m(static_cast<Eigen::Index>(y.size()), masks.D);
  for (std::size_t i = 0; i < y.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = masks.masks.row(y[i]);
  return m;
}

Matrix masks_row_broadcast(const EpitomeMaskSet& masks, int y, Eigen::Index rows) {
  return masks.masks.row(y).replicate(rows, 1);
}

void check_y(const Model& model, int y) {
  if (y < 0 || y >= model.num_epitomes()) {
    throw IndexError("epitome index " + std::to_string(y) + " outside [0, " + std::to_string(model.num_epitomes()) +
                     ")");
  }
}

Matrix gather_rows(const Matrix& m, const std::vector<Eigen::Index>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

double kl_y_for(const Model& model) {
  return model.config.has_epitomes() ? std::log(static_cast<double>(model.num_epitomes())) : 0.0;
}

}  // namespace

Model Model::init(const ModelConfig& cfg, Rng& rng) { return make_model(cfg, &rng); }
Model Model::zeros(const ModelConfig& cfg) { return make_model(cfg, nullptr); }
Model Model::zeros_like() const { return make_model(config, nullptr); }

ParamSpans Model::params() {
  ParamSpans out;
  for (auto& n : nets) {
    for (auto& l : n.encoder.layers) push(out, l);
    push(out, n.head_mu);
    push(out, n.head_logvar);
    for (auto& l : n.decoder.layers) push(out, l);
    push(out, n.out_mu);
    push(out, n.out_logvar);
  }
  return out;
}

std::vector<std::string> Model::param_names() const {
  std::vector<std::string> out;
  for (std::size_t k = 0; k < nets.size(); ++k) {
    const auto& n = nets[k];
    const std::string p = "net" + std::to_string(k);
    for (std::size_t i = 0; i < n.encoder.layers.size(); ++i) names(out, p + ".encoder." + std::to_string(i), n.encoder.layers[i]);
    names(out, p + ".head_mu", n.head_mu);
    names(out, p + ".head_logvar", n.head_logvar);
    for (std::size_t i = 0; i < n.decoder.layers.size(); ++i) names(out, p + ".decoder." + std::to_string(i), n.decoder.layers[i]);
    names(out, p + ".out_mu", n.out_mu);
    names(out, p + ".out_logvar", n.out_logvar);
  }
  return out;
}

Eigen::Index Model::param_count() const {
  Eigen::Index n = 0;
  for (const auto& net : nets) n += net.param_count();
  return n;
}

// ---- densities ------------------------------------------------------------------

Matrix gaussian_kl_per_dim(const Matrix& mu, const Matrix& logvar) {
  require_shape(logvar, mu.rows(), mu.cols(), "gaussian_kl_per_dim logvar");
  return (0.5 * (mu.array().square() + logvar.array().exp() - 1.0 - logvar.array())).matrix();
}

Matrix reparameterize(const Matrix& mu, const Matrix& logvar, const Matrix& eps) {
  require_shape(logvar, mu.rows(), mu.cols(), "reparameterize logvar");
  require_shape(eps, mu.rows(), mu.cols(), "reparameterize eps");
  return mu + (0.5 * logvar.array()).exp().matrix().cwiseProduct(eps);
}

Matrix sigmoid(const Matrix& x) {
  // Split by sign so neither branch overflows.
  return x.unaryExpr([](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
}

Vector bernoulli_nll(const Matrix& x, const Matrix& logits) {
  require_shape(logits, x.rows(), x.cols(), "bernoulli_nll logits");
  return (softplus(logits) - x.cwiseProduct(logits)).rowwise().sum();
}

Vector gaussian_nll(const Matrix& x, const Matrix& mu, const Matrix& logvar) {
  require_shape(mu, x.rows(), x.cols(), "gaussian_nll mu");
  require_shape(logvar, x.rows(), x.cols(), "gaussian_nll logvar");
  const double log2pi = std::log(2.0 * std::numbers::pi);
  const auto sq = (x - mu).array().square();
  return (0.5 * (sq * (-logvar.array()).exp() + logvar.array() + log2pi)).matrix().rowwise().sum();
}

Matrix dropout_multiplier(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must be in [0, 1)");
  Matrix keep(rows, cols);
  const double scale = 1.0 / (1.0 - rate);
  double* p = keep.data();
  for (Eigen::Index i = 0; i < keep.size(); ++i) p[i] = rng.uniform() < rate ? 0.0 : scale;
  return keep;
}

Matrix dropout_latent(const Matrix& z, double rate, Rng& rng) {
  if (rate == 0.0) return z;
  return z.cwiseProduct(dropout_multiplier(z.rows(), z.cols(), rate, rng));
}

// ---- encoder / decoder ----------------------------------------------------------

Posterior encode(const Model& model, const Matrix& x, int component) {
  require_shape(x, -1, model.config.obs_dim, "encode input");
  if (component < 0 || component >= static_cast<int>(model.nets.size())) {
    throw IndexError("encode: component " + std::to_string(component) + " out of range");
  }
  const Network& net = model.nets[static_cast<std::size_t>(component)];
  const Matrix h = mlp_forward(net.encoder, x);
  return {dense_forward(net.head_mu, h), clamp(dense_forward(net.head_logvar, h), model.config.logvar_clamp)};
}

DecoderOutput decode(const Model& model, const Matrix& z, int y) {
  check_y(model, y);
  require_shape(z, -1, model.config.latent_dim, "decode input");
  const bool mixture = model.config.variant == Variant::mvae;
  const Network& net = model.nets[mixture ? static_cast<std::size_t>(y) : 0];
  const Matrix zin = mixture ? Matrix(z.middleCols(model.masks.start(y), model.masks.K)) : z;
  const Matrix g = mlp_forward(net.decoder, zin);
  DecoderOutput out;
  out.mean = dense_forward(net.out_mu, g);
  if (model.config.decoder == DecoderFamily::gaussian) {
    out.logvar = clamp(dense_forward(net.out_logvar, g), model.config.logvar_clamp);
  }
  return out;
}

Matrix decoder_mean(const Model& model, const DecoderOutput& out) {
  return model.config.decoder == DecoderFamily::bernoulli ? sigmoid(out.mean) : out.mean;
}

// ---- losses ---------------------------------------------------------------------

LossBreakdown BatchLoss::breakdown(Eigen::Index i) const {
  LossBreakdown b;
  b.recon = recon(i);
  b.kl_z_per_dim = kl_z.row(i).transpose();
  b.kl_y = kl_y;
  b.kl_weight = kl_weight;
  b.total = total(i);
  b.y_star = y.empty() ? 0 : y[static_cast<std::size_t>(i)];
  return b;
}

BatchLoss batch_loss(const Model& model, const Matrix& x, std::span<const int> y, const Matrix& eps,
                     const Matrix* keep, const LossOptions& opts, Model* grad, double grad_scale) {
  const auto& c = model.config;
  const Eigen::Index B = x.rows();
  require_shape(x, -1, c.obs_dim, "loss input");
  require_shape(eps, B, c.latent_dim, "reparameterization noise");
  if (keep) require_shape(*keep, B, c.latent_dim, "dropout multiplier");
  if (!y.empty() && static_cast<Eigen::Index>(y.size()) != B) {
    throw DimensionError("loss: " + std::to_string(y.size()) + " epitome indices for " + std::to_string(B) + " rows");
  }
  std::vector<int> ys(y.begin(), y.end());
  if (ys.empty()) ys.assign(static_cast<std::size_t>(B), 0);
  for (int v : ys) check_y(model, v);

  BatchLoss out;
  out.kl_y = kl_y_for(model);
  out.kl_weight = opts.kl_weight;
  out.y = ys;
  out.recon = Vector::Zero(B);
  out.kl_z = Matrix::Zero(B, c.latent_dim);

  if (c.variant == Variant::mvae) {
    const int K = model.masks.K;
    for (int j = 0; j < model.num_epitomes(); ++j) {
      std::vector<Eigen::Index> rows;
      for (Eigen::Index i = 0; i < B; ++i) {
        if (ys[static_cast<std::size_t>(i)] == j) rows.push_back(i);
      }
      if (rows.empty()) continue;
      const Network& net = model.nets[static_cast<std::size_t>(j)];
      const Matrix xj = gather_rows(x, rows);
      const Matrix ej = gather_rows(eps, rows).middleCols(model.masks.start(j), K);
      const EncPass e = encode_pass(net, c, xj, ej, grad != nullptr);
      const DecPass d = decode_pass(net, c, e, xj, nullptr, nullptr, grad != nullptr);
      if (grad) backward_pass(net, c, e, d, xj, ej, nullptr, nullptr, opts.kl_weight, grad->nets[static_cast<std::size_t>(j)], grad_scale);
      for (std::size_t r = 0; r < rows.size(); ++r) {
        out.recon(rows[r]) = d.recon(static_cast<Eigen::Index>(r));
        out.kl_z.row(rows[r]).segment(model.masks.start(j), K) = d.kl.row(static_cast<Eigen::Index>(r));
      }
    }
  } else {
    const Network& net = model.nets.front();
    Matrix mask;
    const bool masked = c.variant == Variant::evae && model.num_epitomes() > 1;
    if (masked) mask = mask_rows(model.masks, ys);
    const Matrix* use_keep = (c.variant == Variant::dropout_vae && opts.training) ? keep : nullptr;
    const EncPass e = encode_pass(net, c, x, eps, grad != nullptr);
    const DecPass d = decode_pass(net, c, e, x, masked ? &mask : nullptr, use_keep, grad != nullptr);
    if (grad) {
      backward_pass(net, c, e, d, x, eps, masked ? &mask : nullptr, use_keep, opts.kl_weight, grad->nets.front(),
                    grad_scale);
    }
    out.recon = d.recon;
    out.kl_z = d.kl;
  }
  out.total = out.recon + opts.kl_weight * out.kl_z.rowwise().sum();
  out.total.array() += out.kl_y;
  return out;
}

BatchLoss vae_loss(const Model& model, const Matrix& x, Rng& rng, double kl_weight, bool training) {
  const auto& c = model.config;
  if (c.has_epitomes()) throw ConfigError("vae_loss: model variant is " + to_string(c.variant));
  const Matrix eps = rng.normal_matrix(x.rows(), c.latent_dim);
  Matrix keep;
  const bool drop = c.variant == Variant::dropout_vae && training && c.dropout_rate > 0.0;
  if (drop) keep = dropout_multiplier(x.rows(), c.latent_dim, c.dropout_rate, rng);
  return batch_loss(model, x, {}, eps, drop ? &keep : nullptr, {kl_weight, training});
}

BatchLoss evae_per_epitome_cost(const Model& model, const Matrix& x, int y, const Matrix& eps) {
  check_y(model, y);
  const std::vector<int> ys(static_cast<std::size_t>(x.rows()), y);
  return batch_loss(model, x, ys, eps, nullptr, {model.config.kl_weight, false});
}

Matrix epitome_costs(const Model& model, const Matrix& x, const Matrix& eps) {
  const auto& c = model.config;
  const int M = model.num_epitomes();
  const Eigen::Index B = x.rows();
  require_shape(x, -1, c.obs_dim, "epitome_costs input");
  require_shape(eps, B, c.latent_dim, "reparameterization noise");
  const double kl_y = kl_y_for(model);
  Matrix costs(B, M);
  if (c.variant == Variant::mvae) {
    for (int j = 0; j < M; ++j) {
      const Network& net = model.nets[static_cast<std::size_t>(j)];
      const Matrix ej = eps.middleCols(model.masks.start(j), model.masks.K);
      const EncPass e = encode_pass(net, c, x, ej, false);
      const DecPass d = decode_pass(net, c, e, x, nullptr, nullptr, false);
      costs.col(j) = d.recon + c.kl_weight * d.kl.rowwise().sum();
    }
  } else {
    const Network& net = model.nets.front();
    const EncPass e = encode_pass(net, c, x, eps, false);
    const bool masked = c.variant == Variant::evae && M > 1;
    for (int j = 0; j < M; ++j) {
      Matrix mask;
      if (masked) mask = masks_row_broadcast(model.masks, j, B);
      const DecPass d = decode_pass(net, c, e, x, masked ? &mask : nullptr, nullptr, false);
      costs.col(j) = d.recon + c.kl_weight * d.kl.rowwise().sum();
    }
  }
  costs.array() += kl_y;
  return costs;
}

std::vector<int> evae_select_y(const Model& model, const Matrix& x, const Matrix& eps) {
  const Matrix costs = epitome_costs(model, x, eps);
  std::vector<int> y(static_cast<std::size_t>(x.rows()), 0);
  for (Eigen::Index i = 0; i < costs.rows(); ++i) {
    int best = 0;
    for (int j = 1; j < costs.cols(); ++j) {
      if (costs(i, j) < costs(i, best)) best = j;
    }
    y[static_cast<std::size_t>(i)] = best;
  }
  return y;
}

BatchLoss evae_loss(const Model& model, const Matrix& x, Rng& rng, Model* grad, double grad_scale) {
  const Matrix eps = rng.normal_matrix(x.rows(), model.config.latent_dim);
  const std::vector<int> y = evae_select_y(model, x, eps);
  return batch_loss(model, x, y, eps, nullptr, {model.config.kl_weight, false}, grad, grad_scale);
}

BatchLoss model_loss(const Model& model, const Matrix& x, Rng& rng) {
  if (model.config.has_epitomes()) return evae_loss(model, x, rng);
  return vae_loss(model, x, rng, model.config.kl_weight, false);
}

Samples sample_generate(const Model& model, Rng& rng, int n) {
  if (n < 0) throw ConfigError("sample_generate: n must be >= 0");
  const auto& c = model.config;
  const int M = model.num_epitomes();
  Samples s;
  s.y.resize(static_cast<std::size_t>(n));
  Matrix z(n, c.latent_dim);
  for (int i = 0; i < n; ++i) {
    s.y[static_cast<std::size_t>(i)] = static_cast<int>(rng.below(static_cast<std::uint64_t>(M)));
    for (int d = 0; d < c.latent_dim; ++d) z(i, d) = rng.normal();
  }
  s.mean.resize(n, c.obs_dim);
  if (c.variant == Variant::mvae) {
    for (int j = 0; j < M; ++j) {
      std::vector<Eigen::Index> rows;
      for (int i = 0; i < n; ++i) {
        if (s.y[static_cast<std::size_t>(i)] == j) rows.push_back(i);
      }
      if (rows.empty()) continue;
      const Matrix mean = decoder_mean(model, decode(model, gather_rows(z, rows), j));
      for (std::size_t r = 0; r < rows.size(); ++r) s.mean.row(rows[r]) = mean.row(static_cast<Eigen::Index>(r));
    }
  } else {
    if (c.variant == Variant::evae) z.array() *= mask_rows(model.masks, s.y).array();
    s.mean = decoder_mean(model, decode(model, z, 0));
  }
  return s;
}

}  // namespace evae
