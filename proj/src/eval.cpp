// SPDX-License-Identifier: Apache-2.0

#include "evae/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "evae/errors.hpp"

namespace evae {

namespace {

constexpr Eigen::Index kChunk = 500;

// Mean and standard error of the mean.
std::pair<double, double> mean_se(const Vector& v) {
  const double n = static_cast<double>(v.size());
  const double mean = v.mean();
  if (v.size() < 2) return {mean, 0.0};
  const double var = (v.array() - mean).square().sum() / (n - 1.0);
  return {mean, std::sqrt(var / n)};
}

}  // namespace

ActivityReport unit_activity(const Model& model, const Matrix& X) {
  if (X.rows() == 0) throw ConfigError("unit_activity: empty dataset");
  const auto& c = model.config;
  const Eigen::Index D = c.latent_dim, n = X.rows();
  Matrix means(n, D);
  Matrix kl(n, D);
  for (Eigen::Index b = 0; b < n; b += kChunk) {
    const Eigen::Index m = std::min(kChunk, n - b);
    const Matrix x = X.middleRows(b, m);
    if (!c.has_epitomes()) {
      const Posterior p = encode(model, x);
      means.middleRows(b, m) = p.mu;
      kl.middleRows(b, m) = gaussian_kl_per_dim(p.mu, p.logvar);
      continue;
    }
    const std::vector<int> y = evae_select_y(model, x, Matrix::Zero(m, D));
    Matrix mu = Matrix::Zero(m, D), k = Matrix::Zero(m, D);
    if (c.variant == Variant::mvae) {
      for (int j = 0; j < model.num_epitomes(); ++j) {
        const Posterior p = encode(model, x, j);
        const Matrix kj = gaussian_kl_per_dim(p.mu, p.logvar);
        for (Eigen::Index i = 0; i < m; ++i) {
          if (y[static_cast<std::size_t>(i)] != j) continue;
          mu.row(i).segment(model.masks.start(j), model.masks.K) = p.mu.row(i);
          k.row(i).segment(model.masks.start(j), model.masks.K) = kj.row(i);
        }
      }
    } else {
      const Posterior p = encode(model, x);
      const Matrix kall = gaussian_kl_per_dim(p.mu, p.logvar);
      for (Eigen::Index i = 0; i < m; ++i) {
        const auto mask = model.masks.masks.row(y[static_cast<std::size_t>(i)]).array();
        mu.row(i) = (p.mu.row(i).array() * mask).matrix();
        k.row(i) = (kall.row(i).array() * mask).matrix();
      }
    }
    means.middleRows(b, m) = mu;
    kl.middleRows(b, m) = k;
  }
  ActivityReport r;
  const RowVector centre = means.colwise().mean();
  r.activity = ((means.rowwise() - centre).array().square().colwise().sum() / static_cast<double>(n)).transpose();
  r.per_unit_kl = kl.colwise().mean().transpose();
  r.active_count = static_cast<int>((r.activity.array() > r.threshold).count());
  return r;
}

Correlation pearson(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw DimensionError("pearson: length mismatch");
  Correlation out;
  if (a.size() < 2) return out;
  const Vector da = a.array() - a.mean();
  const Vector db = b.array() - b.mean();
  const double sa = da.norm(), sb = db.norm();
  if (sa == 0.0 || sb == 0.0) return out;
  out.r = std::clamp(da.dot(db) / (sa * sb), -1.0, 1.0);
  out.defined = true;
  return out;
}

Correlation activity_kl_correlation(const ActivityReport& report) {
  return pearson(report.activity, report.per_unit_kl);
}

std::vector<double> default_sigma_grid() {
  std::vector<double> g;
  const double lo = std::log(0.05), hi = std::log(1.0);
  for (int i = 0; i < 20; ++i) g.push_back(std::exp(lo + (hi - lo) * i / 19.0));
  g.back() = 1.0;
  return g;
}

namespace {

// Per test point log-densities for each sigma (test.rows() x sigmas.size()).
Matrix parzen_table(const Matrix& samples, const Matrix& test, const std::vector<double>& sigmas) {
  if (samples.rows() == 0 || test.rows() == 0) throw ConfigError("parzen: empty sample or test set");
  require_shape(test, -1, samples.cols(), "parzen test set");
  for (double s : sigmas) {
    if (!(s > 0.0)) throw ConfigError("parzen: sigma must be > 0");
  }
  const double n = static_cast<double>(samples.rows());
  const double N = static_cast<double>(samples.cols());
  const Vector s2 = samples.rowwise().squaredNorm();
  Matrix out(test.rows(), static_cast<Eigen::Index>(sigmas.size()));
  for (Eigen::Index b = 0; b < test.rows(); b += kChunk) {
    const Eigen::Index m = std::min(kChunk, test.rows() - b);
    const Matrix t = test.middleRows(b, m);
    Matrix d2 = -2.0 * t * samples.transpose();
    d2.colwise() += t.rowwise().squaredNorm();
    d2.rowwise() += s2.transpose();
    d2 = d2.cwiseMax(0.0);
    for (std::size_t k = 0; k < sigmas.size(); ++k) {
      const double sg = sigmas[k];
      const double norm = std::log(n) + 0.5 * N * std::log(2.0 * std::numbers::pi * sg * sg);
      const Matrix logk = d2 * (-1.0 / (2.0 * sg * sg));
      out.col(static_cast<Eigen::Index>(k)).segment(b, m) = logsumexp_rows(logk).array() - norm;
    }
  }
  return out;
}

}  // namespace

ParzenResult parzen_log_density(const Matrix& samples, const Matrix& test, double sigma) {
  const Matrix table = parzen_table(samples, test, {sigma});
  ParzenResult r;
  r.sigma = sigma;
  r.per_point = table.col(0);
  std::tie(r.mean_log_density, r.std_error) = mean_se(r.per_point);
  r.n_samples = samples.rows();
  return r;
}

double parzen_sigma_select(const Matrix& samples, const Matrix& validation, const std::vector<double>& grid) {
  if (grid.empty()) throw ConfigError("parzen_sigma_select: empty sigma grid");
  std::vector<double> sorted = grid;
  std::sort(sorted.begin(), sorted.end());
  const Matrix table = parzen_table(samples, validation, sorted);
  const RowVector means = table.colwise().mean();
  Eigen::Index best = 0;
  for (Eigen::Index k = 1; k < means.size(); ++k) {
    if (means(k) > means(best)) best = k;
  }
  return sorted[static_cast<std::size_t>(best)];
}

IwllResult iw_log_likelihood(const Model& model, const Matrix& X, int k, Rng& rng) {
  if (k < 1) throw ConfigError("iw_log_likelihood: k must be >= 1");
  const auto& c = model.config;
  const int M = model.num_epitomes();
  const double log_m = c.has_epitomes() ? std::log(static_cast<double>(M)) : 0.0;
  IwllResult out;
  out.k = k;
  out.per_example.resize(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const Matrix x = X.row(i);
    int y = 0;
    if (c.has_epitomes()) y = evae_select_y(model, x, Matrix::Zero(1, c.latent_dim)).front();
    const bool mixture = c.variant == Variant::mvae;
    const Posterior post = encode(model, x, mixture ? y : 0);
    // Units that carry the posterior: the whole latent for vae/mvae-component, mask(y) for evae.
    const Eigen::Index lat = post.mu.cols();
    const Eigen::Index lo = c.variant == Variant::evae ? model.masks.start(y) : 0;
    const Eigen::Index width = c.variant == Variant::evae ? model.masks.K : lat;

    Vector logw(k);
    for (Eigen::Index b = 0; b < k; b += kChunk) {
      const Eigen::Index m = std::min<Eigen::Index>(kChunk, k - b);
      const Matrix eps = rng.normal_matrix(m, width);
      const RowVector mu = post.mu.row(0).segment(lo, width);
      const RowVector lv = post.logvar.row(0).segment(lo, width);
      const RowVector sd = (0.5 * lv.array()).exp().matrix();
      Matrix zk = (eps.array().rowwise() * sd.array()).matrix();
      zk.rowwise() += mu;
      Matrix z;
      if (mixture) {
        z = Matrix::Zero(m, c.latent_dim);
        z.middleCols(model.masks.start(y), model.masks.K) = zk;
      } else {
        z = Matrix::Zero(m, lat);
        z.middleCols(lo, width) = zk;
      }
      const DecoderOutput dec = decode(model, z, y);
      const Matrix xr = x.replicate(m, 1);
      const Vector recon = c.decoder == DecoderFamily::bernoulli ? bernoulli_nll(xr, dec.mean)
                                                                 : gaussian_nll(xr, dec.mean, dec.logvar);
      // log p(z) - log q(z|x); the (2 pi) terms cancel.
      const Vector log_ratio =
          (0.5 * (-zk.array().square() + eps.array().square()).rowwise().sum()).matrix().array() + 0.5 * lv.sum();
      logw.segment(b, m) = -recon + log_ratio;
    }
    out.per_example(i) = logsumexp(logw) - std::log(static_cast<double>(k)) - log_m;
  }
  std::tie(out.mean_estimate, out.std_error) = mean_se(out.per_example);
  return out;
}

ElboResult elbo_eval(const Model& model, const Matrix& X, int n_mc, Rng& rng) {
  if (n_mc < 1) throw ConfigError("elbo_eval: n_mc must be >= 1");
  if (X.rows() == 0) throw ConfigError("elbo_eval: empty dataset");
  ElboResult r;
  r.per_example = Vector::Zero(X.rows());
  double recon = 0.0, kl = 0.0;
  for (int rep = 0; rep < n_mc; ++rep) {
    for (Eigen::Index b = 0; b < X.rows(); b += kChunk) {
      const Eigen::Index m = std::min(kChunk, X.rows() - b);
      const BatchLoss l = model_loss(model, X.middleRows(b, m), rng);
      r.per_example.segment(b, m) -= l.total;
      recon += l.recon.sum();
      kl += l.kl_z.sum();
      r.kl_y = l.kl_y;
    }
  }
  const double denom = static_cast<double>(n_mc);
  r.per_example /= denom;
  r.mean_recon = recon / (denom * static_cast<double>(X.rows()));
  r.mean_kl_z = kl / (denom * static_cast<double>(X.rows()));
  std::tie(r.mean_bound, r.std_error) = mean_se(r.per_example);
  return r;
}

}  // namespace evae
