// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <numbers>

#include "evae/errors.hpp"
#include "evae/model.hpp"
#include "oracles.hpp"

using namespace evae;

namespace {

ModelConfig toy(Variant v, DecoderFamily fam = DecoderFamily::bernoulli) {
  ModelConfig c;
  c.variant = v;
  c.obs_dim = 6;
  c.latent_dim = 4;
  c.hidden = 8;
  c.depth = 1;
  c.decoder = fam;
  if (v == Variant::evae || v == Variant::mvae) {
    c.epitome_size = 2;
    c.epitome_stride = 2;
  }
  if (v == Variant::dropout_vae) c.dropout_rate = 0.3;
  return c;
}

Matrix binary_batch(Rng& r, Eigen::Index rows, Eigen::Index cols) {
  Matrix x(rows, cols);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = r.uniform() < 0.5 ? 0.0 : 1.0;
  return x;
}

double softplus_ref(double l) { return l > 0 ? l + std::log1p(std::exp(-l)) : std::log1p(std::exp(l)); }

}  // namespace

TEST_SUITE("densities") {
  TEST_CASE("gaussian KL hand values") {
    Matrix mu(1, 3), lv(1, 3);
    mu << 0.0, 1.0, 0.0;
    lv << 0.0, 0.0, std::log(4.0);
    const Matrix kl = gaussian_kl_per_dim(mu, lv);
    CHECK(kl(0, 0) == 0.0);
    CHECK(kl(0, 1) == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(kl(0, 2) == doctest::Approx(0.5 * (3.0 - std::log(4.0))).epsilon(1e-14));
    CHECK(kl(0, 2) == doctest::Approx(0.806853).epsilon(1e-6));
  }

  TEST_CASE("gaussian KL agrees with a Monte-Carlo estimate") {
    Rng r(11);
    for (int trial = 0; trial < 5; ++trial) {
      const double mu = r.uniform(-2, 2), lv = r.uniform(-2, 1);
      Matrix m(1, 1), l(1, 1);
      m << mu;
      l << lv;
      const double closed = gaussian_kl_per_dim(m, l)(0, 0);
      const int n = 100000;
      double s = 0, s2 = 0;
      for (int i = 0; i < n; ++i) {
        const double z = mu + std::exp(0.5 * lv) * r.normal();
        const double d = oracle::log_normal(z, mu, std::exp(lv)) - oracle::log_normal(z, 0.0, 1.0);
        s += d;
        s2 += d * d;
      }
      const double mean = s / n, se = std::sqrt((s2 / n - mean * mean) / n);
      CAPTURE(mu);
      CAPTURE(lv);
      CHECK(std::abs(mean - closed) < 3.0 * se);
    }
  }

  TEST_CASE("reparameterize hand values") {
    Matrix mu(1, 2), lv(1, 2), eps(1, 2);
    mu << 1.0, -1.0;
    lv << 0.0, std::log(4.0);
    eps << 0.5, 0.5;
    const Matrix z = reparameterize(mu, lv, eps);
    CHECK(z(0, 0) == 1.5);
    CHECK(z(0, 1) == doctest::Approx(0.0).epsilon(1e-15));
  }

  TEST_CASE("bernoulli NLL at zero logits is ln 2 per pixel") {
    Matrix x(2, 3), l = Matrix::Zero(2, 3);
    x << 0, 1, 1, 1, 0, 0;
    const Vector nll = bernoulli_nll(x, l);
    CHECK(nll(0) == doctest::Approx(3.0 * std::log(2.0)).epsilon(1e-15));
    CHECK(nll(1) == doctest::Approx(3.0 * std::log(2.0)).epsilon(1e-15));
  }

  TEST_CASE("bernoulli NLL is stable for large logits and matches the reference") {
    Matrix x(1, 4), l(1, 4);
    x << 1, 0, 1, 0;
    l << 800.0, -800.0, -3.0, 2.5;
    const Vector nll = bernoulli_nll(x, l);
    double ref = 0;
    for (int j = 0; j < 4; ++j) ref += softplus_ref(l(0, j)) - x(0, j) * l(0, j);
    CHECK(std::isfinite(nll(0)));
    CHECK(nll(0) == doctest::Approx(ref).epsilon(1e-14));
  }

  TEST_CASE("bernoulli NLL derivative is sigmoid(l) - x") {
    Matrix x(1, 1), l(1, 1);
    x << 1.0;
    for (double v : {-2.0, 0.0, 0.7}) {
      l << v;
      Matrix lp = l, lm = l;
      lp(0, 0) += 1e-5;
      lm(0, 0) -= 1e-5;
      const double fd = (bernoulli_nll(x, lp)(0) - bernoulli_nll(x, lm)(0)) / 2e-5;
      CHECK(fd == doctest::Approx(1.0 / (1.0 + std::exp(-v)) - 1.0).epsilon(1e-8));
    }
  }

  TEST_CASE("gaussian NLL at the mean with unit variance") {
    const Matrix x = Rng(12).normal_matrix(2, 5);
    const Vector nll = gaussian_nll(x, x, Matrix::Zero(2, 5));
    CHECK(nll(0) == doctest::Approx(2.5 * std::log(2.0 * std::numbers::pi)).epsilon(1e-15));
  }

  TEST_CASE("dropout multipliers") {
    Rng r(13);
    const Matrix k = dropout_multiplier(200, 100, 0.25, r);
    int zeros = 0;
    for (Eigen::Index i = 0; i < k.size(); ++i) {
      const double v = k.data()[i];
      CHECK_UNARY(v == 0.0 || v == 1.0 / 0.75);
      zeros += v == 0.0;
    }
    CHECK(std::abs(zeros / 20000.0 - 0.25) < 0.015);
    CHECK(dropout_multiplier(3, 3, 0.0, r) == Matrix::Ones(3, 3));
  }
}

TEST_SUITE("masks") {
  TEST_CASE("D=8, K=2, s=2") {
    const auto m = build_epitome_masks(8, 2, 2);
    REQUIRE(m.count() == 4);
    RowVector expect(8);
    expect << 0, 0, 1, 1, 0, 0, 0, 0;
    CHECK(m.masks.row(1) == expect);
  }

  TEST_CASE("D=K=s is a single all-ones mask") {
    const auto m = build_epitome_masks(5, 5, 5);
    REQUIRE(m.count() == 1);
    CHECK(m.masks.row(0) == RowVector::Ones(5));
  }

  TEST_CASE("stride 1 overlapping masks") {
    const auto m = build_epitome_masks(20, 2, 1);
    CHECK(m.count() == 19);
    CHECK(m.masks.row(18)(19) == 1.0);
    CHECK(m.masks.row(18).sum() == 2.0);
  }

  TEST_CASE("invalid shapes") {
    CHECK_THROWS_AS(build_epitome_masks(8, 3, 2), ConfigError);
    CHECK_THROWS_AS(build_epitome_masks(4, 5, 1), ConfigError);
    CHECK_THROWS_AS(build_epitome_masks(4, 2, 3), ConfigError);
    CHECK_THROWS_AS(build_epitome_masks(4, 0, 1), ConfigError);
  }
}

TEST_SUITE("encode_decode") {
  TEST_CASE("zero weights give a standard normal posterior") {
    const Model m = Model::zeros(toy(Variant::vae));
    const Posterior p = encode(m, Rng(1).normal_matrix(3, 6));
    CHECK(p.mu.isZero());
    CHECK(p.logvar.isZero());
  }

  TEST_CASE("logvar clamps at exactly 7") {
    Model m = Model::zeros(toy(Variant::vae));
    m.nets[0].head_logvar.b.setConstant(100.0);
    m.nets[0].head_logvar.b(1) = -100.0;
    const Posterior p = encode(m, Matrix::Zero(1, 6));
    CHECK(p.logvar(0, 0) == 7.0);
    CHECK(p.logvar(0, 1) == -7.0);
  }

  TEST_CASE("epitomic loss ignores noise outside the selected mask") {
    Rng r(2);
    const Model m = Model::init(toy(Variant::evae), r);
    const Matrix x = binary_batch(r, 4, 6);
    Matrix eps = r.normal_matrix(4, 4);
    const std::vector<int> y(4, 1);
    const BatchLoss a = batch_loss(m, x, y, eps, nullptr, {});
    eps.col(0).setConstant(50.0);
    eps.col(1).setConstant(-50.0);
    const BatchLoss b = batch_loss(m, x, y, eps, nullptr, {});
    CHECK(a.total == b.total);
  }

  TEST_CASE("mixture components are independent") {
    Rng r(3);
    Model m = Model::init(toy(Variant::mvae), r);
    const Matrix z = r.normal_matrix(2, 4);
    const Matrix before = decode(m, z, 0).mean;
    m.nets[1].out_mu.b.setConstant(9.0);
    CHECK(decode(m, z, 0).mean == before);
    CHECK_FALSE(decode(m, z, 1).mean == decode(Model::init(toy(Variant::mvae), r), z, 1).mean);
    CHECK_THROWS_AS(decode(m, z, 2), IndexError);
  }

  TEST_CASE("mixture decoder reads the coordinates of its own mask") {
    Rng r(4);
    const Model m = Model::init(toy(Variant::mvae), r);
    Matrix z = r.normal_matrix(1, 4);
    const Matrix a = decode(m, z, 1).mean;
    z(0, 0) = 42.0;
    CHECK(decode(m, z, 1).mean == a);
  }
}

TEST_SUITE("losses") {
  TEST_CASE("total is recon plus weighted KL") {
    Rng r(5);
    const Model m = Model::init(toy(Variant::vae), r);
    const Matrix x = binary_batch(r, 5, 6);
    const Matrix eps = r.normal_matrix(5, 4);
    for (double lambda : {0.0, 0.5, 1.0}) {
      const BatchLoss l = batch_loss(m, x, {}, eps, nullptr, {lambda, false});
      for (Eigen::Index i = 0; i < 5; ++i) {
        CHECK(l.total(i) == doctest::Approx(l.recon(i) + lambda * l.kl_z.row(i).sum()).epsilon(1e-14));
      }
      if (lambda == 0.0) CHECK(l.total == l.recon);
    }
  }

  TEST_CASE("zero-weight gaussian model matches the closed form") {
    ModelConfig c = toy(Variant::vae, DecoderFamily::gaussian);
    Model m = Model::zeros(c);
    m.nets[0].head_logvar.b << 0.3, -0.2, 0.0, 1.0;
    m.nets[0].head_mu.b << 0.5, 0.0, -1.0, 0.25;
    m.nets[0].out_mu.b.setConstant(0.4);
    m.nets[0].out_logvar.b.setConstant(-1.0);
    Rng r(6);
    const Matrix x = r.normal_matrix(3, 6);
    const BatchLoss l = batch_loss(m, x, {}, r.normal_matrix(3, 4), nullptr, {});
    double kl = 0;
    for (int d = 0; d < 4; ++d) {
      const double mu = m.nets[0].head_mu.b(d), lv = m.nets[0].head_logvar.b(d);
      kl += 0.5 * (mu * mu + std::exp(lv) - 1.0 - lv);
    }
    for (Eigen::Index i = 0; i < 3; ++i) {
      double nll = 0;
      for (Eigen::Index j = 0; j < 6; ++j) nll -= oracle::log_normal(x(i, j), 0.4, std::exp(-1.0));
      CHECK(std::abs(l.total(i) - (nll + kl)) < 1e-8);
    }
  }

  TEST_CASE("dropout VAE in eval mode equals the plain bound") {
    Rng r(7);
    const Model m = Model::init(toy(Variant::dropout_vae), r);
    const Matrix x = binary_batch(r, 4, 6);
    Rng a(70), b(70);
    const BatchLoss eval = vae_loss(m, x, a, 1.0, false);
    const BatchLoss plain = batch_loss(m, x, {}, b.normal_matrix(4, 4), nullptr, {});
    CHECK(eval.total == plain.total);
    Rng c(70);
    CHECK_FALSE(vae_loss(m, x, c, 1.0, true).total == plain.total);
  }

  TEST_CASE("vae_loss refuses epitomic variants") {
    Rng r(8);
    const Model m = Model::init(toy(Variant::evae), r);
    CHECK_THROWS_AS(vae_loss(m, Matrix::Zero(1, 6), r, 1.0), ConfigError);
  }

  TEST_CASE("D=K=s epitomic cost equals the VAE total") {
    Rng r(9);
    ModelConfig c = toy(Variant::vae);
    const Model v = Model::init(c, r);
    ModelConfig ce = c;
    ce.variant = Variant::evae;
    ce.epitome_size = 4;
    ce.epitome_stride = 4;
    Model e = Model::zeros(ce);
    e.nets = v.nets;
    const Matrix x = binary_batch(r, 20, 6);
    const Matrix eps = r.normal_matrix(20, 4);
    const BatchLoss lv = batch_loss(v, x, {}, eps, nullptr, {});
    const BatchLoss le = evae_per_epitome_cost(e, x, 0, eps);
    CHECK(le.kl_y == 0.0);
    for (Eigen::Index i = 0; i < 20; ++i) CHECK(std::abs(lv.total(i) - le.total(i)) <= 1e-10);
  }

  TEST_CASE("per-epitome cost against a hand computation") {
    Rng r(10);
    const Model m = Model::init(toy(Variant::evae), r);
    const Network& n = m.nets[0];
    const Matrix x = binary_batch(r, 3, 6);
    const Matrix eps = r.normal_matrix(3, 4);
    const BatchLoss l = evae_per_epitome_cost(m, x, 1, eps);
    const auto xr = oracle::rows(x);
    const auto h = oracle::mlp(n.encoder, xr);
    const auto mu = oracle::dense(n.head_mu, h);
    const auto lv = oracle::dense(n.head_logvar, h);
    for (std::size_t i = 0; i < 3; ++i) {
      std::vector<std::vector<double>> z(1, std::vector<double>(4, 0.0));
      double kl = 0;
      for (std::size_t d = 2; d < 4; ++d) {
        z[0][d] = mu[i][d] + std::exp(0.5 * lv[i][d]) * eps(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d));
        kl += 0.5 * (mu[i][d] * mu[i][d] + std::exp(lv[i][d]) - 1.0 - lv[i][d]);
      }
      const auto logits = oracle::dense(n.out_mu, oracle::mlp(n.decoder, z));
      double rec = 0;
      for (std::size_t j = 0; j < 6; ++j) rec += softplus_ref(logits[0][j]) - xr[i][j] * logits[0][j];
      const auto ii = static_cast<Eigen::Index>(i);
      CHECK(l.kl_z(ii, 0) == 0.0);
      CHECK(l.kl_z(ii, 1) == 0.0);
      CHECK(std::abs(l.recon(ii) - rec) < 1e-12);
      CHECK(std::abs(l.total(ii) - (rec + kl + std::log(2.0))) < 1e-12);
    }
  }
}

TEST_SUITE("selection") {
  TEST_CASE("single epitome always selects 0") {
    ModelConfig c = toy(Variant::evae);
    c.epitome_size = 4;
    c.epitome_stride = 4;
    Rng r(14);
    const Model m = Model::init(c, r);
    for (int y : evae_select_y(m, binary_batch(r, 10, 6), r.normal_matrix(10, 4))) CHECK(y == 0);
  }

  TEST_CASE("ties go to the lowest index") {
    const Model m = Model::zeros(toy(Variant::evae));
    Rng r(15);
    const Matrix costs = epitome_costs(m, binary_batch(r, 3, 6), r.normal_matrix(3, 4));
    CHECK(costs(0, 0) == costs(0, 1));
    for (int y : evae_select_y(m, binary_batch(r, 3, 6), r.normal_matrix(3, 4))) CHECK(y == 0);
  }

  TEST_CASE("constructed preference for the second epitome") {
    // Units 2,3 carry an informative posterior; units 0,1 pay KL for nothing.
    Model m = Model::zeros(toy(Variant::evae));
    m.nets[0].head_mu.b << 3.0, 3.0, 0.0, 0.0;
    const Matrix x = Matrix::Zero(2, 6);
    for (int y : evae_select_y(m, x, Matrix::Zero(2, 4))) CHECK(y == 1);
  }

  TEST_CASE("argmin matches brute force over per-epitome costs") {
    ModelConfig c = toy(Variant::evae);
    c.latent_dim = 6;
    c.epitome_stride = 1;  // M = 5
    Rng r(16);
    const Model m = Model::init(c, r);
    const Matrix x = binary_batch(r, 30, 6);
    const Matrix eps = r.normal_matrix(30, 6);
    const auto ys = evae_select_y(m, x, eps);
    std::vector<Vector> per(5);
    for (int j = 0; j < 5; ++j) per[static_cast<std::size_t>(j)] = evae_per_epitome_cost(m, x, j, eps).total;
    for (Eigen::Index i = 0; i < 30; ++i) {
      int best = 0;
      for (int j = 1; j < 5; ++j) {
        if (per[static_cast<std::size_t>(j)](i) < per[static_cast<std::size_t>(best)](i)) best = j;
      }
      CHECK(ys[static_cast<std::size_t>(i)] == best);
    }
  }

  TEST_CASE("gradients vanish outside the selected mask") {
    Rng r(17);
    const Model m = Model::init(toy(Variant::evae), r);
    const Matrix x = binary_batch(r, 6, 6);
    const std::vector<int> y(6, 0);
    Model g = m.zeros_like();
    batch_loss(m, x, y, r.normal_matrix(6, 4), nullptr, {}, &g);
    for (Eigen::Index d = 2; d < 4; ++d) {
      CHECK(g.nets[0].head_mu.W.row(d).isZero());
      CHECK(g.nets[0].head_logvar.b(d) == 0.0);
      CHECK(g.nets[0].decoder.layers[0].W.col(d).isZero());
    }
    CHECK_FALSE(g.nets[0].head_mu.W.row(0).isZero());
  }
}

TEST_SUITE("gradients") {
  TEST_CASE("every variant agrees with central differences") {
    struct Case {
      Variant v;
      DecoderFamily f;
      double lambda;
    };
    for (const Case cs : {Case{Variant::vae, DecoderFamily::bernoulli, 0.5},
                          Case{Variant::vae, DecoderFamily::gaussian, 1.0},
                          Case{Variant::evae, DecoderFamily::bernoulli, 1.0},
                          Case{Variant::mvae, DecoderFamily::bernoulli, 1.0}}) {
      Rng r(18);
      Model m = Model::init(toy(cs.v, cs.f), r);
      const Matrix x = cs.f == DecoderFamily::gaussian ? Matrix(r.normal_matrix(3, 6)) : binary_batch(r, 3, 6);
      const Matrix eps = r.normal_matrix(3, 4);
      const std::vector<int> y = m.num_epitomes() > 1 ? std::vector<int>{0, 1, 1} : std::vector<int>{};
      const LossOptions opts{cs.lambda, false};
      Model g = m.zeros_like();
      batch_loss(m, x, y, eps, nullptr, opts, &g);
      auto loss = [&] { return batch_loss(m, x, y, eps, nullptr, opts).total.sum(); };
      const auto rep = grad_check(loss, m.params(), g.params(), 1e-5, 1e-5);
      CAPTURE(to_string(cs.v));
      CAPTURE(rep.max_rel_error);
      CHECK(rep.passed);
    }
  }
}

TEST_SUITE("sampling") {
  TEST_CASE("selector frequencies are uniform") {
    ModelConfig c = toy(Variant::evae);
    c.latent_dim = 8;  // M = 4
    Rng r(19);
    const Model m = Model::init(c, r);
    const Samples s = sample_generate(m, r, 4000);
    CHECK(s.mean.rows() == 4000);
    CHECK(s.mean.cols() == 6);
    std::vector<int> hist(4, 0);
    for (int y : s.y) ++hist[static_cast<std::size_t>(y)];
    for (int h : hist) CHECK(std::abs(h - 1000) < 120);
    CHECK(s.mean.minCoeff() >= 0.0);
    CHECK(s.mean.maxCoeff() <= 1.0);
  }

  TEST_CASE("same seed same samples") {
    Rng r(20);
    const Model m = Model::init(toy(Variant::vae), r);
    Rng a(5), b(5);
    CHECK(sample_generate(m, a, 10).mean == sample_generate(m, b, 10).mean);
  }
}

TEST_SUITE("mvae_budget") {
  TEST_CASE("one component of full width keeps the hidden size") {
    CHECK(mvae_hidden_size(200, 1, 784, 50, 50, 1) == 200);
  }

  TEST_CASE("more components means narrower networks") {
    int prev = 1 << 30;
    for (int M : {1, 2, 5, 10}) {
      const int h = mvae_hidden_size(200, 1, 784, 50, 5, M);
      CHECK(h <= prev);
      prev = h;
    }
  }

  TEST_CASE("chosen width is the largest within budget") {
    const Eigen::Index budget = network_param_count(784, 50, 2, 200, DecoderFamily::bernoulli);
    const int h = mvae_hidden_size(200, 2, 784, 50, 5, 10);
    CHECK(10 * network_param_count(784, 5, 2, h, DecoderFamily::bernoulli) <= budget);
    CHECK(10 * network_param_count(784, 5, 2, h + 1, DecoderFamily::bernoulli) > budget);
  }

  TEST_CASE("hand parameter count") {
    // encoder 6*8+8 + 2*(8*4+4); decoder 4*8+8 + 8*6+6
    CHECK(network_param_count(6, 4, 1, 8, DecoderFamily::bernoulli) == 56 + 72 + 40 + 54);
    const Model m = Model::zeros(toy(Variant::vae));
    CHECK(m.param_count() == 222);
    CHECK(m.param_names().size() == Model::zeros(toy(Variant::vae)).zeros_like().param_names().size());
  }
}
