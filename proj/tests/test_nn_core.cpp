// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <set>

#include "evae/errors.hpp"
#include "evae/layers.hpp"
#include "evae/optim.hpp"
#include "evae/rng.hpp"
#include "oracles.hpp"

using namespace evae;

namespace {

ParamSpans spans_of(Mlp& net) {
  ParamSpans out;
  for (auto& l : net.layers) {
    out.emplace_back(l.W.data(), static_cast<std::size_t>(l.W.size()));
    out.emplace_back(l.b.data(), static_cast<std::size_t>(l.b.size()));
  }
  return out;
}

Matrix mat(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& r : rows) {
    Eigen::Index j = 0;
    for (double v : r) m(i, j++) = v;
    ++i;
  }
  return m;
}

}  // namespace

TEST_SUITE("rng") {
  TEST_CASE("xoshiro256** reference stream") {
    // Reference values: SplitMix64 seeding of seed 0 followed by xoshiro256**,
    // computed with the published C reference implementations.
    Rng r(0);
    CHECK(r.state()[0] == 0xE220A8397B1DCDAFULL);
    CHECK(r.state()[1] == 0x6E789E6AA1B965F4ULL);
    CHECK(r.state()[2] == 0x06C45D188009454FULL);
    CHECK(r.state()[3] == 0xF88BB8A8724C81ECULL);
    CHECK(r.next_u64() == 0x99EC5F36CB75F2B4ULL);
  }

  TEST_CASE("same seed gives the same stream; split streams differ") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng c = Rng(42).split("assign"), d = Rng(42).split("step");
    CHECK(c.next_u64() != d.next_u64());
    CHECK(Rng(42).split(3).next_u64() == Rng(42).split(3).next_u64());
  }

  TEST_CASE("uniform and normal moments") {
    Rng r(7);
    const int n = 200000;
    double su = 0, sn = 0, sn2 = 0;
    for (int i = 0; i < n; ++i) {
      const double u = r.uniform();
      CHECK_UNARY(u >= 0.0);
      CHECK_UNARY(u < 1.0);
      su += u;
      const double z = r.normal();
      sn += z;
      sn2 += z * z;
    }
    CHECK(su / n == doctest::Approx(0.5).epsilon(0.01));
    CHECK(std::abs(sn / n) < 4.0 / std::sqrt(n));
    CHECK(sn2 / n == doctest::Approx(1.0).epsilon(0.02));
  }

  TEST_CASE("below is unbiased over a small range") {
    Rng r(3);
    std::vector<int> hist(7, 0);
    for (int i = 0; i < 70000; ++i) ++hist[static_cast<std::size_t>(r.below(7))];
    for (int h : hist) CHECK(std::abs(h - 10000) < 400);
  }
}

TEST_SUITE("dense") {
  TEST_CASE("identity weights pass input through") {
    DenseLayer l(2, 2);
    l.W.setIdentity();
    const Matrix y = dense_forward(l, mat({{3, -1}}));
    CHECK(y(0, 0) == 3.0);
    CHECK(y(0, 1) == -1.0);
  }

  TEST_CASE("hand arithmetic") {
    DenseLayer l(2, 1);
    l.W << 1, 1;
    l.b << 0.5;
    CHECK(dense_forward(l, mat({{2, 3}}))(0, 0) == 5.5);
  }

  TEST_CASE("wrong inner dimension is a dimension error") {
    DenseLayer l(3, 2);
    CHECK_THROWS_AS(dense_forward(l, Matrix::Zero(1, 2)), DimensionError);
  }

  TEST_CASE("relu sign cases") {
    const Matrix y = relu(mat({{-1, 0, 2}}));
    CHECK(y(0, 0) == 0.0);
    CHECK(y(0, 1) == 0.0);
    CHECK(y(0, 2) == 2.0);
    const Matrix pos = mat({{0.5, 1, 3}});
    CHECK(relu(pos) == pos);
    CHECK(relu(mat({{-0.5, -1, -3}})).isZero());
  }
}

TEST_SUITE("mlp") {
  TEST_CASE("depth-1 network equals dense_forward") {
    Rng r(1);
    Mlp net = Mlp::glorot(r, {4, 3});
    const Matrix x = r.normal_matrix(5, 4);
    CHECK(mlp_forward(net, x) == dense_forward(net.layers[0], x));
  }

  TEST_CASE("zero weights give broadcast output bias") {
    Mlp net = Mlp::zeros({3, 4, 2});
    net.layers[1].b << 0.25, -2.0;
    const Matrix y = mlp_forward(net, Rng(2).normal_matrix(6, 3));
    for (Eigen::Index i = 0; i < 6; ++i) {
      CHECK(y(i, 0) == 0.25);
      CHECK(y(i, 1) == -2.0);
    }
  }

  TEST_CASE("random two-layer net matches the straight-line oracle") {
    Rng r(3);
    Mlp net = Mlp::glorot(r, {5, 7, 3});
    for (auto& l : net.layers) l.b = r.normal_matrix(1, l.out_dim());
    const Matrix x = r.normal_matrix(4, 5);
    const Matrix y = mlp_forward(net, x);
    const auto ref = oracle::mlp(net, oracle::rows(x));
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      for (Eigen::Index j = 0; j < y.cols(); ++j) {
        CHECK(std::abs(y(i, j) - ref[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) < 1e-12);
      }
    }
  }

  TEST_CASE("non-chaining layers are rejected") {
    Mlp net = Mlp::zeros({3, 4, 2});
    net.layers[1] = DenseLayer(5, 2);
    CHECK_THROWS_AS(net.validate(), DimensionError);
  }
}

TEST_SUITE("backprop") {
  TEST_CASE("sum of a linear layer with W = 0 has bias gradient ones") {
    Mlp net = Mlp::zeros({3, 2});
    MlpTape tape;
    const Matrix x = Rng(4).normal_matrix(1, 3);
    const Matrix y = mlp_forward(net, x, &tape);
    Mlp g = Mlp::zeros({3, 2});
    mlp_backward(net, tape, Matrix::Ones(y.rows(), y.cols()), g);
    CHECK(g.layers[0].b(0) == 1.0);
    CHECK(g.layers[0].b(1) == 1.0);
  }

  TEST_CASE("backward before forward is a state error") {
    Mlp net = Mlp::zeros({3, 2});
    Mlp g = Mlp::zeros({3, 2});
    CHECK_THROWS_AS(mlp_backward(net, MlpTape{}, Matrix::Ones(1, 2), g), StateError);
  }

  TEST_CASE("dead ReLU unit passes no gradient") {
    Mlp net = Mlp::zeros({1, 1, 1});
    net.layers[0].W(0, 0) = 1.0;
    net.layers[0].b(0) = -5.0;  // pre-activation strictly negative
    net.layers[1].W(0, 0) = 2.0;
    MlpTape tape;
    Matrix x(1, 1);
    x << 1.0;
    mlp_forward(net, x, &tape);
    Mlp g = Mlp::zeros({1, 1, 1});
    const Matrix dx = mlp_backward(net, tape, Matrix::Ones(1, 1), g);
    CHECK(g.layers[0].W(0, 0) == 0.0);
    CHECK(g.layers[0].b(0) == 0.0);
    CHECK(dx(0, 0) == 0.0);
    CHECK(g.layers[1].b(0) == 1.0);
  }

  TEST_CASE("random networks agree with central differences") {
    for (std::uint64_t seed = 10; seed < 15; ++seed) {
      Rng r(seed);
      Mlp net = Mlp::glorot(r, {4, 6, 5, 3});
      for (auto& l : net.layers) l.b = 0.1 * r.normal_matrix(1, l.out_dim());
      const Matrix x = r.normal_matrix(3, 4);
      const Matrix weights = r.normal_matrix(3, 3);
      auto loss = [&] { return mlp_forward(net, x).cwiseProduct(weights).sum(); };
      MlpTape tape;
      mlp_forward(net, x, &tape);
      Mlp g = Mlp::zeros({4, 6, 5, 3});
      mlp_backward(net, tape, weights, g);
      const auto rep = grad_check(loss, spans_of(net), spans_of(g), 1e-5, 1e-6);
      CAPTURE(seed);
      CAPTURE(rep.max_rel_error);
      CHECK(rep.passed);
    }
  }
}

TEST_SUITE("glorot") {
  TEST_CASE("bound and zero bias at fan 1") {
    Rng r(5);
    const DenseLayer l = glorot_init(r, 1, 1);
    CHECK(std::abs(l.W(0, 0)) <= std::sqrt(3.0));
    CHECK(l.b(0) == 0.0);
  }

  TEST_CASE("deterministic under a fixed seed") {
    Rng a(6), b(6);
    CHECK(glorot_init(a, 10, 20).W == glorot_init(b, 10, 20).W);
  }

  TEST_CASE("every element respects the bound and variance is 2/(in+out)") {
    Rng r(8);
    const DenseLayer l = glorot_init(r, 200, 500);  // 1e5 draws
    const double bound = std::sqrt(6.0 / 700.0);
    CHECK(l.W.cwiseAbs().maxCoeff() <= bound);
    const double mean = l.W.mean();
    const double var = (l.W.array() - mean).square().mean();
    CHECK(var == doctest::Approx(2.0 / 700.0).epsilon(0.05));
  }
}

TEST_SUITE("adam") {
  TEST_CASE("zero gradient is a fixed point; step counter advances") {
    std::vector<double> p{1.0, -2.0}, g{0.0, 0.0};
    AdamState s;
    for (int i = 0; i < 3; ++i) CHECK(adam_step({std::span<double>(p)}, {std::span<double>(g)}, s, 0.001).applied);
    CHECK(p[0] == 1.0);
    CHECK(p[1] == -2.0);
    CHECK(s.t == 3);
  }

  TEST_CASE("first step matches the bias-corrected formula") {
    std::vector<double> p{0.0}, g{1.0};
    AdamState s;
    adam_step({std::span<double>(p)}, {std::span<double>(g)}, s, 0.001);
    // m = 0.1, v = 0.001; m_hat = 1, v_hat = 1.
    const double m_hat = 0.1 / (1.0 - 0.9);
    const double v_hat = 0.001 / (1.0 - 0.999);
    const double expected = -0.001 * m_hat / (std::sqrt(v_hat) + 1e-8);
    CHECK(p[0] == doctest::Approx(expected).epsilon(1e-12));
    CHECK(p[0] == doctest::Approx(-0.00099999999).epsilon(1e-9));
    CHECK(s.v[0][0] >= 0.0);
  }

  TEST_CASE("non-finite gradient rejects the step and leaves state untouched") {
    std::vector<double> p{1.0, 2.0}, g{0.5, std::nan("")};
    AdamState s;
    const auto r = adam_step({std::span<double>(p)}, {std::span<double>(g)}, s, 0.001);
    CHECK_FALSE(r.applied);
    CHECK(r.diagnostic.find("non-finite") != std::string::npos);
    CHECK(p[0] == 1.0);
    CHECK(s.t == 0);
  }

  TEST_CASE("identical runs give bitwise identical trajectories") {
    auto run = [] {
      Rng r(9);
      std::vector<double> p(5);
      for (auto& v : p) v = r.normal();
      AdamState s;
      for (int i = 0; i < 50; ++i) {
        std::vector<double> g(5);
        for (std::size_t k = 0; k < 5; ++k) g[k] = 2.0 * p[k] + 0.1 * r.normal();
        adam_step({std::span<double>(p)}, {std::span<double>(g)}, s, 0.01);
      }
      return p;
    };
    CHECK(run() == run());
  }

  TEST_CASE("non-positive learning rate is rejected") {
    std::vector<double> p{1.0}, g{1.0};
    AdamState s;
    CHECK_THROWS_AS(adam_step({std::span<double>(p)}, {std::span<double>(g)}, s, 0.0), ConfigError);
  }
}

TEST_SUITE("grad_check") {
  TEST_CASE("quadratic loss") {
    std::vector<double> p{0.3, -1.2, 2.5}, g(3);
    for (std::size_t i = 0; i < 3; ++i) g[i] = 2.0 * p[i];
    auto loss = [&] { return p[0] * p[0] + p[1] * p[1] + p[2] * p[2]; };
    const auto rep = grad_check(loss, {std::span<double>(p)}, {std::span<double>(g)}, 1e-5, 1e-9);
    CHECK(rep.max_rel_error < 1e-9);
    CHECK(rep.coordinates == 3);
    CHECK(p[1] == -1.2);  // restored
  }

  TEST_CASE("corrupted gradient is reported") {
    std::vector<double> p{0.3, -1.2}, g{0.6, -2.4 + 1e-3};
    auto loss = [&] { return p[0] * p[0] + p[1] * p[1]; };
    const auto rep = grad_check(loss, {std::span<double>(p)}, {std::span<double>(g)}, 1e-5, 1e-6);
    CHECK_FALSE(rep.passed);
    CHECK(rep.worst_index == 1);
    CHECK(rep.max_rel_error > 1e-6);
  }
}

TEST_SUITE("tensor") {
  TEST_CASE("shape product must match data length") {
    CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
    const Tensor t({2, 2}, {1, 2, 3, 4});
    CHECK(t.to_matrix()(1, 0) == 3.0);
    CHECK(Tensor::from_matrix(t.to_matrix()) == t);
  }

  TEST_CASE("logsumexp is overflow safe") {
    Vector v(3);
    v << 1000.0, 1000.0, -1000.0;
    CHECK(logsumexp(v) == doctest::Approx(1000.0 + std::log(2.0)));
    v << -1000.0, -1000.0, -1001.0;
    CHECK(std::isfinite(logsumexp(v)));
    CHECK(logsumexp(v) == doctest::Approx(-1000.0 + std::log(2.0 + std::exp(-1.0))));
  }
}
