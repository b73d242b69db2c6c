// SPDX-License-Identifier: Apache-2.0

#include "evae/layers.hpp"

#include <cmath>
#include <string>

#include "evae/errors.hpp"

namespace evae {

Matrix dense_forward(const DenseLayer& layer, const Matrix& x) {
  if (x.cols() != layer.in_dim()) {
    throw DimensionError("dense_forward: input " + shape_string(x) + " does not match layer input width " +
                         std::to_string(layer.in_dim()));
  }
  Matrix y = x * layer.W.transpose();
  y.rowwise() += layer.b;
  return y;
}

Matrix dense_backward(const DenseLayer& layer, const Matrix& x, const Matrix& dy, DenseLayer& grad,
                      bool want_input_grad) {
  require_shape(dy, x.rows(), layer.out_dim(), "dense_backward upstream gradient");
  grad.W.noalias() += dy.transpose() * x;
  grad.b += dy.colwise().sum();
  if (!want_input_grad) return {};
  return dy * layer.W;
}

DenseLayer glorot_init(Rng& rng, Eigen::Index fan_in, Eigen::Index fan_out) {
  if (fan_in < 1 || fan_out < 1) throw ConfigError("glorot_init: fans must be >= 1");
  DenseLayer layer(fan_in, fan_out);
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  double* w = layer.W.data();
  for (Eigen::Index i = 0; i < layer.W.size(); ++i) w[i] = rng.uniform(-a, a);
  return layer;
}

Mlp Mlp::glorot(Rng& rng, const std::vector<Eigen::Index>& widths, bool relu_out) {
  if (widths.size() < 2) throw ConfigError("Mlp needs at least one layer");
  std::vector<DenseLayer> ls;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) ls.push_back(glorot_init(rng, widths[i], widths[i + 1]));
  return Mlp(std::move(ls), relu_out);
}

Mlp Mlp::zeros(const std::vector<Eigen::Index>& widths, bool relu_out) {
  if (widths.size() < 2) throw ConfigError("Mlp needs at least one layer");
  std::vector<DenseLayer> ls;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) ls.emplace_back(widths[i], widths[i + 1]);
  return Mlp(std::move(ls), relu_out);
}

Eigen::Index Mlp::param_count() const {
  Eigen::Index n = 0;
  for (const auto& l : layers) n += l.param_count();
  return n;
}

void Mlp::validate() const {
  if (layers.empty()) throw DimensionError("Mlp has no layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].b.size() != layers[i].out_dim()) throw DimensionError("Mlp layer bias width mismatch");
    if (i > 0 && layers[i].in_dim() != layers[i - 1].out_dim()) {
      throw DimensionError("Mlp layers " + std::to_string(i - 1) + " and " + std::to_string(i) + " do not chain");
    }
  }
}

Matrix mlp_forward(const Mlp& net, const Matrix& x, MlpTape* tape) {
  if (tape) {
    tape->inputs.clear();
    tape->pre.clear();
  }
  Matrix h = x;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    Matrix a = dense_forward(net.layers[i], h);
    const bool activate = i + 1 < net.layers.size() || net.relu_output;
    if (tape) {
      tape->inputs.push_back(std::move(h));
      if (activate) tape->pre.push_back(a);
      else tape->pre.emplace_back();
    }
    h = activate ? relu(a) : std::move(a);
  }
  return h;
}

Matrix mlp_backward(const Mlp& net, const MlpTape& tape, const Matrix& dy, Mlp& grad, bool want_input_grad) {
  if (tape.empty()) throw StateError("mlp_backward called without a recorded forward pass");
  if (tape.inputs.size() != net.layers.size() || grad.layers.size() != net.layers.size()) {
    throw StateError("mlp_backward: tape/gradient does not belong to this network");
  }
  Matrix d = dy;
  for (std::size_t k = net.layers.size(); k-- > 0;) {
    const bool activate = k + 1 < net.layers.size() || net.relu_output;
    if (activate) d = (tape.pre[k].array() > 0.0).select(d, 0.0);
    d = dense_backward(net.layers[k], tape.inputs[k], d, grad.layers[k], want_input_grad || k > 0);
  }
  return d;
}

}  // namespace evae
