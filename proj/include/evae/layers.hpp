// SPDX-License-Identifier: Apache-2.0
//
// Fully-connected layers with hand-written reverse-mode gradients.
//
// Forward passes are const and return a tape holding whatever the backward
// pass needs, so a network can be evaluated concurrently from several threads
// while its parameters are not being mutated.

#pragma once

#include <vector>

#include "evae/rng.hpp"
#include "evae/tensor.hpp"

namespace evae {

struct DenseLayer {
  Matrix W;  // out x in
  RowVector b;  // out

  DenseLayer() = default;
  DenseLayer(Eigen::Index in, Eigen::Index out) : W(Matrix::Zero(out, in)), b(RowVector::Zero(out)) {}

  Eigen::Index in_dim() const { return W.cols(); }
  Eigen::Index out_dim() const { return W.rows(); }
  Eigen::Index param_count() const { return W.size() + b.size(); }
};

// y = x W^T + b, row-wise.
Matrix dense_forward(const DenseLayer& layer, const Matrix& x);

// Accumulates dW, db into `grad` (same shapes as `layer`) and returns dL/dx.
// Pass want_input_grad = false to skip the dx product.
Matrix dense_backward(const DenseLayer& layer, const Matrix& x, const Matrix& dy, DenseLayer& grad,
                      bool want_input_grad = true);

// Glorot/Xavier uniform: W ~ U(-a, a), a = sqrt(6 / (fan_in + fan_out)); b = 0.
DenseLayer glorot_init(Rng& rng, Eigen::Index fan_in, Eigen::Index fan_out);

struct MlpTape {
  std::vector<Matrix> inputs;  // input to each layer
  std::vector<Matrix> pre;     // pre-activation of each layer
  bool empty() const { return inputs.empty(); }
};

// ReLU between layers. The last layer is linear unless relu_output is set,
// which is how encoder/decoder trunks (whose outputs feed linear heads) are
// expressed.
struct Mlp {
  std::vector<DenseLayer> layers;
  bool relu_output = false;

  Mlp() = default;
  explicit Mlp(std::vector<DenseLayer> ls, bool relu_out = false) : layers(std::move(ls)), relu_output(relu_out) {}

  // Widths [w0, w1, ..., wL] give L layers w_{i} -> w_{i+1}.
  static Mlp glorot(Rng& rng, const std::vector<Eigen::Index>& widths, bool relu_out = false);
  static Mlp zeros(const std::vector<Eigen::Index>& widths, bool relu_out = false);

  std::size_t depth() const { return layers.size(); }
  Eigen::Index in_dim() const { return layers.front().in_dim(); }
  Eigen::Index out_dim() const { return layers.back().out_dim(); }
  Eigen::Index param_count() const;

  // Throws DimensionError if consecutive layers do not chain.
  void validate() const;
};

Matrix mlp_forward(const Mlp& net, const Matrix& x, MlpTape* tape = nullptr);

// Accumulates parameter gradients into `grad` (shaped like `net`) and returns
// dL/dx. Throws StateError when the tape was never filled by a forward pass.
Matrix mlp_backward(const Mlp& net, const MlpTape& tape, const Matrix& dy, Mlp& grad,
                    bool want_input_grad = true);

}  // namespace evae
