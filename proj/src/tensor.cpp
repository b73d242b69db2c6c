// SPDX-License-Identifier: Apache-2.0

#include "evae/tensor.hpp"

#include <cmath>
#include <cstring>
#include <functional>
#include <limits>
#include <numeric>

#include "evae/errors.hpp"

namespace evae {

Tensor::Tensor(std::vector<std::size_t> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
  const std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  if (n != data.size()) {
    throw DimensionError("tensor shape product " + std::to_string(n) + " != data length " +
                         std::to_string(data.size()));
  }
}

bool Tensor::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor Tensor::from_matrix(const Matrix& m) {
  Tensor t;
  t.shape = {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())};
  t.data.assign(m.data(), m.data() + m.size());
  return t;
}

Matrix Tensor::to_matrix() const {
  Eigen::Index rows = 0, cols = 0;
  if (shape.size() == 1) {
    rows = 1;
    cols = static_cast<Eigen::Index>(shape[0]);
  } else if (shape.size() == 2) {
    rows = static_cast<Eigen::Index>(shape[0]);
    cols = static_cast<Eigen::Index>(shape[1]);
  } else {
    throw DimensionError("to_matrix: rank " + std::to_string(shape.size()) + " tensor");
  }
  Matrix m(rows, cols);
  std::copy(data.begin(), data.end(), m.data());
  return m;
}

bool operator==(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape || a.data.size() != b.data.size()) return false;
  // Bitwise, so that NaN payloads and signed zeros compare as stored.
  return std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0;
}

std::string shape_string(const Matrix& m) {
  return "[" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + "]";
}

void require_shape(const Matrix& m, Eigen::Index rows, Eigen::Index cols, const char* what) {
  if ((rows >= 0 && m.rows() != rows) || (cols >= 0 && m.cols() != cols)) {
    throw DimensionError(std::string(what) + ": got " + shape_string(m) + ", expected [" +
                         (rows >= 0 ? std::to_string(rows) : "*") + "x" +
                         (cols >= 0 ? std::to_string(cols) : "*") + "]");
  }
}

Matrix relu(const Matrix& x) { return x.cwiseMax(0.0); }

double logsumexp(const Eigen::Ref<const Vector>& v) {
  if (v.size() == 0) return -std::numeric_limits<double>::infinity();
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

Vector logsumexp_rows(const Matrix& x) {
  Vector out(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) out(i) = logsumexp(x.row(i).transpose());
  return out;
}

}  // namespace evae
