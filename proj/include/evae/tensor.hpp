// SPDX-License-Identifier: Apache-2.0
//
// Dense numeric storage. All batch data is row-major and batch-first: a batch
// of B vectors of width W is a B x W Matrix, one example per row.

#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <string>
#include <vector>

namespace evae {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using Vector = Eigen::VectorXd;

// Shape-tagged flat buffer used at serialization boundaries.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  std::size_t size() const { return data.size(); }
  bool all_finite() const;

  static Tensor from_matrix(const Matrix& m);
  // Rank-1 tensors become a single row.
  Matrix to_matrix() const;
};

bool operator==(const Tensor& a, const Tensor& b);

std::string shape_string(const Matrix& m);

// Throws DimensionError when m is not rows x cols. A negative extent is not checked.
void require_shape(const Matrix& m, Eigen::Index rows, Eigen::Index cols, const char* what);

Matrix relu(const Matrix& x);

// Row-wise log(sum(exp(.))) with max-offset.
Vector logsumexp_rows(const Matrix& x);
double logsumexp(const Eigen::Ref<const Vector>& v);

}  // namespace evae
