// SPDX-License-Identifier: Apache-2.0
//
// Datasets: MNIST IDX files, standard splits, binarization and a synthetic
// union-of-subspaces generator.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "evae/errors.hpp"
#include "evae/rng.hpp"
#include "evae/tensor.hpp"

namespace evae {

// File shorter than its header declares.
struct LengthError : FormatError {
  using FormatError::FormatError;
};

struct Dataset {
  Matrix X;                 // n x N, values in [0, 1]
  std::vector<int> labels;  // empty or n entries
  int image_rows = 1;
  int image_cols = 0;
  std::string split;        // "train", "valid", "test" or ""
  std::string provenance;

  Eigen::Index size() const { return X.rows(); }
  Eigen::Index dim() const { return X.cols(); }

  // Throws FormatError on values outside [0, 1], non-finite values or label count mismatch.
  void validate() const;
  Dataset slice(Eigen::Index begin, Eigen::Index count) const;
  Dataset rows(std::span<const Eigen::Index> idx) const;
};

constexpr std::uint32_t kIdxImageMagic = 2051;
constexpr std::uint32_t kIdxLabelMagic = 2049;

// Big-endian IDX parsing from memory. Pixels are divided by 255.
Matrix parse_idx_images(std::span<const std::uint8_t> bytes, int* rows = nullptr, int* cols = nullptr);
std::vector<int> parse_idx_labels(std::span<const std::uint8_t> bytes);

// label_path may be empty.
Dataset load_mnist_idx(const std::filesystem::path& image_path, const std::filesystem::path& label_path = {});

// Writes pixels as round(255 x); lossless for datasets whose values are k/255.
std::vector<std::uint8_t> encode_idx_images(const Dataset& d);
std::vector<std::uint8_t> encode_idx_labels(const std::vector<int>& labels);
void write_mnist_idx(const Dataset& d, const std::filesystem::path& image_path,
                     const std::filesystem::path& label_path = {});

struct StandardSplits {
  Dataset train;
  Dataset valid;
  Dataset test;
};

constexpr Eigen::Index kMnistTrainFileSize = 60000;
constexpr Eigen::Index kMnistTestFileSize = 10000;
constexpr Eigen::Index kMnistValidSize = 10000;

// First 50000 of the training file train, last 10000 valid, test file test.
// Throws ConfigError unless the inputs have 60000 and 10000 rows.
StandardSplits split_standard(const Dataset& train_file, const Dataset& test_file);

enum class BinarizeMode { threshold, stochastic };

// threshold: x >= 0.5 -> 1; stochastic: Bernoulli(x) per pixel, row-major draws.
Dataset binarize(const Dataset& d, BinarizeMode mode, Rng& rng);

struct SyntheticSpec {
  int n_clusters = 10;
  int ambient_dim = 64;     // N
  int intrinsic_dim = 2;    // k
  int per_cluster = 100;
  double noise = 0.01;
  double center_range = 2.0;
  std::uint64_t seed = 0;
};

// Data-space squashing applied to synthetic points: clamp(0.5 + v / 12, 0, 1).
constexpr double kSyntheticScale = 1.0 / 12.0;

// Per cluster c (in order): center ~ U(-r, r)^N, frame = Q of an N x k Gaussian
// (thin QR, orthonormal columns). Then sample j of cluster c is
//   center + frame * N(0, I_k) + noise * N(0, I_N)
// squashed to [0, 1]. Rows are interleaved (cluster = row mod n_clusters);
// labels carry the cluster index.
Dataset synthetic_subspace_dataset(const SyntheticSpec& spec);

}  // namespace evae
