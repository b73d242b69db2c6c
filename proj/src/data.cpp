// SPDX-License-Identifier: Apache-2.0

#include "evae/data.hpp"

#include <cmath>
#include <fstream>
#include <iterator>

namespace evae {

namespace {

std::uint32_t read_be32(std::span<const std::uint8_t> b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

void write_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

void Dataset::validate() const {
  for (Eigen::Index i = 0; i < X.size(); ++i) {
    const double v = X.data()[i];
    if (!(v >= 0.0 && v <= 1.0)) {
      throw FormatError("dataset value " + std::to_string(v) + " at flat index " + std::to_string(i) +
                        " outside [0, 1]");
    }
  }
  if (!labels.empty() && static_cast<Eigen::Index>(labels.size()) != X.rows()) {
    throw FormatError("dataset has " + std::to_string(labels.size()) + " labels for " + std::to_string(X.rows()) +
                      " rows");
  }
}

Dataset Dataset::slice(Eigen::Index begin, Eigen::Index count) const {
  if (begin < 0 || count < 0 || begin + count > size()) throw IndexError("dataset slice out of range");
  Dataset d = *this;
  d.X = X.middleRows(begin, count);
  if (!labels.empty()) d.labels.assign(labels.begin() + begin, labels.begin() + begin + count);
  return d;
}

Dataset Dataset::rows(std::span<const Eigen::Index> idx) const {
  Dataset d = *this;
  d.X.resize(static_cast<Eigen::Index>(idx.size()), X.cols());
  d.labels.clear();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= size()) throw IndexError("dataset row index out of range");
    d.X.row(static_cast<Eigen::Index>(i)) = X.row(idx[i]);
    if (!labels.empty()) d.labels.push_back(labels[static_cast<std::size_t>(idx[i])]);
  }
  return d;
}

Matrix parse_idx_images(std::span<const std::uint8_t> bytes, int* rows_out, int* cols_out) {
  if (bytes.size() < 16) throw LengthError("IDX image file shorter than its 16-byte header");
  const std::uint32_t magic = read_be32(bytes, 0);
  if (magic != kIdxImageMagic) {
    throw FormatError("IDX image file has magic " + std::to_string(magic) + ", expected " +
                      std::to_string(kIdxImageMagic));
  }
  const std::uint64_t n = read_be32(bytes, 4), rows = read_be32(bytes, 8), cols = read_be32(bytes, 12);
  const std::uint64_t need = 16 + n * rows * cols;
  if (bytes.size() < need) {
    throw LengthError("IDX image file truncated: header declares " + std::to_string(need) + " bytes, got " +
                      std::to_string(bytes.size()));
  }
  Matrix X(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(rows * cols));
  const std::uint8_t* px = bytes.data() + 16;
  for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = static_cast<double>(px[i]) / 255.0;
  if (rows_out) *rows_out = static_cast<int>(rows);
  if (cols_out) *cols_out = static_cast<int>(cols);
  return X;
}

std::vector<int> parse_idx_labels(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8) throw LengthError("IDX label file shorter than its 8-byte header");
  const std::uint32_t magic = read_be32(bytes, 0);
  if (magic != kIdxLabelMagic) {
    throw FormatError("IDX label file has magic " + std::to_string(magic) + ", expected " +
                      std::to_string(kIdxLabelMagic));
  }
  const std::uint64_t n = read_be32(bytes, 4);
  if (bytes.size() < 8 + n) {
    throw LengthError("IDX label file truncated: header declares " + std::to_string(n) + " labels");
  }
  return {bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(n)};
}

Dataset load_mnist_idx(const std::filesystem::path& image_path, const std::filesystem::path& label_path) {
  Dataset d;
  const auto img = read_file(image_path);
  d.X = parse_idx_images(img, &d.image_rows, &d.image_cols);
  if (!label_path.empty()) {
    d.labels = parse_idx_labels(read_file(label_path));
    if (static_cast<Eigen::Index>(d.labels.size()) != d.X.rows()) {
      throw FormatError("IDX label count " + std::to_string(d.labels.size()) + " != image count " +
                        std::to_string(d.X.rows()));
    }
  }
  d.provenance = "idx:" + image_path.filename().string();
  return d;
}

std::vector<std::uint8_t> encode_idx_images(const Dataset& d) {
  d.validate();
  const int rows = d.image_cols > 0 ? d.image_rows : 1;
  const int cols = d.image_cols > 0 ? d.image_cols : static_cast<int>(d.dim());
  if (static_cast<Eigen::Index>(rows) * cols != d.dim()) throw DimensionError("image shape does not match row width");
  std::vector<std::uint8_t> out;
  out.reserve(16 + static_cast<std::size_t>(d.X.size()));
  write_be32(out, kIdxImageMagic);
  write_be32(out, static_cast<std::uint32_t>(d.size()));
  write_be32(out, static_cast<std::uint32_t>(rows));
  write_be32(out, static_cast<std::uint32_t>(cols));
  for (Eigen::Index i = 0; i < d.X.size(); ++i) {
    out.push_back(static_cast<std::uint8_t>(std::lround(255.0 * d.X.data()[i])));
  }
  return out;
}

std::vector<std::uint8_t> encode_idx_labels(const std::vector<int>& labels) {
  std::vector<std::uint8_t> out;
  write_be32(out, kIdxLabelMagic);
  write_be32(out, static_cast<std::uint32_t>(labels.size()));
  for (int l : labels) {
    if (l < 0 || l > 255) throw FormatError("IDX labels must fit in one byte");
    out.push_back(static_cast<std::uint8_t>(l));
  }
  return out;
}

void write_mnist_idx(const Dataset& d, const std::filesystem::path& image_path,
                     const std::filesystem::path& label_path) {
  write_file(image_path, encode_idx_images(d));
  if (!label_path.empty()) write_file(label_path, encode_idx_labels(d.labels));
}

StandardSplits split_standard(const Dataset& train_file, const Dataset& test_file) {
  if (train_file.size() != kMnistTrainFileSize || test_file.size() != kMnistTestFileSize) {
    throw ConfigError("split_standard expects 60000 training-file and 10000 test-file rows, got " +
                      std::to_string(train_file.size()) + " and " + std::to_string(test_file.size()));
  }
  StandardSplits s;
  const Eigen::Index n_train = kMnistTrainFileSize - kMnistValidSize;
  s.train = train_file.slice(0, n_train);
  s.valid = train_file.slice(n_train, kMnistValidSize);
  s.test = test_file;
  s.train.split = "train";
  s.valid.split = "valid";
  s.test.split = "test";
  return s;
}

Dataset binarize(const Dataset& d, BinarizeMode mode, Rng& rng) {
  d.validate();
  Dataset out = d;
  double* p = out.X.data();
  for (Eigen::Index i = 0; i < out.X.size(); ++i) {
    p[i] = mode == BinarizeMode::threshold ? (p[i] >= 0.5 ? 1.0 : 0.0) : (rng.uniform() < p[i] ? 1.0 : 0.0);
  }
  out.provenance += mode == BinarizeMode::threshold ? "+binarized(threshold)" : "+binarized(stochastic)";
  return out;
}

Dataset synthetic_subspace_dataset(const SyntheticSpec& spec) {
  if (spec.n_clusters < 1) throw ConfigError("synthetic: n_clusters must be >= 1");
  if (spec.intrinsic_dim < 1 || spec.intrinsic_dim >= spec.ambient_dim) {
    throw ConfigError("synthetic: need 1 <= intrinsic_dim < ambient_dim");
  }
  if (spec.per_cluster < 1) throw ConfigError("synthetic: per_cluster must be >= 1");
  if (!(spec.noise >= 0.0)) throw ConfigError("synthetic: noise must be >= 0");

  Rng rng(spec.seed);
  const int N = spec.ambient_dim, k = spec.intrinsic_dim, C = spec.n_clusters, P = spec.per_cluster;
  Dataset d;
  d.X.resize(static_cast<Eigen::Index>(C) * P, N);
  d.labels.resize(static_cast<std::size_t>(C) * P);
  d.image_rows = 1;
  d.image_cols = N;
  d.provenance = "synthetic_subspace(C=" + std::to_string(C) + ",N=" + std::to_string(N) + ",k=" +
                 std::to_string(k) + ",seed=" + std::to_string(spec.seed) + ")";
  for (int c = 0; c < C; ++c) {
    RowVector center(N);
    for (int i = 0; i < N; ++i) center(i) = rng.uniform(-spec.center_range, spec.center_range);
    const Matrix gauss = rng.normal_matrix(N, k);
    const Matrix frame = Eigen::HouseholderQR<Matrix>(gauss).householderQ() * Matrix::Identity(N, k);
    for (int j = 0; j < P; ++j) {
      Vector coef(k);
      for (int t = 0; t < k; ++t) coef(t) = rng.normal();
      RowVector v = center + (frame * coef).transpose();
      if (spec.noise > 0.0) {
        for (int i = 0; i < N; ++i) v(i) += spec.noise * rng.normal();
      }
      const Eigen::Index row = static_cast<Eigen::Index>(j) * C + c;
      d.X.row(row) = (0.5 + kSyntheticScale * v.array()).cwiseMax(0.0).cwiseMin(1.0).matrix();
      d.labels[static_cast<std::size_t>(row)] = c;
    }
  }
  return d;
}

}  // namespace evae
