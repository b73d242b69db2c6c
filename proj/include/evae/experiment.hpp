// SPDX-License-Identifier: Apache-2.0
//
// Config-driven experiment runner behind the `evae` command line tool.
//
// An experiment file is one JSON object:
//
//   {
//     "model":  { ModelConfig fields },
//     "train":  { TrainConfig fields },
//     "data":   { "source": "idx" | "mnist" | "synthetic", ... },
//     "eval":   { "split": "test", "max_examples": 0,
//                 "metrics": [ {"metric": "elbo", ...}, ... ] },
//     "output_dir": "runs/example"
//   }
//
// Unknown keys anywhere are rejected. Relative paths are resolved against the
// directory holding the config file. All randomness derives from train.seed
// through child streams of Rng(seed): "init" for parameters, "binarize" for
// stochastic binarization, "eval" then the metric index, and "sample".

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "evae/checkpoint.hpp"
#include "evae/data.hpp"
#include "evae/eval.hpp"
#include "evae/model.hpp"
#include "evae/training.hpp"

namespace evae {

enum class DataSource { idx, mnist, synthetic };
enum class BinarizeSetting { none, threshold, stochastic };

struct DataConfig {
  DataSource source = DataSource::idx;
  // idx: one image file split consecutively into train/valid/test.
  // mnist: `images`/`labels` is the 60000-row training file, `test_*` the
  // 10000-row test file; the standard 50000/10000/10000 split is used.
  std::filesystem::path images;
  std::filesystem::path labels;
  std::filesystem::path test_images;
  std::filesystem::path test_labels;
  // idx and synthetic: n_train = 0 takes every row not used by valid/test.
  int n_train = 0;
  int n_valid = 0;
  int n_test = 0;
  BinarizeSetting binarize = BinarizeSetting::none;
  SyntheticSpec synthetic;
};

struct MetricSpec {
  std::string metric;  // elbo | iwll | parzen | activity
  int n_mc = 1;        // elbo
  int k = 5000;        // iwll
  int n_samples = kParzenSamples;
  std::vector<double> sigma_grid = default_sigma_grid();  // parzen
};

struct EvalConfig {
  std::string split = "test";  // train | valid | test
  int max_examples = 0;        // 0 = all rows of the split
  std::vector<MetricSpec> metrics;
};

struct ExperimentConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  EvalConfig eval;
  std::filesystem::path output_dir = "out";
};

void to_json(nlohmann::json& j, const DataConfig& c);
void to_json(nlohmann::json& j, const MetricSpec& c);
void to_json(nlohmann::json& j, const EvalConfig& c);
void to_json(nlohmann::json& j, const ExperimentConfig& c);

// Strict parse. `base_dir` resolves relative paths. Throws ConfigError naming
// the offending keys.
ExperimentConfig parse_experiment(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
ExperimentConfig load_experiment(const std::filesystem::path& path);

// Every default materialized: model resolved, paths absolute, full metric
// parameters.
nlohmann::json resolved_snapshot(const ExperimentConfig& c);

struct DataSplits {
  Dataset train;
  Dataset valid;
  Dataset test;
  const Dataset& by_name(const std::string& split) const;
};

// Throws ConfigError naming the key of a missing file.
DataSplits load_data(const DataConfig& c, std::uint64_t seed);

// ---- subcommands ----------------------------------------------------------------
//
// Each writes into `out_dir` (created if needed) and returns the paths written.

struct TrainOutputs {
  std::filesystem::path checkpoint;
  std::filesystem::path metrics_csv;
  std::filesystem::path resolved_config;
  TrainResult result;
};

TrainOutputs cmd_train(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);

// One JSON record per metric, also written as lines of eval.jsonl.
std::vector<nlohmann::json> cmd_eval(const ExperimentConfig& cfg, const Model& model,
                                     const std::filesystem::path& out_dir);
nlohmann::json eval_metric(const MetricSpec& spec, const Model& model, const DataSplits& data, const Matrix& X,
                           Rng& rng);

struct PgmImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major
};

constexpr int kGridPadding = 2;

// Cells of rows x cols pixels laid out row-major on a `grid_cols`-wide grid,
// kGridPadding zero pixels between neighbouring cells. Pixel = round(255 v)
// clamped to [0, 255].
PgmImage image_grid(const Matrix& images, int rows, int cols, int grid_cols);
std::vector<std::uint8_t> encode_pgm(const PgmImage& img);

// Image shape for an N-pixel model: a square if N is one, else 1 x N.
std::pair<int, int> default_image_shape(int obs_dim);

std::filesystem::path cmd_sample(const Model& model, std::uint64_t seed, int n, int grid_cols, int image_rows,
                                 int image_cols, const std::filesystem::path& out_dir);

struct DiagnoseOutputs {
  std::filesystem::path units_csv;
  std::filesystem::path summary_json;
  ActivityReport report;
  Correlation correlation;
};

DiagnoseOutputs cmd_diagnose(const ExperimentConfig& cfg, const Model& model, const std::filesystem::path& out_dir);

}  // namespace evae
