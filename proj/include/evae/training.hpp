// SPDX-License-Identifier: Apache-2.0
//
// Epoch loop with per-epoch epitome assignment and assignment-balanced
// minibatches.
//
// Randomness for epoch e is drawn from child streams of Rng(seed):
//   split("assign").split(e)     noise for the assignment pass
//   split("partition").split(e)  stratum and batch shuffles
//   split("step").split(e)       per-minibatch noise and dropout, in batch order

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "evae/data.hpp"
#include "evae/model.hpp"
#include "evae/optim.hpp"

namespace evae {

enum class LrSchedule { flat, staged8 };

struct TrainConfig {
  int epochs = 1;
  int batch_size = 100;
  double base_lr = 0.001;
  LrSchedule schedule = LrSchedule::flat;
  std::uint64_t seed = 0;
  bool assign_at_mean = false;  // assignment with eps = 0 instead of a shared noise draw
  int probe_size = 1000;        // validation rows used for per-epoch active-unit counts
  int checkpoint_every = 0;     // 0 = only the final checkpoint
  double max_skip_fraction = 0.01;
  bool record_wall_time = false;

  void validate(int num_epitomes) const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct AssignmentTable {
  std::vector<int> y;       // per example, in [0, M)
  std::vector<int> counts;  // per epitome
};

// Assigns every row to its argmin epitome; noise is one row-major
// n x D draw from rng (or zero when at_mean). Rows are evaluated in chunks.
AssignmentTable assign_epitomes(const Model& model, const Matrix& X, Rng& rng, bool at_mean = false);

// Builds an assignment table from explicit indices.
AssignmentTable make_assignment(std::vector<int> y, int num_epitomes);

// Per-batch epitome quotas: batches of batch_size (last one shorter), each
// quota the floor or ceiling of size_b * count_j / n, row and column sums
// exact. Solved as a bipartite flow over the fractional cells.
std::vector<std::vector<int>> epitome_quotas(const std::vector<int>& counts, int batch_size);

// Shuffles each stratum, fills batches according to epitome_quotas, then
// shuffles within and across batches. Every index appears exactly once.
std::vector<std::vector<Eigen::Index>> balanced_partition(const AssignmentTable& table, int batch_size, Rng& rng);

struct StageLr {
  double lr;
  int epochs;
};

// Stage i in [0, 7]: lr = 0.001 * 10^(-i/7) for 3^i epochs.
StageLr staged_lr_schedule(int stage);
constexpr int kStagedTotalEpochs = 3280;
// Learning rate for (0-based) epoch e under `schedule`.
double learning_rate_for_epoch(const TrainConfig& cfg, int epoch);

struct EpochMetrics {
  int epoch = 0;  // 1-based
  double mean_total = 0.0;
  double mean_recon = 0.0;
  double mean_kl_z = 0.0;
  double kl_y = 0.0;
  int active_units = 0;
  double wall_seconds = 0.0;
  double lr = 0.0;
  int skipped_steps = 0;
  std::vector<int> epitome_counts;
};

// Thrown when more than max_skip_fraction of an epoch's steps were rejected.
struct TrainingAborted : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  Model model;
  std::vector<EpochMetrics> metrics;
};

using EpochCallback = std::function<void(const Model&, const EpochMetrics&)>;

// `probe` supplies the rows for per-epoch activity; when empty, the first
// probe_size training rows are used.
TrainResult train(Model model, const Matrix& X, const TrainConfig& cfg, const Matrix& probe = {},
                  const EpochCallback& on_epoch = {});

std::string metrics_csv_header();
std::string metrics_csv_row(const EpochMetrics& m, bool with_wall_time);

}  // namespace evae
