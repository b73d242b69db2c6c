// SPDX-License-Identifier: Apache-2.0

#include "evae/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <limits>
#include <queue>
#include <set>

#include "evae/errors.hpp"
#include "evae/eval.hpp"

namespace evae {

void TrainConfig::validate(int num_epitomes) const {
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (batch_size < num_epitomes) {
    throw ConfigError("train.batch_size (" + std::to_string(batch_size) + ") must be >= number of epitomes (" +
                      std::to_string(num_epitomes) + ")");
  }
  if (!(base_lr > 0.0)) throw ConfigError("train.base_lr must be > 0");
  if (probe_size < 1) throw ConfigError("train.probe_size must be >= 1");
  if (checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be >= 0");
  if (!(max_skip_fraction >= 0.0 && max_skip_fraction <= 1.0)) {
    throw ConfigError("train.max_skip_fraction must be in [0, 1]");
  }
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"base_lr", c.base_lr},
                     {"schedule", c.schedule == LrSchedule::flat ? "flat" : "staged8"},
                     {"seed", c.seed},
                     {"assign_at_mean", c.assign_at_mean},
                     {"probe_size", c.probe_size},
                     {"checkpoint_every", c.checkpoint_every},
                     {"max_skip_fraction", c.max_skip_fraction},
                     {"record_wall_time", c.record_wall_time}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  static const std::set<std::string> known = {"epochs",     "batch_size",       "base_lr",
                                              "schedule",   "seed",             "assign_at_mean",
                                              "probe_size", "checkpoint_every", "max_skip_fraction",
                                              "record_wall_time"};
  if (!j.is_object()) throw ConfigError("train: expected an object");
  std::string unknown;
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) unknown += (unknown.empty() ? "" : ", ") + ("train." + k);
  }
  if (!unknown.empty()) throw ConfigError("unknown keys: " + unknown);
  const TrainConfig d;
  c = d;
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.base_lr = j.value("base_lr", d.base_lr);
  if (j.contains("schedule")) {
    const auto s = j.at("schedule").get<std::string>();
    if (s == "flat") c.schedule = LrSchedule::flat;
    else if (s == "staged8") c.schedule = LrSchedule::staged8;
    else throw ConfigError("train.schedule must be 'flat' or 'staged8', got '" + s + "'");
  }
  c.seed = j.value("seed", d.seed);
  c.assign_at_mean = j.value("assign_at_mean", d.assign_at_mean);
  c.probe_size = j.value("probe_size", d.probe_size);
  c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
  c.max_skip_fraction = j.value("max_skip_fraction", d.max_skip_fraction);
  c.record_wall_time = j.value("record_wall_time", d.record_wall_time);
}

AssignmentTable make_assignment(std::vector<int> y, int num_epitomes) {
  AssignmentTable t;
  t.counts.assign(static_cast<std::size_t>(num_epitomes), 0);
  for (int v : y) {
    if (v < 0 || v >= num_epitomes) throw IndexError("assignment index " + std::to_string(v) + " out of range");
    ++t.counts[static_cast<std::size_t>(v)];
  }
  t.y = std::move(y);
  return t;
}

AssignmentTable assign_epitomes(const Model& model, const Matrix& X, Rng& rng, bool at_mean) {
  const int M = model.num_epitomes();
  if (M == 1) return make_assignment(std::vector<int>(static_cast<std::size_t>(X.rows()), 0), 1);
  constexpr Eigen::Index chunk = 500;
  std::vector<int> y;
  y.reserve(static_cast<std::size_t>(X.rows()));
  for (Eigen::Index b = 0; b < X.rows(); b += chunk) {
    const Eigen::Index m = std::min(chunk, X.rows() - b);
    const Matrix eps = at_mean ? Matrix::Zero(m, model.config.latent_dim) : rng.normal_matrix(m, model.config.latent_dim);
    const auto part = evae_select_y(model, X.middleRows(b, m), eps);
    y.insert(y.end(), part.begin(), part.end());
  }
  return make_assignment(std::move(y), M);
}

namespace {

// Dinic max-flow on a small dense graph.
class MaxFlow {
 public:
  explicit MaxFlow(int n) : adj_(static_cast<std::size_t>(n)), level_(static_cast<std::size_t>(n)), it_(static_cast<std::size_t>(n)) {}

  int add_edge(int u, int v, std::int64_t cap) {
    adj_[static_cast<std::size_t>(u)].push_back({v, cap, static_cast<int>(adj_[static_cast<std::size_t>(v)].size())});
    adj_[static_cast<std::size_t>(v)].push_back({u, 0, static_cast<int>(adj_[static_cast<std::size_t>(u)].size()) - 1});
    return static_cast<int>(adj_[static_cast<std::size_t>(u)].size()) - 1;
  }

  std::int64_t run(int s, int t) {
    std::int64_t flow = 0;
    while (bfs(s, t)) {
      std::fill(it_.begin(), it_.end(), 0);
      while (std::int64_t f = dfs(s, t, std::numeric_limits<std::int64_t>::max())) flow += f;
    }
    return flow;
  }

  std::int64_t residual(int u, int edge) const { return adj_[static_cast<std::size_t>(u)][static_cast<std::size_t>(edge)].cap; }

 private:
  struct Edge {
    int to;
    std::int64_t cap;
    int rev;
  };

  bool bfs(int s, int t) {
    std::fill(level_.begin(), level_.end(), -1);
    std::queue<int> q;
    level_[static_cast<std::size_t>(s)] = 0;
    q.push(s);
    while (!q.empty()) {
      const int u = q.front();
      q.pop();
      for (const auto& e : adj_[static_cast<std::size_t>(u)]) {
        if (e.cap > 0 && level_[static_cast<std::size_t>(e.to)] < 0) {
          level_[static_cast<std::size_t>(e.to)] = level_[static_cast<std::size_t>(u)] + 1;
          q.push(e.to);
        }
      }
    }
    return level_[static_cast<std::size_t>(t)] >= 0;
  }

  std::int64_t dfs(int u, int t, std::int64_t f) {
    if (u == t) return f;
    auto& edges = adj_[static_cast<std::size_t>(u)];
    for (int& i = it_[static_cast<std::size_t>(u)]; i < static_cast<int>(edges.size()); ++i) {
      Edge& e = edges[static_cast<std::size_t>(i)];
      if (e.cap <= 0 || level_[static_cast<std::size_t>(e.to)] != level_[static_cast<std::size_t>(u)] + 1) continue;
      if (std::int64_t d = dfs(e.to, t, std::min(f, e.cap)); d > 0) {
        e.cap -= d;
        adj_[static_cast<std::size_t>(e.to)][static_cast<std::size_t>(e.rev)].cap += d;
        return d;
      }
    }
    return 0;
  }

  std::vector<std::vector<Edge>> adj_;
  std::vector<int> level_;
  std::vector<int> it_;
};

}  // namespace

std::vector<std::vector<int>> epitome_quotas(const std::vector<int>& counts, int batch_size) {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  std::int64_t n = 0;
  for (int c : counts) {
    if (c < 0) throw ConfigError("epitome counts must be >= 0");
    n += c;
  }
  if (n == 0) return {};
  const int M = static_cast<int>(counts.size());
  const int nb = static_cast<int>((n + batch_size - 1) / batch_size);
  std::vector<std::int64_t> size(static_cast<std::size_t>(nb), batch_size);
  size.back() = n - static_cast<std::int64_t>(nb - 1) * batch_size;

  std::vector<std::vector<int>> quota(static_cast<std::size_t>(nb), std::vector<int>(static_cast<std::size_t>(M)));
  std::vector<std::int64_t> row_def(static_cast<std::size_t>(nb)), col_def(counts.begin(), counts.end());
  for (int b = 0; b < nb; ++b) {
    row_def[static_cast<std::size_t>(b)] = size[static_cast<std::size_t>(b)];
    for (int j = 0; j < M; ++j) {
      const std::int64_t f = size[static_cast<std::size_t>(b)] * counts[static_cast<std::size_t>(j)] / n;
      quota[static_cast<std::size_t>(b)][static_cast<std::size_t>(j)] = static_cast<int>(f);
      row_def[static_cast<std::size_t>(b)] -= f;
      col_def[static_cast<std::size_t>(j)] -= f;
    }
  }

  // source -> batch (deficit) -> epitome (1 per fractional cell) -> sink (deficit)
  const int src = nb + M, sink = nb + M + 1;
  MaxFlow g(nb + M + 2);
  std::vector<std::vector<std::pair<int, int>>> cell_edges(static_cast<std::size_t>(nb));
  std::int64_t need = 0;
  for (int b = 0; b < nb; ++b) {
    g.add_edge(src, b, row_def[static_cast<std::size_t>(b)]);
    need += row_def[static_cast<std::size_t>(b)];
    for (int j = 0; j < M; ++j) {
      if ((size[static_cast<std::size_t>(b)] * counts[static_cast<std::size_t>(j)]) % n != 0) {
        cell_edges[static_cast<std::size_t>(b)].emplace_back(j, g.add_edge(b, nb + j, 1));
      }
    }
  }
  for (int j = 0; j < M; ++j) g.add_edge(nb + j, sink, col_def[static_cast<std::size_t>(j)]);
  if (g.run(src, sink) != need) throw StateError("epitome_quotas: no feasible rounding (internal error)");
  for (int b = 0; b < nb; ++b) {
    for (const auto& [j, e] : cell_edges[static_cast<std::size_t>(b)]) {
      if (g.residual(b, e) == 0) ++quota[static_cast<std::size_t>(b)][static_cast<std::size_t>(j)];
    }
  }
  return quota;
}

std::vector<std::vector<Eigen::Index>> balanced_partition(const AssignmentTable& table, int batch_size, Rng& rng) {
  const int M = static_cast<int>(table.counts.size());
  if (batch_size < M) throw ConfigError("balanced_partition: batch_size must be >= number of epitomes");
  std::vector<std::vector<Eigen::Index>> strata(static_cast<std::size_t>(M));
  for (std::size_t i = 0; i < table.y.size(); ++i) {
    strata[static_cast<std::size_t>(table.y[i])].push_back(static_cast<Eigen::Index>(i));
  }
  for (int j = 0; j < M; ++j) {
    if (static_cast<int>(strata[static_cast<std::size_t>(j)].size()) != table.counts[static_cast<std::size_t>(j)]) {
      throw StateError("balanced_partition: counts do not match assignments");
    }
    shuffle(strata[static_cast<std::size_t>(j)].begin(), strata[static_cast<std::size_t>(j)].end(), rng);
  }
  const auto quota = epitome_quotas(table.counts, batch_size);
  std::vector<std::size_t> cursor(static_cast<std::size_t>(M), 0);
  std::vector<std::vector<Eigen::Index>> batches;
  for (const auto& q : quota) {
    std::vector<Eigen::Index> batch;
    for (int j = 0; j < M; ++j) {
      auto& s = strata[static_cast<std::size_t>(j)];
      auto& c = cursor[static_cast<std::size_t>(j)];
      for (int k = 0; k < q[static_cast<std::size_t>(j)]; ++k) batch.push_back(s[c++]);
    }
    shuffle(batch.begin(), batch.end(), rng);
    batches.push_back(std::move(batch));
  }
  shuffle(batches.begin(), batches.end(), rng);
  return batches;
}

StageLr staged_lr_schedule(int stage) {
  if (stage < 0 || stage > 7) throw IndexError("learning-rate stage " + std::to_string(stage) + " outside [0, 7]");
  int epochs = 1;
  for (int i = 0; i < stage; ++i) epochs *= 3;
  return {0.001 * std::pow(10.0, -static_cast<double>(stage) / 7.0), epochs};
}

double learning_rate_for_epoch(const TrainConfig& cfg, int epoch) {
  if (cfg.schedule == LrSchedule::flat) return cfg.base_lr;
  int start = 0;
  for (int i = 0; i < 8; ++i) {
    const StageLr s = staged_lr_schedule(i);
    if (epoch < start + s.epochs) return cfg.base_lr / 0.001 * s.lr;
    start += s.epochs;
  }
  return cfg.base_lr / 0.001 * staged_lr_schedule(7).lr;
}

namespace {

Matrix gather(const Matrix& X, const std::vector<Eigen::Index>& idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), X.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = X.row(idx[i]);
  return out;
}

void zero(ParamSpans& spans) {
  for (auto& s : spans) std::fill(s.begin(), s.end(), 0.0);
}

}  // namespace

TrainResult train(Model model, const Matrix& X, const TrainConfig& cfg, const Matrix& probe_in,
                  const EpochCallback& on_epoch) {
  const auto& mc = model.config;
  const int M = model.num_epitomes();
  if (cfg.epochs < 0) throw ConfigError("train: epochs must be >= 0");
  if (cfg.epochs > 0) cfg.validate(M);
  require_shape(X, -1, mc.obs_dim, "training data");
  if (X.rows() == 0) throw ConfigError("train: empty dataset");

  const Matrix probe = probe_in.size() > 0 ? probe_in : Matrix(X.topRows(std::min<Eigen::Index>(cfg.probe_size, X.rows())));
  const Rng base(cfg.seed);
  const Rng assign_root = base.split("assign"), part_root = base.split("partition"), step_root = base.split("step");

  TrainResult result;
  Model grad = model.zeros_like();
  ParamSpans grad_spans = grad.params();
  AdamState adam;
  const bool dropout = mc.variant == Variant::dropout_vae && mc.dropout_rate > 0.0;

  for (int e = 0; e < cfg.epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng assign_rng = assign_root.split(static_cast<std::uint64_t>(e));
    Rng part_rng = part_root.split(static_cast<std::uint64_t>(e));
    Rng step_rng = step_root.split(static_cast<std::uint64_t>(e));
    const double lr = learning_rate_for_epoch(cfg, e);

    const AssignmentTable table = mc.has_epitomes() ? assign_epitomes(model, X, assign_rng, cfg.assign_at_mean)
                                                    : make_assignment(std::vector<int>(static_cast<std::size_t>(X.rows()), 0), 1);
    const auto batches = balanced_partition(table, cfg.batch_size, part_rng);

    EpochMetrics m;
    m.epoch = e + 1;
    m.lr = lr;
    m.epitome_counts = table.counts;
    double sum_total = 0.0, sum_recon = 0.0, sum_kl = 0.0;
    Eigen::Index seen = 0;
    for (const auto& idx : batches) {
      const Matrix x = gather(X, idx);
      std::vector<int> ys;
      ys.reserve(idx.size());
      for (auto i : idx) ys.push_back(table.y[static_cast<std::size_t>(i)]);
      const Matrix eps = step_rng.normal_matrix(x.rows(), mc.latent_dim);
      Matrix keep;
      if (dropout) keep = dropout_multiplier(x.rows(), mc.latent_dim, mc.dropout_rate, step_rng);

      zero(grad_spans);
      const BatchLoss l = batch_loss(model, x, ys, eps, dropout ? &keep : nullptr, {mc.kl_weight, true}, &grad,
                                     1.0 / static_cast<double>(x.rows()));
      const double total = l.total.sum();
      if (!std::isfinite(total)) {
        ++m.skipped_steps;
        std::cerr << "epoch " << m.epoch << ": non-finite loss, step skipped\n";
        continue;
      }
      const AdamStepResult r = adam_step(model.params(), grad_spans, adam, lr);
      if (!r.applied) {
        ++m.skipped_steps;
        std::cerr << "epoch " << m.epoch << ": " << r.diagnostic << ", step skipped\n";
        continue;
      }
      sum_total += total;
      sum_recon += l.recon.sum();
      sum_kl += l.kl_z.sum();
      seen += x.rows();
      m.kl_y = l.kl_y;
    }
    if (static_cast<double>(m.skipped_steps) > cfg.max_skip_fraction * static_cast<double>(batches.size())) {
      throw TrainingAborted("epoch " + std::to_string(m.epoch) + ": " + std::to_string(m.skipped_steps) + " of " +
                            std::to_string(batches.size()) + " steps skipped");
    }
    if (seen > 0) {
      m.mean_total = sum_total / static_cast<double>(seen);
      m.mean_recon = sum_recon / static_cast<double>(seen);
      m.mean_kl_z = sum_kl / static_cast<double>(seen);
    }
    m.active_units = unit_activity(model, probe).active_count;
    m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.metrics.push_back(m);
    if (on_epoch) on_epoch(model, m);
  }
  result.model = std::move(model);
  return result;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string metrics_csv_header() { return "epoch,mean_total,mean_recon,mean_kl_z,kl_y,active_units,wall_seconds"; }

std::string metrics_csv_row(const EpochMetrics& m, bool with_wall_time) {
  return std::to_string(m.epoch) + "," + fmt(m.mean_total) + "," + fmt(m.mean_recon) + "," + fmt(m.mean_kl_z) + "," +
         fmt(m.kl_y) + "," + std::to_string(m.active_units) + "," + (with_wall_time ? fmt(m.wall_seconds) : "");
}

}  // namespace evae
