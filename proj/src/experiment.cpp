// SPDX-License-Identifier: Apache-2.0

#include "evae/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>

#include "evae/errors.hpp"

namespace evae {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::string& prefix, const std::set<std::string>& known) {
  if (!j.is_object()) throw ConfigError(prefix + ": expected an object");
  std::string unknown;
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) unknown += (unknown.empty() ? "" : ", ") + (prefix + "." + k);
  }
  if (!unknown.empty()) throw ConfigError("unknown keys: " + unknown);
}

fs::path resolve(const fs::path& p, const fs::path& base) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

std::string source_name(DataSource s) {
  switch (s) {
    case DataSource::idx: return "idx";
    case DataSource::mnist: return "mnist";
    case DataSource::synthetic: return "synthetic";
  }
  return "?";
}

std::string binarize_name(BinarizeSetting b) {
  switch (b) {
    case BinarizeSetting::none: return "none";
    case BinarizeSetting::threshold: return "threshold";
    case BinarizeSetting::stochastic: return "stochastic";
  }
  return "?";
}

json synthetic_json(const SyntheticSpec& s) {
  return {{"n_clusters", s.n_clusters},   {"ambient_dim", s.ambient_dim}, {"intrinsic_dim", s.intrinsic_dim},
          {"per_cluster", s.per_cluster}, {"noise", s.noise},             {"center_range", s.center_range},
          {"seed", s.seed}};
}

SyntheticSpec parse_synthetic(const json& j) {
  reject_unknown(j, "data.synthetic",
                 {"n_clusters", "ambient_dim", "intrinsic_dim", "per_cluster", "noise", "center_range", "seed"});
  const SyntheticSpec d;
  SyntheticSpec s;
  s.n_clusters = j.value("n_clusters", d.n_clusters);
  s.ambient_dim = j.value("ambient_dim", d.ambient_dim);
  s.intrinsic_dim = j.value("intrinsic_dim", d.intrinsic_dim);
  s.per_cluster = j.value("per_cluster", d.per_cluster);
  s.noise = j.value("noise", d.noise);
  s.center_range = j.value("center_range", d.center_range);
  s.seed = j.value("seed", d.seed);
  return s;
}

DataConfig parse_data(const json& j, const fs::path& base) {
  reject_unknown(j, "data",
                 {"source", "images", "labels", "test_images", "test_labels", "n_train", "n_valid", "n_test",
                  "binarize", "synthetic"});
  DataConfig c;
  const std::string src = j.value("source", std::string("idx"));
  if (src == "idx") c.source = DataSource::idx;
  else if (src == "mnist") c.source = DataSource::mnist;
  else if (src == "synthetic") c.source = DataSource::synthetic;
  else throw ConfigError("data.source must be idx, mnist or synthetic, got '" + src + "'");
  const std::string bin = j.value("binarize", std::string("none"));
  if (bin == "none") c.binarize = BinarizeSetting::none;
  else if (bin == "threshold") c.binarize = BinarizeSetting::threshold;
  else if (bin == "stochastic") c.binarize = BinarizeSetting::stochastic;
  else throw ConfigError("data.binarize must be none, threshold or stochastic, got '" + bin + "'");
  c.images = resolve(j.value("images", std::string()), base);
  c.labels = resolve(j.value("labels", std::string()), base);
  c.test_images = resolve(j.value("test_images", std::string()), base);
  c.test_labels = resolve(j.value("test_labels", std::string()), base);
  c.n_train = j.value("n_train", 0);
  c.n_valid = j.value("n_valid", 0);
  c.n_test = j.value("n_test", 0);
  if (c.n_train < 0 || c.n_valid < 0 || c.n_test < 0) throw ConfigError("data.n_train/n_valid/n_test must be >= 0");
  if (j.contains("synthetic")) c.synthetic = parse_synthetic(j.at("synthetic"));
  if (c.source != DataSource::synthetic && c.images.empty()) throw ConfigError("data.images is required");
  if (c.source == DataSource::mnist && c.test_images.empty()) throw ConfigError("data.test_images is required");
  return c;
}

MetricSpec parse_metric(const json& j, std::size_t index) {
  const std::string prefix = "eval.metrics[" + std::to_string(index) + "]";
  if (!j.is_object() || !j.contains("metric")) throw ConfigError(prefix + ".metric is required");
  MetricSpec m;
  m.metric = j.at("metric").get<std::string>();
  if (m.metric == "elbo") {
    reject_unknown(j, prefix, {"metric", "n_mc"});
    m.n_mc = j.value("n_mc", m.n_mc);
    if (m.n_mc < 1) throw ConfigError(prefix + ".n_mc must be >= 1");
  } else if (m.metric == "iwll") {
    reject_unknown(j, prefix, {"metric", "k"});
    m.k = j.value("k", m.k);
    if (m.k < 1) throw ConfigError(prefix + ".k must be >= 1");
  } else if (m.metric == "parzen") {
    reject_unknown(j, prefix, {"metric", "n_samples", "sigma_grid"});
    m.n_samples = j.value("n_samples", m.n_samples);
    if (j.contains("sigma_grid")) m.sigma_grid = j.at("sigma_grid").get<std::vector<double>>();
    if (m.n_samples < 1) throw ConfigError(prefix + ".n_samples must be >= 1");
    if (m.sigma_grid.empty()) throw ConfigError(prefix + ".sigma_grid must not be empty");
  } else if (m.metric == "activity") {
    reject_unknown(j, prefix, {"metric"});
  } else {
    throw ConfigError("unknown metric '" + m.metric + "' at " + prefix + " (expected elbo, iwll, parzen, activity)");
  }
  return m;
}

EvalConfig parse_eval(const json& j) {
  reject_unknown(j, "eval", {"split", "max_examples", "metrics"});
  EvalConfig c;
  c.split = j.value("split", c.split);
  if (c.split != "train" && c.split != "valid" && c.split != "test") {
    throw ConfigError("eval.split must be train, valid or test, got '" + c.split + "'");
  }
  c.max_examples = j.value("max_examples", 0);
  if (c.max_examples < 0) throw ConfigError("eval.max_examples must be >= 0");
  if (j.contains("metrics")) {
    const auto& arr = j.at("metrics");
    if (!arr.is_array()) throw ConfigError("eval.metrics must be an array");
    for (std::size_t i = 0; i < arr.size(); ++i) c.metrics.push_back(parse_metric(arr[i], i));
  }
  return c;
}

Dataset take(const Dataset& d, Eigen::Index begin, Eigen::Index count, const std::string& split) {
  Dataset out = d.slice(begin, count);
  out.split = split;
  return out;
}

DataSplits consecutive_splits(const Dataset& all, const DataConfig& c) {
  const Eigen::Index n = all.size();
  const Eigen::Index held = static_cast<Eigen::Index>(c.n_valid) + c.n_test;
  const Eigen::Index n_train = c.n_train > 0 ? c.n_train : n - held;
  if (n_train < 1 || n_train + held > n) {
    throw ConfigError("data: n_train + n_valid + n_test = " + std::to_string(n_train + held) + " exceeds the " +
                      std::to_string(n) + " available rows");
  }
  DataSplits s;
  s.train = take(all, 0, n_train, "train");
  s.valid = take(all, n_train, c.n_valid, "valid");
  s.test = take(all, n_train + c.n_valid, c.n_test, "test");
  return s;
}

void require_file(const fs::path& p, const std::string& key) {
  if (!fs::exists(p)) throw ConfigError(key + ": file not found: " + p.string());
}

Dataset load_checked(const fs::path& images, const fs::path& labels, const std::string& key) {
  require_file(images, key + "images");
  if (!labels.empty()) require_file(labels, key + "labels");
  return load_mnist_idx(images, labels);
}

json vector_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + p.string());
}

Matrix eval_rows(const ExperimentConfig& cfg, const DataSplits& data) {
  const Dataset& d = data.by_name(cfg.eval.split);
  if (d.size() == 0) throw ConfigError("eval.split '" + cfg.eval.split + "' is empty");
  const Eigen::Index n = cfg.eval.max_examples > 0 ? std::min<Eigen::Index>(cfg.eval.max_examples, d.size()) : d.size();
  return d.X.topRows(n);
}

}  // namespace

void to_json(json& j, const DataConfig& c) {
  j = json{{"source", source_name(c.source)},
           {"images", c.images.string()},
           {"labels", c.labels.string()},
           {"test_images", c.test_images.string()},
           {"test_labels", c.test_labels.string()},
           {"n_train", c.n_train},
           {"n_valid", c.n_valid},
           {"n_test", c.n_test},
           {"binarize", binarize_name(c.binarize)},
           {"synthetic", synthetic_json(c.synthetic)}};
}

void to_json(json& j, const MetricSpec& c) {
  j = json{{"metric", c.metric}};
  if (c.metric == "elbo") j["n_mc"] = c.n_mc;
  if (c.metric == "iwll") j["k"] = c.k;
  if (c.metric == "parzen") {
    j["n_samples"] = c.n_samples;
    j["sigma_grid"] = c.sigma_grid;
  }
}

void to_json(json& j, const EvalConfig& c) {
  j = json{{"split", c.split}, {"max_examples", c.max_examples}, {"metrics", c.metrics}};
}

void to_json(json& j, const ExperimentConfig& c) {
  j = json{{"model", c.model},
           {"train", c.train},
           {"data", c.data},
           {"eval", c.eval},
           {"output_dir", c.output_dir.string()}};
}

ExperimentConfig parse_experiment(const json& j, const fs::path& base_dir) {
  try {
    reject_unknown(j, "config", {"model", "train", "data", "eval", "output_dir"});
    ExperimentConfig c;
    if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
    c.model = c.model.resolved();
    if (j.contains("train")) c.train = j.at("train").get<TrainConfig>();
    c.train.validate(c.model.num_epitomes());
    if (!j.contains("data")) throw ConfigError("data is required");
    c.data = parse_data(j.at("data"), base_dir);
    if (j.contains("eval")) c.eval = parse_eval(j.at("eval"));
    c.output_dir = resolve(j.value("output_dir", std::string("out")), base_dir);
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

ExperimentConfig load_experiment(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_experiment(j, fs::absolute(path).parent_path());
}

json resolved_snapshot(const ExperimentConfig& c) {
  ExperimentConfig r = c;
  r.model = c.model.resolved();
  for (fs::path* p : {&r.data.images, &r.data.labels, &r.data.test_images, &r.data.test_labels, &r.output_dir}) {
    if (!p->empty()) *p = fs::absolute(*p).lexically_normal();
  }
  return r;
}

const Dataset& DataSplits::by_name(const std::string& split) const {
  if (split == "train") return train;
  if (split == "valid") return valid;
  if (split == "test") return test;
  throw ConfigError("unknown split '" + split + "'");
}

DataSplits load_data(const DataConfig& c, std::uint64_t seed) {
  DataSplits s;
  switch (c.source) {
    case DataSource::mnist: {
      if (c.test_labels.empty() != c.labels.empty()) throw ConfigError("data.labels and data.test_labels go together");
      const Dataset tr = load_checked(c.images, c.labels, "data.");
      const Dataset te = load_checked(c.test_images, c.test_labels, "data.test_");
      auto std_split = split_standard(tr, te);
      s = {std::move(std_split.train), std::move(std_split.valid), std::move(std_split.test)};
      break;
    }
    case DataSource::idx:
      s = consecutive_splits(load_checked(c.images, c.labels, "data."), c);
      break;
    case DataSource::synthetic:
      s = consecutive_splits(synthetic_subspace_dataset(c.synthetic), c);
      break;
  }
  if (c.binarize != BinarizeSetting::none) {
    const BinarizeMode mode = c.binarize == BinarizeSetting::threshold ? BinarizeMode::threshold : BinarizeMode::stochastic;
    Rng base = Rng(seed).split("binarize");
    Rng r0 = base.split("train"), r1 = base.split("valid"), r2 = base.split("test");
    s.train = binarize(s.train, mode, r0);
    s.valid = binarize(s.valid, mode, r1);
    s.test = binarize(s.test, mode, r2);
  }
  return s;
}

TrainOutputs cmd_train(const ExperimentConfig& cfg, const fs::path& out_dir) {
  const DataSplits data = load_data(cfg.data, cfg.train.seed);
  if (data.train.dim() != cfg.model.obs_dim) {
    throw ConfigError("model.obs_dim is " + std::to_string(cfg.model.obs_dim) + " but the data has " +
                      std::to_string(data.train.dim()) + " columns");
  }
  fs::create_directories(out_dir);
  TrainOutputs out;
  out.resolved_config = out_dir / "config.resolved.json";
  write_text(out.resolved_config, resolved_snapshot(cfg).dump(2) + "\n");

  Rng init = Rng(cfg.train.seed).split("init");
  const Model model = Model::init(cfg.model, init);
  const Matrix probe = data.valid.size() > 0 ? Matrix(data.valid.X.topRows(std::min<Eigen::Index>(
                                                   cfg.train.probe_size, data.valid.size())))
                                             : Matrix();

  out.metrics_csv = out_dir / "metrics.csv";
  std::ofstream csv(out.metrics_csv, std::ios::binary);
  if (!csv) throw std::runtime_error("cannot write " + out.metrics_csv.string());
  csv << metrics_csv_header() << "\n";
  auto on_epoch = [&](const Model& m, const EpochMetrics& em) {
    csv << metrics_csv_row(em, cfg.train.record_wall_time) << "\n";
    csv.flush();
    if (cfg.train.checkpoint_every > 0 && em.epoch % cfg.train.checkpoint_every == 0) {
      save_checkpoint(out_dir / ("model_epoch" + std::to_string(em.epoch) + ".ckpt"), m, cfg.train.seed, em.epoch);
    }
  };
  out.result = train(model, data.train.X, cfg.train, probe, on_epoch);
  out.checkpoint = out_dir / "model.ckpt";
  save_checkpoint(out.checkpoint, out.result.model, cfg.train.seed, static_cast<int>(out.result.metrics.size()));
  return out;
}

json eval_metric(const MetricSpec& spec, const Model& model, const DataSplits& data, const Matrix& X, Rng& rng) {
  json rec{{"metric", spec.metric}, {"n_examples", X.rows()}};
  if (spec.metric == "elbo") {
    const ElboResult r = elbo_eval(model, X, spec.n_mc, rng);
    rec["n_mc"] = spec.n_mc;
    rec["mean_bound"] = r.mean_bound;
    rec["std_error"] = r.std_error;
    rec["mean_recon"] = r.mean_recon;
    rec["mean_kl_z"] = r.mean_kl_z;
    rec["kl_y"] = r.kl_y;
  } else if (spec.metric == "iwll") {
    const IwllResult r = iw_log_likelihood(model, X, spec.k, rng);
    rec["k"] = spec.k;
    rec["mean_log_likelihood"] = r.mean_estimate;
    rec["std_error"] = r.std_error;
  } else if (spec.metric == "parzen") {
    if (data.valid.size() == 0) throw ConfigError("parzen needs a non-empty validation split to select sigma");
    const Samples s = sample_generate(model, rng, spec.n_samples);
    const double sigma = parzen_sigma_select(s.mean, data.valid.X, spec.sigma_grid);
    const ParzenResult r = parzen_log_density(s.mean, X, sigma);
    rec["n_samples"] = r.n_samples;
    rec["sigma"] = r.sigma;
    rec["mean_log_density"] = r.mean_log_density;
    rec["std_error"] = r.std_error;
  } else if (spec.metric == "activity") {
    const ActivityReport r = unit_activity(model, X);
    const Correlation c = activity_kl_correlation(r);
    rec["activity"] = vector_json(r.activity);
    rec["per_unit_kl"] = vector_json(r.per_unit_kl);
    rec["threshold"] = r.threshold;
    rec["active_count"] = r.active_count;
    rec["correlation"] = c.defined ? json(c.r) : json(nullptr);
  } else {
    throw ConfigError("unknown metric '" + spec.metric + "'");
  }
  return rec;
}

std::vector<json> cmd_eval(const ExperimentConfig& cfg, const Model& model, const fs::path& out_dir) {
  if (cfg.eval.metrics.empty()) throw ConfigError("eval.metrics is empty");
  const DataSplits data = load_data(cfg.data, cfg.train.seed);
  const Matrix X = eval_rows(cfg, data);
  require_shape(X, -1, model.config.obs_dim, "evaluation data");
  fs::create_directories(out_dir);
  const Rng base = Rng(cfg.train.seed).split("eval");
  std::vector<json> records;
  std::string lines;
  for (std::size_t i = 0; i < cfg.eval.metrics.size(); ++i) {
    Rng rng = base.split(static_cast<std::uint64_t>(i));
    json rec = eval_metric(cfg.eval.metrics[i], model, data, X, rng);
    rec["split"] = cfg.eval.split;
    lines += rec.dump() + "\n";
    records.push_back(std::move(rec));
  }
  write_text(out_dir / "eval.jsonl", lines);
  return records;
}

PgmImage image_grid(const Matrix& images, int rows, int cols, int grid_cols) {
  if (images.rows() < 1) throw ConfigError("image grid needs at least one image");
  if (rows < 1 || cols < 1 || static_cast<Eigen::Index>(rows) * cols != images.cols()) {
    throw DimensionError("image shape " + std::to_string(rows) + "x" + std::to_string(cols) + " does not match " +
                         std::to_string(images.cols()) + " pixels");
  }
  const int n = static_cast<int>(images.rows());
  const int gc = std::max(1, std::min(grid_cols, n));
  const int gr = (n + gc - 1) / gc;
  PgmImage img;
  img.width = gc * cols + (gc - 1) * kGridPadding;
  img.height = gr * rows + (gr - 1) * kGridPadding;
  img.pixels.assign(static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height), 0);
  for (int k = 0; k < n; ++k) {
    const int top = (k / gc) * (rows + kGridPadding), left = (k % gc) * (cols + kGridPadding);
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) {
        const double v = std::round(255.0 * images(k, r * cols + c));
        const auto byte = static_cast<std::uint8_t>(std::clamp(std::isfinite(v) ? v : 0.0, 0.0, 255.0));
        img.pixels[static_cast<std::size_t>(top + r) * static_cast<std::size_t>(img.width) +
                   static_cast<std::size_t>(left + c)] = byte;
      }
    }
  }
  return img;
}

std::vector<std::uint8_t> encode_pgm(const PgmImage& img) {
  const std::string header = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

std::pair<int, int> default_image_shape(int obs_dim) {
  const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(obs_dim))));
  if (side * side == obs_dim) return {side, side};
  return {1, obs_dim};
}

fs::path cmd_sample(const Model& model, std::uint64_t seed, int n, int grid_cols, int image_rows, int image_cols,
                    const fs::path& out_dir) {
  if (n < 1) throw ConfigError("sample: n must be >= 1");
  Rng rng = Rng(seed).split("sample");
  const Samples s = sample_generate(model, rng, n);
  const auto bytes = encode_pgm(image_grid(s.mean, image_rows, image_cols, grid_cols));
  fs::create_directories(out_dir);
  const fs::path path = out_dir / "samples.pgm";
  write_text(path, std::string(bytes.begin(), bytes.end()));
  return path;
}

DiagnoseOutputs cmd_diagnose(const ExperimentConfig& cfg, const Model& model, const fs::path& out_dir) {
  const DataSplits data = load_data(cfg.data, cfg.train.seed);
  const Matrix X = eval_rows(cfg, data);
  DiagnoseOutputs out;
  out.report = unit_activity(model, X);
  out.correlation = activity_kl_correlation(out.report);

  std::vector<int> order(static_cast<std::size_t>(out.report.activity.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return out.report.activity(a) > out.report.activity(b); });
  std::string csv = "unit,activity,mean_kl\n";
  char buf[96];
  for (int u : order) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g\n", u, out.report.activity(u), out.report.per_unit_kl(u));
    csv += buf;
  }
  fs::create_directories(out_dir);
  out.units_csv = out_dir / "units.csv";
  write_text(out.units_csv, csv);

  const json summary{{"split", cfg.eval.split},
                     {"n_examples", X.rows()},
                     {"latent_dim", out.report.activity.size()},
                     {"threshold", out.report.threshold},
                     {"active_count", out.report.active_count},
                     {"activity_kl_correlation", out.correlation.defined ? json(out.correlation.r) : json(nullptr)},
                     {"correlation_defined", out.correlation.defined}};
  out.summary_json = out_dir / "summary.json";
  write_text(out.summary_json, summary.dump(2) + "\n");
  return out;
}

}  // namespace evae
