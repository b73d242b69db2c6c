// SPDX-License-Identifier: Apache-2.0
//
// evae: train, evaluate, sample from and diagnose latent variable models.
//
//   evae train    --config exp.json [--seed N] [--out DIR]
//   evae eval     --config exp.json --checkpoint model.ckpt [--seed N] [--out DIR]
//   evae sample   --checkpoint model.ckpt [--n 100] [--cols 10] [--config exp.json] [--seed N] [--out DIR]
//   evae diagnose --config exp.json --checkpoint model.ckpt [--out DIR]
//
// On success one JSON line describing the outputs goes to stdout. On failure
// one JSON line {"error": <kind>, "message": ...} goes to stderr and the exit
// code is 2 for configuration/usage errors, 3 for malformed files, 1 otherwise.

#include <cmath>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "evae/errors.hpp"
#include "evae/experiment.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
  std::string config;
  std::string checkpoint;
  std::optional<std::uint64_t> seed;
  std::string out;
  int n = 100;
  int cols = 0;
};

int fail(const std::string& kind, const std::string& message, int code) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << std::endl;
  return code;
}

evae::ExperimentConfig experiment(const Options& o) {
  if (o.config.empty()) throw evae::ConfigError("--config is required");
  evae::ExperimentConfig cfg = evae::load_experiment(o.config);
  if (o.seed) cfg.train.seed = *o.seed;
  return cfg;
}

fs::path out_dir(const Options& o, const evae::ExperimentConfig* cfg) {
  if (!o.out.empty()) return o.out;
  if (cfg) return cfg->output_dir;
  return "out";
}

evae::Model checkpoint_model(const Options& o) {
  if (o.checkpoint.empty()) throw evae::ConfigError("--checkpoint is required");
  if (!fs::exists(o.checkpoint)) throw evae::ConfigError("--checkpoint: file not found: " + o.checkpoint);
  return evae::load_checkpoint(o.checkpoint).model;
}

json run_train(const Options& o) {
  auto cfg = experiment(o);
  const auto dir = out_dir(o, &cfg);
  cfg.output_dir = dir;
  const auto res = evae::cmd_train(cfg, dir);
  json j{{"command", "train"},
         {"checkpoint", res.checkpoint.string()},
         {"metrics_csv", res.metrics_csv.string()},
         {"resolved_config", res.resolved_config.string()},
         {"epochs", res.result.metrics.size()}};
  if (!res.result.metrics.empty()) j["final_mean_total"] = res.result.metrics.back().mean_total;
  return j;
}

json run_eval(const Options& o) {
  auto cfg = experiment(o);
  const auto model = checkpoint_model(o);
  const auto dir = out_dir(o, &cfg);
  const auto records = evae::cmd_eval(cfg, model, dir);
  return json{{"command", "eval"}, {"records", (dir / "eval.jsonl").string()}, {"n_metrics", records.size()}};
}

json run_sample(const Options& o) {
  const auto model = checkpoint_model(o);
  std::optional<evae::ExperimentConfig> cfg;
  if (!o.config.empty()) cfg = experiment(o);
  const std::uint64_t seed = o.seed ? *o.seed : (cfg ? cfg->train.seed : 0);
  const auto [rows, cols] = evae::default_image_shape(model.config.obs_dim);
  const int grid = o.cols > 0 ? o.cols : static_cast<int>(std::ceil(std::sqrt(static_cast<double>(o.n))));
  const auto path = evae::cmd_sample(model, seed, o.n, grid, rows, cols, out_dir(o, cfg ? &*cfg : nullptr));
  return json{{"command", "sample"}, {"image", path.string()}, {"n", o.n}};
}

json run_diagnose(const Options& o) {
  auto cfg = experiment(o);
  const auto model = checkpoint_model(o);
  const auto res = evae::cmd_diagnose(cfg, model, out_dir(o, &cfg));
  return json{{"command", "diagnose"},
              {"units_csv", res.units_csv.string()},
              {"summary", res.summary_json.string()},
              {"active_count", res.report.active_count}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Variational autoencoder lab: VAE, dropout VAE, epitomic VAE and mixtures of VAEs"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub, bool needs_config, bool needs_checkpoint) {
    auto* c = sub->add_option("--config", o.config, "experiment JSON");
    if (needs_config) c->required();
    auto* k = sub->add_option("--checkpoint", o.checkpoint, "model checkpoint");
    if (needs_checkpoint) k->required();
    sub->add_option("--seed", o.seed, "override train.seed");
    sub->add_option("--out", o.out, "output directory (default: output_dir from the config)");
  };

  auto* train = app.add_subcommand("train", "train a model from an experiment config");
  add_common(train, true, false);
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint with the config's eval.metrics");
  add_common(eval, true, true);
  auto* sample = app.add_subcommand("sample", "write a PGM grid of decoder-mean samples");
  add_common(sample, false, true);
  sample->add_option("--n", o.n, "number of samples")->check(CLI::PositiveNumber);
  sample->add_option("--cols", o.cols, "grid columns (default: ceil(sqrt(n)))");
  auto* diagnose = app.add_subcommand("diagnose", "per-unit activity and KL report");
  add_common(diagnose, true, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("UsageError", e.what(), 2);
  }

  try {
    json result;
    if (*train) result = run_train(o);
    else if (*eval) result = run_eval(o);
    else if (*sample) result = run_sample(o);
    else result = run_diagnose(o);
    std::cout << result.dump() << std::endl;
    return 0;
  } catch (const evae::ConfigError& e) {
    return fail("ConfigError", e.what(), 2);
  } catch (const evae::FormatError& e) {
    return fail("FormatError", e.what(), 3);
  } catch (const evae::TrainingAborted& e) {
    return fail("TrainingAborted", e.what(), 1);
  } catch (const std::exception& e) {
    return fail("Error", e.what(), 1);
  }
}
