/*
 * Copyright 2026 The GNP Lab Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gnp/checkpoint.hpp"
#include "gnp/config.hpp"
#include "gnp/selftest.hpp"
#include "gnp/training.hpp"

namespace fs = std::filesystem;
using namespace gnp;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

std::string provenance(const std::string& hash, std::uint64_t seed) {
  return "# config_hash=" + hash + " seed=" + std::to_string(seed) +
         " code_version=" + std::string(kCodeVersion) + "\n";
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

// Writes to `path`, or stdout when it is empty.
void emit(const std::string& path, const std::string& text) {
  if (path.empty()) {
    std::cout << text;
  } else {
    write_file(path, text);
  }
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

fs::path default_out_dir() {
  if (const char* env = std::getenv("GNP_OUT_DIR"); env && *env) return env;
  return "runs";
}

struct TrainArgs {
  std::string config;
  std::string out_dir;
  bool with_timing = false;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a) {
  const ExperimentConfig cfg = load_experiment_config(a.config);
  if (cfg.is_oracle()) throw ConfigError("config: model '" + cfg.model_kind() + "' has nothing to train");
  const std::string hash = cfg.hash();
  const fs::path dir = (a.out_dir.empty() ? default_out_dir() : fs::path(a.out_dir)) / hash;
  fs::create_directories(dir);

  auto model = make_model(cfg.model);
  TrainCallbacks cb;
  cb.on_checkpoint = [&](const PredictionModel& m, std::size_t epoch) {
    save_checkpoint(dir / ("checkpoint_epoch" + std::to_string(epoch) + ".json"), m, hash,
                    cfg.seed, cfg.canonical());
  };
  if (!a.quiet) {
    cb.on_epoch = [](const EpochRecord& r) {
      std::cerr << "epoch " << r.epoch << " train_nll " << r.train_nll << " val_loglik "
                << r.val_loglik << " (" << r.seconds << " s)\n";
    };
  }
  const TrainHistory history = train(cfg.training, *model, cb);
  save_checkpoint(dir / "checkpoint.json", *model, hash, cfg.seed, cfg.canonical());

  std::ostringstream csv;
  csv << provenance(hash, cfg.seed);
  history.write_csv(csv, false);
  write_file(dir / "history.csv", csv.str());
  if (a.with_timing) {
    std::ostringstream t;
    t << provenance(hash, cfg.seed) << "epoch,seconds\n";
    for (const auto& e : history.epochs) t << e.epoch << ',' << e.seconds << '\n';
    write_file(dir / "timing.csv", t.str());
  }
  const nlohmann::json manifest = {{"config_hash", hash},
                                   {"seed", cfg.seed},
                                   {"code_version", std::string(kCodeVersion)},
                                   {"model_kind", cfg.model_kind()},
                                   {"parameter_count", model->parameter_count()},
                                   {"initial_val_loglik", history.initial_val_loglik},
                                   {"epochs", history.epochs.size()},
                                   {"config", cfg.canonical()}};
  write_file(dir / "manifest.json", manifest.dump(1) + "\n");
  std::cout << dir.string() << "\n";
  return 0;
}

struct EvalArgs {
  std::string config;
  std::string checkpoint;
  std::optional<std::size_t> n_tasks;
  std::optional<std::uint64_t> seed;
  std::string out;
};

int cmd_eval(const EvalArgs& a) {
  const ExperimentConfig cfg = load_experiment_config(a.config);
  const std::string hash = cfg.hash();
  const std::size_t n_tasks = a.n_tasks.value_or(cfg.evaluation.n_tasks);
  const std::uint64_t seed = a.seed.value_or(cfg.seed);
  if (n_tasks == 0) throw ConfigError("--n-tasks must be >= 1");

  std::optional<LoadedCheckpoint> ckpt;
  if (!a.checkpoint.empty()) {
    ckpt = load_checkpoint(fs::path(a.checkpoint), hash);
  } else if (!cfg.is_oracle()) {
    throw ConfigError("model '" + cfg.model_kind() + "' needs --checkpoint");
  }

  using Row = std::tuple<std::string, std::string, std::string, std::string>;
  std::vector<Row> rows;
  for (auto task : cfg.evaluation.tasks) {
    const GeneratorSpec gen = cfg.task_generator(task);
    for (auto split_kind : cfg.evaluation.splits) {
      const SplitSpec split = cfg.task_split(split_kind);
      std::vector<std::pair<std::string, Predictor>> predictors;
      if (ckpt) predictors.emplace_back(cfg.model_kind(), model_predictor(*ckpt->model));
      const bool own_oracle = cfg.is_oracle();
      if (own_oracle || cfg.evaluation.include_oracles) {
        for (auto [name, mode] : {std::pair{"oracle-full", OracleMode::full},
                                  std::pair{"oracle-diag", OracleMode::diag}}) {
          if (own_oracle && !cfg.evaluation.include_oracles && cfg.model_kind() != name) continue;
          predictors.emplace_back(name, oracle_predictor(gen, mode));
        }
      }
      for (const auto& [name, predictor] : predictors) {
        const EvalResult r = evaluate(predictor, gen, split, cfg.sizes, n_tasks, seed);
        rows.emplace_back(std::string(to_string(task)), std::string(to_string(split_kind)), name,
                          r.available ? fmt(r.mean) + "," + fmt(r.ci95) : "n/a,n/a");
      }
    }
  }
  std::sort(rows.begin(), rows.end());
  std::ostringstream csv;
  csv << provenance(hash, seed) << "task,split,predictor,mean,ci95,n_tasks,seed\n";
  for (const auto& [task, split, predictor, cells] : rows) {
    csv << task << ',' << split << ',' << predictor << ',' << cells << ',' << n_tasks << ','
        << seed << '\n';
  }
  emit(a.out, csv.str());
  return 0;
}

std::vector<double> parse_lags(const std::string& spec) {
  double lo = 0.0, hi = 0.0, step = 0.0;
  char c1 = 0, c2 = 0;
  std::istringstream is(spec);
  if (!(is >> lo >> c1 >> hi >> c2 >> step) || c1 != ':' || c2 != ':' || !is.eof()) {
    throw ConfigError("--lags expects lo:hi:step, got '" + spec + "'");
  }
  if (!(step > 0.0) || hi < lo) throw ConfigError("--lags needs step > 0 and hi >= lo");
  const auto count = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
  std::vector<double> lags(count);
  for (std::size_t i = 0; i < count; ++i) lags[i] = lo + static_cast<double>(i) * step;
  return lags;
}

struct KernelDumpArgs {
  std::string checkpoint;
  std::string lags = "0:2:0.1";
  std::string out;
};

int cmd_kernel_dump(const KernelDumpArgs& a) {
  const LoadedCheckpoint ckpt = load_checkpoint(fs::path(a.checkpoint));
  const auto* gnp = dynamic_cast<const GNPModel*>(ckpt.model.get());
  if (!gnp) {
    throw ConfigError("checkpoint holds a '" + std::string(ckpt.model->kind()) +
                      "' model, which has no kernel map");
  }
  std::optional<KernelSpec> truth;
  if (!ckpt.experiment.is_null() && ckpt.experiment.contains("generator")) {
    const auto gen = ckpt.experiment.at("generator").get<GeneratorSpec>();
    if (gen.is_gp()) truth = gen.kernel;
  }
  const auto lags = parse_lags(a.lags);
  const PriorCovariance pc = extract_prior_covariance(*gnp, lags);
  const double var0 = extract_prior_covariance(*gnp, std::vector<double>{0.0}).covariance[0];
  std::ostringstream csv;
  csv << provenance(ckpt.config_hash, ckpt.seed) << "lag,covariance,normalized,truth\n";
  for (std::size_t i = 0; i < lags.size(); ++i) {
    csv << fmt(lags[i]) << ',' << fmt(pc.covariance[i]) << ',' << fmt(pc.covariance[i] / var0)
        << ',' << (truth ? fmt((*truth)(std::abs(lags[i]))) : "n/a") << '\n';
  }
  emit(a.out, csv.str());
  return 0;
}

struct SelftestArgs {
  std::uint64_t seed = selftest::Options{}.seed;
  bool flip_kl_sign = false;
  std::string out;
};

int cmd_selftest(const SelftestArgs& a) {
  selftest::Options opt;
  opt.seed = a.seed;
  opt.flip_kl_sign = a.flip_kl_sign;
  const selftest::Report report = selftest::run(opt);
  emit(a.out, selftest::to_json(report).dump(1) + "\n");
  for (const auto& p : report.properties) {
    std::cerr << (p.passed ? "pass " : "FAIL ") << p.module << '/' << p.name << '\n';
  }
  return report.passed() ? 0 : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gaussian neural process experiments"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "train a model from an experiment config");
  train_cmd->add_option("--config", train_args.config, "experiment config JSON")->required();
  train_cmd->add_option("--out-dir", train_args.out_dir,
                        "parent of the run directory (default $GNP_OUT_DIR or ./runs)");
  train_cmd->add_flag("--timing", train_args.with_timing, "also write per-epoch wall time");
  train_cmd->add_flag("--quiet", train_args.quiet, "no per-epoch progress on stderr");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "score predictors, one CSV row per cell");
  eval_cmd->add_option("--config", eval_args.config, "experiment config JSON")->required();
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "trained model checkpoint");
  eval_cmd->add_option("--n-tasks", eval_args.n_tasks, "tasks per cell");
  eval_cmd->add_option("--seed", eval_args.seed, "evaluation seed");
  eval_cmd->add_option("--out", eval_args.out, "output CSV (default stdout)");

  KernelDumpArgs dump_args;
  auto* dump_cmd = app.add_subcommand("kernel-dump", "prior covariance of a GNP against lag");
  dump_cmd->add_option("--checkpoint", dump_args.checkpoint, "GNP checkpoint")->required();
  dump_cmd->add_option("--lags", dump_args.lags, "lo:hi:step")->capture_default_str();
  dump_cmd->add_option("--out", dump_args.out, "output CSV (default stdout)");

  SelftestArgs st_args;
  auto* st_cmd = app.add_subcommand("selftest", "run the property suite, JSON report");
  st_cmd->add_option("--seed", st_args.seed, "master seed")->capture_default_str();
  st_cmd->add_option("--out", st_args.out, "output JSON (default stdout)");
  st_cmd->add_flag("--flip-kl-sign", st_args.flip_kl_sign,
                   "negate the closed-form KL (harness check)");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train_cmd) return cmd_train(train_args);
    if (*eval_cmd) return cmd_eval(eval_args);
    if (*dump_cmd) return cmd_kernel_dump(dump_args);
    if (*st_cmd) return cmd_selftest(st_args);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}
