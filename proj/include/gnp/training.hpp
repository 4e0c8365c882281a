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

#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "gnp/ad_linalg.hpp"
#include "gnp/adam.hpp"
#include "gnp/models.hpp"
#include "gnp/rng.hpp"
#include "gnp/taskgen.hpp"

namespace gnp {

// Seed streams below the master seed.
inline constexpr std::uint64_t kTrainStream = 1;
inline constexpr std::uint64_t kValidationStream = 2;
inline constexpr std::uint64_t kEvaluationStream = 3;

struct TrainConfig {
  GeneratorSpec generator = GeneratorSpec::gp(KernelKind::eq);
  SplitSpec split = SplitSpec::make(SplitKind::interp_in_range);
  EpisodeSizes sizes;
  std::size_t episodes_per_epoch = 256;
  std::size_t epochs = 10;
  std::size_t batch_size = 16;
  AdamConfig adam;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // epochs between checkpoints, 0 = off
  std::size_t val_tasks = 64;

  void validate() const {
    generator.validate();
    split.validate();
    sizes.validate();
    if (episodes_per_epoch == 0 || batch_size == 0 || val_tasks == 0) {
      throw std::invalid_argument("training: episodes_per_epoch, batch_size and val_tasks must be > 0");
    }
    if (!(adam.learning_rate > 0.0)) throw std::invalid_argument("training: learning_rate must be > 0");
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_nll = 0.0;
  double val_loglik = 0.0;
  double seconds = 0.0;
};

struct TrainHistory {
  double initial_val_loglik = 0.0;
  std::vector<EpochRecord> epochs;

  /// CSV `epoch,train_nll,val_loglik[,seconds]`. Without the seconds column
  /// reruns of the same config are byte-identical.
  void write_csv(std::ostream& os, bool with_seconds = true) const {
    os << "epoch,train_nll,val_loglik" << (with_seconds ? ",seconds\n" : "\n");
    os.precision(17);
    for (const auto& e : epochs) {
      os << e.epoch << ',' << e.train_nll << ',' << e.val_loglik;
      if (with_seconds) os << ',' << e.seconds;
      os << '\n';
    }
  }
};

class TrainingAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// -(1/N) sum_i log N(y_i | m_i, K_i) over a batch, recorded on the tape.
inline Var nll_loss(Tape& tape, const PredictionModel& model, std::span<const Var> params,
                    std::span<const Episode> batch) {
  if (batch.empty()) throw std::invalid_argument("nll_loss: empty batch");
  std::optional<Var> total;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& ep = batch[i];
    const auto pred = model.forward(tape, params, ep.context, ep.target.x);
    Var lp;
    try {
      lp = ad::gaussian_logpdf(ep.target.y, pred.mean, pred.cov);
    } catch (const LinalgError& e) {
      throw LinalgError("nll_loss: episode " + std::to_string(i) + ": " + e.what());
    }
    total = total ? ad::add(*total, lp) : lp;
  }
  return ad::scale(*total, -1.0 / static_cast<double>(batch.size()));
}

inline double nll_loss(const PredictionModel& model, std::span<const Episode> batch) {
  Tape tape;
  const auto params = model.bind(tape, false);
  return nll_loss(tape, model, params, batch).value().item();
}

/// Prediction routine used for scoring; nullopt means "not available".
using Predictor =
    std::function<std::optional<GaussianFDD>(const Dataset&, std::span<const double>)>;

inline Predictor model_predictor(const PredictionModel& model) {
  return [&model](const Dataset& c, std::span<const double> t) -> std::optional<GaussianFDD> {
    return model.predict(c, t);
  };
}

inline Predictor oracle_predictor(const GeneratorSpec& gen, OracleMode mode) {
  return [gen, mode](const Dataset& c, std::span<const double> t) {
    return oracle_predict(gen, c, t, mode);
  };
}

struct EvalResult {
  bool available = true;
  double mean = 0.0;  // mean per-point log-likelihood
  double ci95 = 0.0;  // half-width of the normal-approximation 95% interval
  std::size_t n_tasks = 0;
  std::uint64_t seed = 0;
  std::vector<double> per_task;
};

inline Episode evaluation_episode(const GeneratorSpec& gen, const SplitSpec& split,
                                  const EpisodeSizes& sizes, std::uint64_t seed, std::size_t i) {
  Rng rng = make_rng(seed, {kEvaluationStream, i});
  return sample_episode(gen, split, sizes, rng);
}

/// Mean over tasks of log N(y_t | predictive) / |targets|. Episode i is drawn
/// from its own stream, so results do not depend on evaluation order.
inline EvalResult evaluate(const Predictor& predictor, const GeneratorSpec& gen,
                           const SplitSpec& split, const EpisodeSizes& sizes, std::size_t n_tasks,
                           std::uint64_t seed) {
  if (n_tasks == 0) throw std::invalid_argument("evaluate: n_tasks must be >= 1");
  EvalResult r;
  r.n_tasks = n_tasks;
  r.seed = seed;
  for (std::size_t i = 0; i < n_tasks; ++i) {
    const Episode ep = evaluation_episode(gen, split, sizes, seed, i);
    const auto pred = predictor(ep.context, ep.target.x);
    if (!pred) {
      r.available = false;
      r.per_task.clear();
      return r;
    }
    r.per_task.push_back(gaussian_logpdf(ep.target.y, *pred) /
                         static_cast<double>(ep.target.size()));
  }
  double mean = 0.0;
  for (double v : r.per_task) mean += v;
  mean /= static_cast<double>(n_tasks);
  double var = 0.0;
  for (double v : r.per_task) var += (v - mean) * (v - mean);
  var = n_tasks > 1 ? var / static_cast<double>(n_tasks - 1) : 0.0;
  r.mean = mean;
  r.ci95 = 1.96 * std::sqrt(var / static_cast<double>(n_tasks));
  return r;
}

struct TrainCallbacks {
  // Called after every checkpoint_every-th epoch and after the last epoch.
  std::function<void(const PredictionModel&, std::size_t epoch)> on_checkpoint;
  // Called after every epoch.
  std::function<void(const EpochRecord&)> on_epoch;
};

inline EvalResult validate_model(const PredictionModel& model, const TrainConfig& config) {
  return evaluate(model_predictor(model), config.generator, config.split, config.sizes,
                  config.val_tasks, derive_seed(config.seed, {kValidationStream}));
}

/// Maximum-likelihood meta-training with Adam on freshly sampled batches.
/// Episode (epoch, index) uses its own seed stream, so runs are reproducible.
/// On a non-finite loss or gradient the parameters are restored to the last
/// good step and TrainingAborted is thrown.
inline TrainHistory train(const TrainConfig& config, PredictionModel& model,
                          const TrainCallbacks& callbacks = {}) {
  config.validate();
  TrainHistory history;
  history.initial_val_loglik = validate_model(model, config).mean;
  AdamState adam(config.adam);
  const std::size_t steps =
      (config.episodes_per_epoch + config.batch_size - 1) / config.batch_size;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    double loss_sum = 0.0;
    std::size_t episode = 0;
    for (std::size_t step = 0; step < steps; ++step) {
      std::vector<Episode> batch;
      for (std::size_t b = 0; b < config.batch_size && episode < config.episodes_per_epoch;
           ++b, ++episode) {
        Rng rng = make_rng(config.seed, {kTrainStream, epoch, episode});
        batch.push_back(sample_episode(config.generator, config.split, config.sizes, rng));
      }
      const std::vector<Tensor> last_good = model.parameters();
      Tape tape;
      const auto params = model.bind(tape);
      double loss = 0.0;
      Gradients grads;
      try {
        Var l = nll_loss(tape, model, params, batch);
        loss = l.value().item();
        if (!std::isfinite(loss)) throw TrainingAborted("non-finite loss");
        grads = tape.backward(l);
        adam_step(model.parameters(), grads, adam);
      } catch (const std::exception& e) {
        model.parameters() = last_good;
        throw TrainingAborted("training aborted at epoch " + std::to_string(epoch) + ", step " +
                              std::to_string(step) + ": " + e.what());
      }
      loss_sum += loss * static_cast<double>(batch.size());
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_nll = loss_sum / static_cast<double>(config.episodes_per_epoch);
    rec.val_loglik = validate_model(model, config).mean;
    rec.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    history.epochs.push_back(rec);
    if (callbacks.on_epoch) callbacks.on_epoch(rec);
    const bool last = epoch + 1 == config.epochs;
    if (callbacks.on_checkpoint &&
        (last || (config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0))) {
      callbacks.on_checkpoint(model, epoch);
    }
  }
  return history;
}

// JSON

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"episodes_per_epoch", c.episodes_per_epoch},
       {"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"learning_rate", c.adam.learning_rate},
       {"beta1", c.adam.beta1},
       {"beta2", c.adam.beta2},
       {"epsilon", c.adam.epsilon},
       {"checkpoint_every", c.checkpoint_every},
       {"val_tasks", c.val_tasks}};
}

/// Reads the "training" section; generator, split, sizes and seed live in
/// other sections of the experiment config.
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  detail::reject_unknown(j, "training",
                         {"episodes_per_epoch", "epochs", "batch_size", "learning_rate", "beta1",
                          "beta2", "epsilon", "checkpoint_every", "val_tasks"});
  auto get = [&](const char* key, auto& out) {
    if (j.contains(key)) j.at(key).get_to(out);
  };
  get("episodes_per_epoch", c.episodes_per_epoch);
  get("epochs", c.epochs);
  get("batch_size", c.batch_size);
  get("learning_rate", c.adam.learning_rate);
  get("beta1", c.adam.beta1);
  get("beta2", c.adam.beta2);
  get("epsilon", c.adam.epsilon);
  get("checkpoint_every", c.checkpoint_every);
  get("val_tasks", c.val_tasks);
}

}  // namespace gnp
