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

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "gnp/checkpoint.hpp"
#include "gnp/models.hpp"
#include "gnp/taskgen.hpp"
#include "gnp/training.hpp"

namespace gnp {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct EvaluationSpec {
  std::size_t n_tasks = 512;
  std::vector<GeneratorKind> tasks{GeneratorKind::eq};
  std::vector<SplitKind> splits{SplitKind::interp_in_range};
  bool include_oracles = true;
};

/// Experiment config: generator, split, episode sizes, model, training and
/// evaluation sections plus the master seed. Unknown keys are rejected.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  GeneratorSpec generator = GeneratorSpec::gp(KernelKind::eq);
  SplitSpec split = SplitSpec::make(SplitKind::interp_in_range);
  EpisodeSizes sizes;
  nlohmann::json model = {{"kind", "gnp"}};
  TrainConfig training;
  EvaluationSpec evaluation;

  std::string model_kind() const { return model.at("kind").get<std::string>(); }
  bool is_oracle() const {
    const auto k = model_kind();
    return k == "oracle-full" || k == "oracle-diag";
  }

  /// Generator used for an evaluation task: the configured one for its own
  /// kind, defaults otherwise.
  GeneratorSpec task_generator(GeneratorKind kind) const {
    if (kind == generator.kind) return generator;
    auto g = GeneratorSpec::defaults(kind);
    g.noise_std = generator.noise_std;
    for (auto& c : g.components) c.noise_std = generator.noise_std;
    return g;
  }

  SplitSpec task_split(SplitKind kind) const {
    if (kind == split.kind) return split;
    const Interval train = split.kind == SplitKind::interp_beyond_range
                               ? Interval{split.context.lo - 4.0, split.context.hi - 4.0}
                               : split.context;
    return SplitSpec::make(kind, train);
  }

  nlohmann::json canonical() const {
    nlohmann::json t = training;
    nlohmann::json tasks = nlohmann::json::array(), splits = nlohmann::json::array();
    for (auto k : evaluation.tasks) tasks.push_back(std::string(to_string(k)));
    for (auto k : evaluation.splits) splits.push_back(std::string(to_string(k)));
    return {{"seed", seed},
            {"generator", generator},
            {"split", split},
            {"episodes", sizes},
            {"model", model},
            {"training", t},
            {"evaluation",
             {{"n_tasks", evaluation.n_tasks},
              {"tasks", tasks},
              {"splits", splits},
              {"include_oracles", evaluation.include_oracles}}}};
  }

  std::string hash() const { return config_hash(canonical()); }
};

inline ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
  ExperimentConfig c;
  auto section = [&](const char* key, auto&& fn) {
    if (!j.contains(key)) return;
    try {
      fn(j.at(key));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config.") + key + ": " + e.what());
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("config.") + key + ": " + e.what());
    }
  };
  if (!j.is_object()) throw ConfigError("config: top-level object expected");
  for (const auto& [key, _] : j.items()) {
    if (key != "seed" && key != "generator" && key != "split" && key != "episodes" &&
        key != "model" && key != "training" && key != "evaluation") {
      throw ConfigError("config: unknown key '" + key + "'");
    }
  }
  section("seed", [&](const auto& v) { c.seed = v.template get<std::uint64_t>(); });
  section("generator", [&](const auto& v) { c.generator = v.template get<GeneratorSpec>(); });
  section("split", [&](const auto& v) { c.split = v.template get<SplitSpec>(); });
  section("episodes", [&](const auto& v) { c.sizes = v.template get<EpisodeSizes>(); });
  section("model", [&](const auto& v) {
    const auto kind = v.at("kind").template get<std::string>();
    if (kind == "oracle-full" || kind == "oracle-diag") {
      if (v.size() != 1) throw std::invalid_argument("oracle models take no options");
      c.model = {{"kind", kind}};
    } else {
      c.model = make_model(v)->config_json();
    }
  });
  section("training", [&](const auto& v) { from_json(v, c.training); });
  section("evaluation", [&](const auto& v) {
    detail::reject_unknown(v, "evaluation", {"n_tasks", "tasks", "splits", "include_oracles"});
    if (v.contains("n_tasks")) c.evaluation.n_tasks = v.at("n_tasks").template get<std::size_t>();
    if (v.contains("tasks")) {
      c.evaluation.tasks.clear();
      for (const auto& t : v.at("tasks")) {
        c.evaluation.tasks.push_back(generator_kind_from_string(t.template get<std::string>()));
      }
    }
    if (v.contains("splits")) {
      c.evaluation.splits.clear();
      for (const auto& s : v.at("splits")) {
        c.evaluation.splits.push_back(split_kind_from_string(s.template get<std::string>()));
      }
    }
    if (v.contains("include_oracles")) {
      c.evaluation.include_oracles = v.at("include_oracles").template get<bool>();
    }
    if (c.evaluation.n_tasks == 0) throw std::invalid_argument("n_tasks must be >= 1");
  });
  c.training.generator = c.generator;
  c.training.split = c.split;
  c.training.sizes = c.sizes;
  c.training.seed = c.seed;
  try {
    c.training.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config " + path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_experiment_config(j);
}

}  // namespace gnp
