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
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

#include <json.hpp>

#include "gnp/models.hpp"

namespace gnp {

inline constexpr std::string_view kCodeVersion = "0.3.0";
inline constexpr int kCheckpointVersion = 1;

/// FNV-1a 64-bit digest of the canonical (key-sorted, compact) dump.
inline std::string config_hash(const nlohmann::json& j) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : j.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// `experiment` optionally records the config the model was trained under.
inline nlohmann::json checkpoint_json(const PredictionModel& model, const std::string& hash,
                                      std::uint64_t seed,
                                      const nlohmann::json& experiment = nullptr) {
  nlohmann::json params = nlohmann::json::array();
  for (std::size_t i = 0; i < model.parameters().size(); ++i) {
    const auto& t = model.parameters()[i];
    params.push_back({{"name", model.parameter_names()[i]}, {"shape", t.shape()}, {"data", t.vec()}});
  }
  nlohmann::json j = {{"format", "gnp-checkpoint"},
                      {"version", kCheckpointVersion},
                      {"code_version", std::string(kCodeVersion)},
                      {"config_hash", hash},
                      {"seed", seed},
                      {"model", model.config_json()},
                      {"parameters", params}};
  if (!experiment.is_null()) j["experiment"] = experiment;
  return j;
}

inline void save_checkpoint(const std::filesystem::path& path, const PredictionModel& model,
                            const std::string& hash, std::uint64_t seed,
                            const nlohmann::json& experiment = nullptr) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot write checkpoint " + path.string());
  os << checkpoint_json(model, hash, seed, experiment).dump(1) << '\n';
}

struct LoadedCheckpoint {
  std::unique_ptr<PredictionModel> model;
  std::string config_hash;
  std::uint64_t seed = 0;
  nlohmann::json model_config;
  nlohmann::json experiment;  // null when not recorded
};

/// Rebuilds a model from checkpoint JSON. When expected_hash is given, a
/// checkpoint written under a different config is rejected.
inline LoadedCheckpoint load_checkpoint(const nlohmann::json& j,
                                        std::optional<std::string> expected_hash = std::nullopt) {
  if (j.value("format", "") != "gnp-checkpoint") throw CheckpointError("not a gnp checkpoint");
  if (j.value("version", 0) != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + j.at("version").dump());
  }
  LoadedCheckpoint out;
  out.config_hash = j.at("config_hash").get<std::string>();
  if (expected_hash && *expected_hash != out.config_hash) {
    throw CheckpointError("checkpoint config hash " + out.config_hash +
                          " does not match config hash " + *expected_hash);
  }
  out.seed = j.at("seed").get<std::uint64_t>();
  out.model_config = j.at("model");
  if (j.contains("experiment")) out.experiment = j.at("experiment");
  out.model = make_model(out.model_config);
  const auto& params = j.at("parameters");
  auto& dst = out.model->parameters();
  if (params.size() != dst.size()) {
    throw CheckpointError("checkpoint has " + std::to_string(params.size()) +
                          " parameters, model expects " + std::to_string(dst.size()));
  }
  for (std::size_t i = 0; i < dst.size(); ++i) {
    const auto& p = params[i];
    if (p.at("name").get<std::string>() != out.model->parameter_names()[i]) {
      throw CheckpointError("parameter " + std::to_string(i) + " is '" +
                            p.at("name").get<std::string>() + "', expected '" +
                            out.model->parameter_names()[i] + "'");
    }
    Tensor t(p.at("shape").get<Shape>(), p.at("data").get<std::vector<double>>());
    if (t.shape() != dst[i].shape()) {
      throw CheckpointError("parameter '" + out.model->parameter_names()[i] + "' has shape " +
                            shape_str(t.shape()) + ", expected " + shape_str(dst[i].shape()));
    }
    dst[i] = std::move(t);
  }
  return out;
}

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path,
                                        std::optional<std::string> expected_hash = std::nullopt) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot read checkpoint " + path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("malformed checkpoint " + path.string() + ": " + e.what());
  }
  return load_checkpoint(j, std::move(expected_hash));
}

}  // namespace gnp
