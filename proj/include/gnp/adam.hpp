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

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "gnp/autodiff.hpp"

namespace gnp {

struct AdamConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class NonFiniteGradient : public std::runtime_error {
 public:
  NonFiniteGradient(std::size_t param_id, const std::string& what)
      : std::runtime_error(what), param_id_(param_id) {}
  std::size_t param_id() const noexcept { return param_id_; }

 private:
  std::size_t param_id_;
};

/// Moment accumulators for Adam. Moments are created on the first step with
/// the shapes of the parameters they track.
class AdamState {
 public:
  explicit AdamState(AdamConfig config = {}) : config_(config) {}

  const AdamConfig& config() const noexcept { return config_; }
  std::uint64_t step() const noexcept { return t_; }
  const std::vector<Tensor>& first_moments() const noexcept { return m_; }
  const std::vector<Tensor>& second_moments() const noexcept { return v_; }

  void restore(std::uint64_t t, std::vector<Tensor> m, std::vector<Tensor> v) {
    t_ = t;
    m_ = std::move(m);
    v_ = std::move(v);
  }

 private:
  friend void adam_step(std::vector<Tensor>&, const Gradients&, AdamState&);

  AdamConfig config_;
  std::uint64_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

/// One bias-corrected Adam update. grads is keyed by parameter index; missing
/// entries count as zero gradients. Nothing is modified if any gradient is
/// non-finite.
inline void adam_step(std::vector<Tensor>& params, const Gradients& grads, AdamState& state) {
  if (state.m_.empty()) {
    for (const auto& p : params) {
      state.m_.emplace_back(p.shape());
      state.v_.emplace_back(p.shape());
    }
  }
  if (state.m_.size() != params.size()) {
    throw std::invalid_argument("adam_step: state tracks " + std::to_string(state.m_.size()) +
                                " parameters, got " + std::to_string(params.size()));
  }
  for (const auto& [id, g] : grads) {
    if (id >= params.size()) {
      throw std::invalid_argument("adam_step: gradient for unknown parameter " + std::to_string(id));
    }
    if (g.shape() != params[id].shape()) {
      throw ShapeError("adam_step: gradient shape for parameter " + std::to_string(id),
                       g.shape(), params[id].shape());
    }
    for (double v : g.data()) {
      if (!std::isfinite(v)) {
        throw NonFiniteGradient(id, "adam_step: non-finite gradient for parameter " +
                                        std::to_string(id));
      }
    }
  }
  const auto& c = state.config_;
  state.t_ += 1;
  const double t = static_cast<double>(state.t_);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t id = 0; id < params.size(); ++id) {
    auto it = grads.find(id);
    auto& m = state.m_[id];
    auto& v = state.v_[id];
    auto& p = params[id];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double g = it == grads.end() ? 0.0 : it->second[i];
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= c.learning_rate * mhat / (std::sqrt(vhat) + c.epsilon);
    }
  }
}

}  // namespace gnp
