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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "gnp/autodiff.hpp"
#include "gnp/rng.hpp"

namespace gnp {

/// Scalar function of parameters, recorded on the given tape.
using ScalarFn = std::function<Var(Tape&, const std::vector<Var>&)>;

struct GradCheckOptions {
  double step = 1e-5;
  // Denominator floor, so entries with vanishing gradient are compared in
  // absolute terms.
  double floor = 1e-6;
  std::uint64_t seed = 0;
};

/// Max relative error between backward() and central differences over
/// probe_count randomly chosen parameter entries.
inline double check_gradients(const ScalarFn& fn, const std::vector<Tensor>& params,
                              std::size_t probe_count, const GradCheckOptions& opt = {}) {
  std::size_t total = 0;
  for (const auto& p : params) total += p.size();
  if (total == 0 || probe_count == 0) return 0.0;

  auto evaluate = [&](const std::vector<Tensor>& ps, Gradients* grads) {
    Tape tape;
    std::vector<Var> vars;
    for (std::size_t i = 0; i < ps.size(); ++i) vars.push_back(tape.parameter(ps[i], i));
    Var out = fn(tape, vars);
    if (grads) *grads = tape.backward(out);
    return out.value().item();
  };

  Gradients analytic;
  evaluate(params, &analytic);

  Rng rng(opt.seed);
  std::uniform_int_distribution<std::size_t> pick(0, total - 1);
  std::vector<Tensor> work = params;
  double worst = 0.0;
  for (std::size_t probe = 0; probe < std::min(probe_count, total); ++probe) {
    std::size_t flat = probe_count >= total ? probe : pick(rng);
    std::size_t pid = 0;
    while (flat >= params[pid].size()) flat -= params[pid++].size();
    const double orig = params[pid][flat];
    work[pid][flat] = orig + opt.step;
    const double up = evaluate(work, nullptr);
    work[pid][flat] = orig - opt.step;
    const double down = evaluate(work, nullptr);
    work[pid][flat] = orig;
    const double numeric = (up - down) / (2.0 * opt.step);
    const double a = analytic.at(pid)[flat];
    const double denom = std::max({std::abs(a), std::abs(numeric), opt.floor});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

}  // namespace gnp
