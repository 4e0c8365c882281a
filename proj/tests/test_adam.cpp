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
#include <limits>
#include <vector>

#include <gtest/gtest.h>

#include "gnp/adam.hpp"

namespace gnp {
namespace {

TEST(Adam, FirstStepMovesByLearningRate) {
  std::vector<Tensor> params = {Tensor::scalar(1.0)};
  AdamState state({.learning_rate = 0.1});
  adam_step(params, {{0, Tensor::scalar(1.0)}}, state);
  // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps).
  EXPECT_NEAR(params[0].item(), 1.0 - 0.1 / (1.0 + 1e-8), 1e-15);
  EXPECT_EQ(state.step(), 1u);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  std::vector<Tensor> params = {Tensor({2}, {0.5, -3.0}), Tensor::scalar(2.0)};
  const auto before = params;
  AdamState state;
  adam_step(params, {{0, Tensor({2})}, {1, Tensor::scalar(0.0)}}, state);
  adam_step(params, {}, state);
  EXPECT_EQ(params, before);
  EXPECT_EQ(state.step(), 2u);
}

TEST(Adam, MomentsMatchHandRecursion) {
  std::vector<Tensor> params = {Tensor::scalar(0.0)};
  const AdamConfig c{.learning_rate = 0.01};
  AdamState state(c);
  double m = 0.0, v = 0.0, p = 0.0;
  const std::vector<double> grads = {0.5, -1.0, 2.0, 0.25};
  for (std::size_t t = 1; t <= grads.size(); ++t) {
    const double g = grads[t - 1];
    adam_step(params, {{0, Tensor::scalar(g)}}, state);
    m = c.beta1 * m + (1 - c.beta1) * g;
    v = c.beta2 * v + (1 - c.beta2) * g * g;
    const double mh = m / (1 - std::pow(c.beta1, static_cast<double>(t)));
    const double vh = v / (1 - std::pow(c.beta2, static_cast<double>(t)));
    p -= c.learning_rate * mh / (std::sqrt(vh) + c.epsilon);
  }
  EXPECT_NEAR(params[0].item(), p, 1e-15);
  EXPECT_EQ(state.first_moments()[0].shape(), params[0].shape());
}

TEST(Adam, Deterministic) {
  auto run = [] {
    std::vector<Tensor> params = {Tensor({3}, {1, 2, 3})};
    AdamState state({.learning_rate = 0.05});
    for (int i = 0; i < 5; ++i) {
      adam_step(params, {{0, Tensor({3}, {0.1 * i, -0.3, 1.7})}}, state);
    }
    return params;
  };
  EXPECT_EQ(run(), run());
}

TEST(Adam, NonFiniteGradientNamesParameterAndChangesNothing) {
  std::vector<Tensor> params = {Tensor::scalar(1.0), Tensor({2}, {1.0, 2.0})};
  const auto before = params;
  AdamState state;
  try {
    adam_step(params,
              {{0, Tensor::scalar(1.0)},
               {1, Tensor({2}, {0.0, std::numeric_limits<double>::quiet_NaN()})}},
              state);
    FAIL() << "NaN gradient accepted";
  } catch (const NonFiniteGradient& e) {
    EXPECT_EQ(e.param_id(), 1u);
  }
  EXPECT_EQ(params, before);
  EXPECT_EQ(state.step(), 0u);
}

TEST(Adam, ShapeMismatchIsAnError) {
  std::vector<Tensor> params = {Tensor({2})};
  AdamState state;
  EXPECT_THROW(adam_step(params, {{0, Tensor({3})}}, state), ShapeError);
}

}  // namespace
}  // namespace gnp
