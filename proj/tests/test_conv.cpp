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
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "gnp/conv.hpp"
#include "gnp/gradcheck.hpp"
#include "oracles.hpp"

namespace gnp {
namespace {

using oracle::conv_bruteforce;
using oracle::random_tensor;

TEST(Conv, OneByOneIsScalarMultiply) {
  const Tensor out = conv_forward(Tensor({1, 1}, {2.0}), Tensor({1, 1, 1}, {3.0}), Tensor({1}));
  EXPECT_EQ(out, Tensor({1, 1}, {6.0}));
}

TEST(Conv, ZeroPaddingAtTheEdges) {
  const double a = 0.7, b = -1.3, c = 2.9;
  const Tensor out =
      conv_forward(Tensor({3, 1}, {1, 0, 0}), Tensor({3, 1, 1}, {a, b, c}), Tensor({1}));
  EXPECT_EQ(out, Tensor({3, 1}, {b, a, 0.0}));
}

TEST(Conv, MatchesBruteForceOn100RandomShapes) {
  Rng rng(7);
  std::uniform_int_distribution<std::size_t> len(1, 9), ch(1, 4), half(0, 2);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const bool two_d = trial % 2 == 1;
    const std::size_t cin = ch(rng), cout = ch(rng);
    const std::size_t kh = 2 * half(rng) + 1, kw = 2 * half(rng) + 1;
    const Tensor x = two_d ? random_tensor({len(rng), len(rng), cin}, rng)
                           : random_tensor({len(rng), cin}, rng);
    const Tensor w = two_d ? random_tensor({kh, kw, cin, cout}, rng)
                           : random_tensor({kw, cin, cout}, rng);
    const Tensor bias = random_tensor({cout}, rng);
    const Tensor fast = conv_forward(x, w, bias);
    const Tensor slow = conv_bruteforce(x, w, bias);
    ASSERT_EQ(fast.shape(), slow.shape());
    for (std::size_t i = 0; i < fast.size(); ++i) worst = std::max(worst, std::abs(fast[i] - slow[i]));
  }
  EXPECT_LT(worst, 1e-12);
}

TEST(Conv, ShapeErrorsNameBothShapes) {
  const Tensor x({5, 2});
  try {
    conv_forward(x, Tensor({3, 3, 1}), Tensor({1}));
    FAIL() << "channel mismatch accepted";
  } catch (const ShapeError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("[5, 2]"), std::string::npos) << what;
    EXPECT_NE(what.find("[3, 3, 1]"), std::string::npos) << what;
  }
  EXPECT_THROW(conv_forward(x, Tensor({4, 2, 1}), Tensor({1})), ShapeError);  // even kernel
  EXPECT_THROW(conv_forward(x, Tensor({3, 2, 1}), Tensor({2})), ShapeError);  // bias length
}

TEST(Conv, LinearInInputAndWeights) {
  Rng rng(8);
  const Tensor x1 = random_tensor({6, 5, 2}, rng), x2 = random_tensor({6, 5, 2}, rng);
  const Tensor w = random_tensor({3, 3, 2, 3}, rng);
  const Tensor zero({3});
  Tensor sum = x1;
  sum += x2;
  Tensor expect = conv_forward(x1, w, zero);
  expect += conv_forward(x2, w, zero);
  const Tensor got = conv_forward(sum, w, zero);
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], expect[i], 1e-12);
}

TEST(Conv, SumOfConvGradientMatchesFiniteDifferences) {
  Rng rng(9);
  for (bool two_d : {false, true}) {
    const Tensor x = two_d ? random_tensor({5, 4, 2}, rng) : random_tensor({7, 2}, rng);
    const Tensor w = two_d ? random_tensor({3, 3, 2, 3}, rng) : random_tensor({5, 2, 3}, rng);
    const ScalarFn fn = [](Tape&, const std::vector<Var>& v) {
      Var y = ad::conv(v[0], v[1], v[2]);
      return ad::sum(ad::mul(y, y));
    };
    const std::vector<Tensor> params = {x, w, random_tensor({3}, rng)};
    std::size_t total = 0;
    for (const auto& p : params) total += p.size();
    EXPECT_LT(check_gradients(fn, params, total), 1e-4) << (two_d ? "2D" : "1D");
  }
}

}  // namespace
}  // namespace gnp
