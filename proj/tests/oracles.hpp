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

#include <random>
#include <vector>

#include "gnp/rng.hpp"
#include "gnp/tensor.hpp"

namespace gnp::oracle {

inline Tensor random_tensor(Shape shape, Rng& rng) {
  std::normal_distribution<double> normal;
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = normal(rng);
  return t;
}

// Direct nested-loop "same" cross-correlation with zero padding, written
// against explicit 2D indices. 1D inputs are run as H = 1.
inline Tensor conv_bruteforce(const Tensor& x, const Tensor& w, const Tensor& b) {
  const bool one_d = x.rank() == 2;
  const std::size_t h = one_d ? 1 : x.dim(0);
  const std::size_t wd = one_d ? x.dim(0) : x.dim(1);
  const std::size_t kh = one_d ? 1 : w.dim(0);
  const std::size_t kw = one_d ? w.dim(0) : w.dim(1);
  const std::size_t cin = x.shape().back(), cout = w.shape().back();
  auto in = [&](long i, long j, std::size_t c) -> double {
    if (i < 0 || j < 0 || i >= static_cast<long>(h) || j >= static_cast<long>(wd)) return 0.0;
    return x.vec()[(static_cast<std::size_t>(i) * wd + static_cast<std::size_t>(j)) * cin + c];
  };
  auto wt = [&](std::size_t di, std::size_t dj, std::size_t ci, std::size_t co) {
    return w.vec()[((di * kw + dj) * cin + ci) * cout + co];
  };
  Shape os = x.shape();
  os.back() = cout;
  Tensor out(os);
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < wd; ++j) {
      for (std::size_t co = 0; co < cout; ++co) {
        double acc = b.vec()[co];
        for (std::size_t di = 0; di < kh; ++di) {
          for (std::size_t dj = 0; dj < kw; ++dj) {
            for (std::size_t ci = 0; ci < cin; ++ci) {
              const long ii = static_cast<long>(i + di) - static_cast<long>(kh / 2);
              const long jj = static_cast<long>(j + dj) - static_cast<long>(kw / 2);
              acc += wt(di, dj, ci, co) * in(ii, jj, ci);
            }
          }
        }
        out[(i * wd + j) * cout + co] = acc;
      }
    }
  }
  return out;
}

}  // namespace gnp::oracle
