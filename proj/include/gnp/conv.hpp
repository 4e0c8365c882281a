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
#include <cstddef>
#include <string>

#include "gnp/autodiff.hpp"

namespace gnp {

/// Shape checks shared by the 1D and 2D convolutions. Input is channels-last
/// (length x C or height x width x C); weights are (taps..., C_in, C_out).
inline void check_conv_shapes(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  const std::size_t r = input.rank();
  if ((r != 2 && r != 3) || weights.rank() != r + 1) {
    throw ShapeError("conv: input/weight rank mismatch", input.shape(), weights.shape());
  }
  const std::size_t spatial = r - 1;
  for (std::size_t a = 0; a < spatial; ++a) {
    if (weights.dim(a) % 2 == 0) {
      throw ShapeError("conv: kernel size must be odd", input.shape(), weights.shape());
    }
  }
  if (weights.dim(spatial) != input.dim(spatial)) {
    throw ShapeError("conv: input channels do not match weight channels", input.shape(),
                     weights.shape());
  }
  if (bias.rank() != 1 || bias.dim(0) != weights.dim(spatial + 1)) {
    throw ShapeError("conv: bias length does not match output channels", bias.shape(),
                     weights.shape());
  }
}

namespace detail {

// All convolutions are treated as 2D with height 1 for the 1D case.
struct ConvDims {
  std::size_t h, w, cin, cout, kh, kw;
};

inline ConvDims conv_dims(const Tensor& input, const Tensor& weights) {
  if (input.rank() == 2) {
    return {1, input.dim(0), input.dim(1), weights.dim(2), 1, weights.dim(0)};
  }
  return {input.dim(0), input.dim(1), input.dim(2), weights.dim(3), weights.dim(0),
          weights.dim(1)};
}

inline void conv_forward_raw(const ConvDims& d, const double* in, const double* w,
                             const double* b, double* out) {
  const long rh = static_cast<long>(d.kh / 2), rw = static_cast<long>(d.kw / 2);
  const long H = static_cast<long>(d.h), W = static_cast<long>(d.w);
  for (long y = 0; y < H; ++y) {
    for (long x = 0; x < W; ++x) {
      double* o = out + (y * W + x) * d.cout;
      for (std::size_t co = 0; co < d.cout; ++co) o[co] = b[co];
    }
  }
  for (long dy = 0; dy < static_cast<long>(d.kh); ++dy) {
    const long oy = dy - rh;
    const long y0 = std::max(0L, -oy), y1 = std::min(H, H - oy);
    for (long dx = 0; dx < static_cast<long>(d.kw); ++dx) {
      const long ox = dx - rw;
      const long x0 = std::max(0L, -ox), x1 = std::min(W, W - ox);
      const double* wt = w + (dy * static_cast<long>(d.kw) + dx) * d.cin * d.cout;
      for (long y = y0; y < y1; ++y) {
        for (long x = x0; x < x1; ++x) {
          const double* i = in + ((y + oy) * W + (x + ox)) * d.cin;
          double* o = out + (y * W + x) * d.cout;
          for (std::size_t ci = 0; ci < d.cin; ++ci) {
            const double v = i[ci];
            const double* wr = wt + ci * d.cout;
            for (std::size_t co = 0; co < d.cout; ++co) o[co] += v * wr[co];
          }
        }
      }
    }
  }
}

inline void conv_backward_raw(const ConvDims& d, const double* in, const double* w,
                              const double* gout, double* gin, double* gw, double* gb) {
  const long rh = static_cast<long>(d.kh / 2), rw = static_cast<long>(d.kw / 2);
  const long H = static_cast<long>(d.h), W = static_cast<long>(d.w);
  if (gb) {
    for (long p = 0; p < H * W; ++p)
      for (std::size_t co = 0; co < d.cout; ++co) gb[co] += gout[p * d.cout + co];
  }
  for (long dy = 0; dy < static_cast<long>(d.kh); ++dy) {
    const long oy = dy - rh;
    const long y0 = std::max(0L, -oy), y1 = std::min(H, H - oy);
    for (long dx = 0; dx < static_cast<long>(d.kw); ++dx) {
      const long ox = dx - rw;
      const long x0 = std::max(0L, -ox), x1 = std::min(W, W - ox);
      const std::size_t tap = (dy * static_cast<long>(d.kw) + dx) * d.cin * d.cout;
      for (long y = y0; y < y1; ++y) {
        for (long x = x0; x < x1; ++x) {
          const std::size_t ip = ((y + oy) * W + (x + ox)) * d.cin;
          const double* g = gout + (y * W + x) * d.cout;
          for (std::size_t ci = 0; ci < d.cin; ++ci) {
            const double* wr = w + tap + ci * d.cout;
            if (gin) {
              double acc = 0.0;
              for (std::size_t co = 0; co < d.cout; ++co) acc += g[co] * wr[co];
              gin[ip + ci] += acc;
            }
            if (gw) {
              const double v = in[ip + ci];
              double* gwr = gw + tap + ci * d.cout;
              for (std::size_t co = 0; co < d.cout; ++co) gwr[co] += v * g[co];
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

/// "Same" zero-padded convolution on plain tensors (no tape).
inline Tensor conv_forward(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  check_conv_shapes(input, weights, bias);
  const auto d = detail::conv_dims(input, weights);
  Shape os = input.shape();
  os.back() = d.cout;
  Tensor out(os);
  detail::conv_forward_raw(d, input.data().data(), weights.data().data(), bias.data().data(),
                           out.data().data());
  return out;
}

namespace ad {

/// Differentiable "same" convolution; rank-2 input is 1D, rank-3 is 2D.
inline Var conv(const Var& input, const Var& weights, const Var& bias) {
  detail::require_same_tape(input, weights);
  detail::require_same_tape(input, bias);
  Tensor out = conv_forward(input.value(), weights.value(), bias.value());
  const auto d = gnp::detail::conv_dims(input.value(), weights.value());
  const auto xi = input.id(), wi = weights.id(), bi = bias.id();
  return input.tape().record("conv", std::move(out), {xi, wi, bi},
      [d, xi, wi, bi](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        double* gin = t.requires_grad(xi) ? t.grad(xi).data().data() : nullptr;
        double* gw = t.requires_grad(wi) ? t.grad(wi).data().data() : nullptr;
        double* gb = t.requires_grad(bi) ? t.grad(bi).data().data() : nullptr;
        gnp::detail::conv_backward_raw(d, t.value(xi).data().data(), t.value(wi).data().data(),
                                       g.data().data(), gin, gw, gb);
      });
}

}  // namespace ad
}  // namespace gnp
