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
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "gnp/autodiff.hpp"
#include "gnp/gp.hpp"
#include "gnp/taskgen.hpp"

namespace gnp {

/// Uniform grid lower + k / points_per_unit, k = 0..size-1.
struct Grid1D {
  double lower = 0.0;
  double points_per_unit = 20.0;
  std::size_t size = 0;

  double spacing() const noexcept { return 1.0 / points_per_unit; }
  double upper() const noexcept { return node(size - 1); }
  double node(std::size_t k) const noexcept {
    return lower + static_cast<double>(k) / points_per_unit;
  }
  std::vector<double> nodes() const {
    std::vector<double> z(size);
    for (std::size_t k = 0; k < size; ++k) z[k] = node(k);
    return z;
  }
};

/// Product grid Z with Z_ij = (z_i, z_j).
struct Grid2D {
  Grid1D axis;

  std::size_t size() const noexcept { return axis.size; }
  std::pair<double, double> node(std::size_t i, std::size_t j) const noexcept {
    return {axis.node(i), axis.node(j)};
  }
};

/// Grids covering [min - margin, max + margin] of all context and target
/// inputs (and of `extent`, when given). M = ceil(span * ppu) + 1 nodes at
/// spacing exactly 1 / ppu, so the grid shifts rigidly with its inputs.
inline std::pair<Grid1D, Grid2D> build_grids(const Dataset& context,
                                             std::span<const double> targets,
                                             double points_per_unit = 20.0, double margin = 0.1,
                                             std::optional<Interval> extent = std::nullopt) {
  if (!(points_per_unit > 0.0) || margin < 0.0) {
    throw std::invalid_argument("build_grids: points_per_unit must be > 0 and margin >= 0");
  }
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (double x : context.x) lo = std::min(lo, x), hi = std::max(hi, x);
  for (double x : targets) lo = std::min(lo, x), hi = std::max(hi, x);
  if (extent) lo = std::min(lo, extent->lo), hi = std::max(hi, extent->hi);
  if (!std::isfinite(lo) || !std::isfinite(hi)) {
    throw std::invalid_argument("build_grids: no inputs to cover");
  }
  lo -= margin;
  hi += margin;
  const double cells = std::ceil((hi - lo) * points_per_unit - 1e-9);
  Grid1D g{lo, points_per_unit, std::max<std::size_t>(2, static_cast<std::size_t>(cells) + 1)};
  return {g, Grid2D{g}};
}

/// Context sorted by (x, y), so that encodings do not depend on input order.
inline Dataset canonical_order(const Dataset& d) {
  d.validate();
  std::vector<std::size_t> idx(d.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return std::pair(d.x[a], d.y[a]) < std::pair(d.x[b], d.y[b]);
  });
  Dataset out;
  for (auto i : idx) {
    out.x.push_back(d.x[i]);
    out.y.push_back(d.y[i]);
  }
  return out;
}

namespace detail {

inline Var row_constant(Tape& tape, std::span<const double> v) {
  return tape.constant(Tensor({1, v.size()}, std::vector<double>(v.begin(), v.end())));
}

}  // namespace detail

/// 1D set encoding on the grid: channel 0 is the data channel
/// sum_i y_i psi(z - x_i), channel 1 the density channel sum_i psi(z - x_i),
/// with psi an EQ bump of the given lengthscale. Shape M x 2.
inline Var encode_mean(Tape& tape, const Dataset& context, const Grid1D& grid,
                       const Var& lengthscale) {
  const Dataset ctx = canonical_order(context);
  const auto z = grid.nodes();
  const std::size_t m = grid.size;
  Var bumps = ad::bump_matrix(ctx.x, z, lengthscale);  // N x M
  const std::vector<double> ones(ctx.size(), 1.0);
  Var data = ad::reshape(ad::matmul(detail::row_constant(tape, ctx.y), bumps), {m});
  Var density = ad::reshape(ad::matmul(detail::row_constant(tape, ones), bumps), {m});
  return ad::stack_channels({data, density});
}

inline Tensor encode_mean(const Dataset& context, const Grid1D& grid, double lengthscale) {
  Tape tape;
  return encode_mean(tape, context, grid, tape.constant(Tensor::scalar(lengthscale))).value();
}

/// 2D encoding H (M x M x 3): data channel sum_i y_i psi(Z - (x_i, x_i)),
/// density channel sum_i psi(Z - (x_i, x_i)) and the identity source channel.
/// The 2D EQ bump factorizes, so both sums are B^T diag(.) B with B the
/// N x M matrix of 1D bumps.
inline Var encode_kernel(Tape& tape, const Dataset& context, const Grid2D& grid,
                         const Var& lengthscale, bool source_channel = true) {
  const Dataset ctx = canonical_order(context);
  const auto z = grid.axis.nodes();
  const std::size_t m = grid.size();
  Var bumps = ad::bump_matrix(ctx.x, z, lengthscale);
  Var bt = ad::transpose(bumps);
  Var data = ad::matmul(bt, ad::scale_rows(bumps, ctx.y));
  Var density = ad::matmul(bt, bumps);
  Tensor eye({m, m});
  if (source_channel) {
    for (std::size_t i = 0; i < m; ++i) eye(i, i) = 1.0;
  }
  return ad::stack_channels({data, density, tape.constant(std::move(eye))});
}

inline Tensor encode_kernel(const Dataset& context, const Grid2D& grid, double lengthscale) {
  Tape tape;
  return encode_kernel(tape, context, grid, tape.constant(Tensor::scalar(lengthscale))).value();
}

}  // namespace gnp
