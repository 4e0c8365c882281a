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
#include <memory>
#include <numbers>
#include <span>
#include <vector>

#include "gnp/autodiff.hpp"
#include "gnp/linalg.hpp"

namespace gnp {

inline Matrix to_matrix(const Tensor& t) {
  if (t.rank() != 2) throw ShapeError("to_matrix: rank-2 tensor expected", t.shape(), Shape{});
  return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      t.data().data(), static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(t.dim(1)));
}

inline Tensor from_matrix(const Matrix& m) {
  Tensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      t.data().data(), m.rows(), m.cols()) = m;
  return t;
}

inline Vector to_vector(const Tensor& t) {
  return Eigen::Map<const Vector>(t.data().data(), static_cast<Eigen::Index>(t.size()));
}

inline Tensor from_vector(const Vector& v) {
  return Tensor({static_cast<std::size_t>(v.size())}, std::vector<double>(v.data(), v.data() + v.size()));
}

namespace ad {

/// log N(y | mean, cov) for constant observations y. The covariance is
/// factorized with the cholesky_safe jitter ladder.
inline Var gaussian_logpdf(std::span<const double> y, const Var& mean, const Var& cov,
                           double max_jitter = kDefaultMaxJitter) {
  detail::require_same_tape(mean, cov);
  const std::size_t n = y.size();
  if (mean.shape() != Shape{n} || cov.shape() != Shape{n, n}) {
    throw ShapeError("gaussian_logpdf: mean/cov do not match observation count " +
                         std::to_string(n),
                     mean.shape(), cov.shape());
  }
  const Matrix k = to_matrix(cov.value());
  auto chol = std::make_shared<CholeskyResult>(cholesky_safe(k, max_jitter));
  const Vector r = Eigen::Map<const Vector>(y.data(), static_cast<Eigen::Index>(n)) -
                   to_vector(mean.value());
  const Vector z = chol->lower.triangularView<Eigen::Lower>().solve(r);
  auto alpha = std::make_shared<Vector>(
      chol->lower.transpose().triangularView<Eigen::Upper>().solve(z));
  const double logp = -0.5 * z.squaredNorm() - 0.5 * logdet_from_cholesky(chol->lower) -
                      0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
  const auto mi = mean.id(), ci = cov.id();
  return mean.tape().record("gaussian_logpdf", Tensor::scalar(logp), {mi, ci},
      [mi, ci, n, chol, alpha](Tape& t, std::size_t self) {
        const double g = t.grad(self)[0];
        if (t.requires_grad(mi)) {
          Tensor& gm = t.grad(mi);
          for (std::size_t i = 0; i < n; ++i) gm[i] += g * (*alpha)(static_cast<Eigen::Index>(i));
        }
        if (t.requires_grad(ci)) {
          Matrix inv = Matrix::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
          chol->lower.triangularView<Eigen::Lower>().solveInPlace(inv);
          chol->lower.transpose().triangularView<Eigen::Upper>().solveInPlace(inv);
          const Matrix d = 0.5 * g * ((*alpha) * alpha->transpose() - inv);
          Tensor& gc = t.grad(ci);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
              gc[i * n + j] += d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        }
      });
}

/// Differentiable nearest-PSD projection of a square matrix (symmetrize,
/// clip negative eigenvalues). The backward pass uses the divided-difference
/// form of the derivative of a spectral function.
inline Var psd_project(const Var& a) {
  const Tensor& A = a.value();
  if (A.rank() != 2 || A.dim(0) != A.dim(1)) {
    throw ShapeError("psd_project: square matrix expected", A.shape(), Shape{});
  }
  const std::size_t n = A.dim(0);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrize(to_matrix(A)));
  if (eig.info() != Eigen::Success) {
    throw LinalgError("psd_project: eigendecomposition did not converge");
  }
  auto q = std::make_shared<Matrix>(eig.eigenvectors());
  auto lambda = std::make_shared<Vector>(eig.eigenvalues());
  const Vector clipped = lambda->cwiseMax(0.0);
  const Matrix out = symmetrize((*q) * clipped.asDiagonal() * q->transpose());
  const auto ai = a.id();
  return a.tape().record("psd_project", from_matrix(out), {ai},
      [ai, n, q, lambda](Tape& t, std::size_t self) {
        const Matrix g = to_matrix(t.grad(self));
        const auto ni = static_cast<Eigen::Index>(n);
        Matrix gamma(ni, ni);
        for (Eigen::Index i = 0; i < ni; ++i) {
          for (Eigen::Index j = 0; j < ni; ++j) {
            const double li = (*lambda)(i), lj = (*lambda)(j);
            const double scale = std::max({1.0, std::abs(li), std::abs(lj)});
            if (std::abs(li - lj) > 1e-12 * scale) {
              gamma(i, j) = (std::max(li, 0.0) - std::max(lj, 0.0)) / (li - lj);
            } else {
              gamma(i, j) = li > 0.0 ? 1.0 : (li < 0.0 ? 0.0 : 0.5);
            }
          }
        }
        const Matrix inner = gamma.cwiseProduct(q->transpose() * g * (*q));
        const Matrix gb = (*q) * inner * q->transpose();
        const Matrix ga = symmetrize(gb);
        Tensor& gt = t.grad(ai);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < n; ++j)
            gt[i * n + j] += ga(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      });
}

}  // namespace ad
}  // namespace gnp
