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
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gnp/kernels.hpp"
#include "gnp/linalg.hpp"
#include "gnp/rng.hpp"

namespace gnp {

/// Finite set of (input, output) observations. May be empty.
struct Dataset {
  std::vector<double> x;
  std::vector<double> y;

  std::size_t size() const noexcept { return x.size(); }
  bool empty() const noexcept { return x.empty(); }

  void validate() const {
    if (x.size() != y.size()) {
      throw std::invalid_argument("dataset has " + std::to_string(x.size()) + " inputs but " +
                                  std::to_string(y.size()) + " outputs");
    }
  }

  bool operator==(const Dataset&) const = default;
};

/// Gaussian finite-dimensional distribution N(mean, cov) over index set x.
struct GaussianFDD {
  std::vector<double> x;
  Vector mean;
  Matrix cov;

  Eigen::Index dim() const noexcept { return mean.size(); }

  void validate(double tol = 1e-10) const {
    if (cov.rows() != mean.size() || cov.cols() != mean.size()) {
      throw std::invalid_argument("GaussianFDD: covariance is " + std::to_string(cov.rows()) +
                                  "x" + std::to_string(cov.cols()) + " for mean of length " +
                                  std::to_string(mean.size()));
    }
    if (!is_psd(cov, tol, tol)) {
      throw std::invalid_argument("GaussianFDD: covariance is not symmetric PSD");
    }
  }
};

inline Vector to_eigen(std::span<const double> v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

/// Draws y ~ N(0, K(x, x) + noise_var I).
inline std::vector<double> gp_sample(const KernelSpec& spec, std::span<const double> x,
                                     double noise_var, Rng& rng) {
  if (x.empty()) throw std::invalid_argument("gp_sample: empty input set");
  if (noise_var < 0.0) throw std::invalid_argument("gp_sample: negative noise variance");
  Matrix k = kernel_eval(spec, x, x);
  k.diagonal().array() += noise_var;
  const auto chol = cholesky_safe(k);
  std::normal_distribution<double> normal;
  Vector z(k.rows());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = normal(rng);
  const Vector y = chol.lower * z;
  return {y.data(), y.data() + y.size()};
}

/// Posterior of the noiseless function at the targets given noisy context
/// observations. An empty context returns the prior N(0, K(t, t)).
inline GaussianFDD gp_posterior(const KernelSpec& spec, const Dataset& context, double noise_var,
                                std::span<const double> targets) {
  context.validate();
  if (!(noise_var > 0.0)) throw std::invalid_argument("gp_posterior: noise_var must be > 0");
  GaussianFDD out;
  out.x.assign(targets.begin(), targets.end());
  const Matrix ktt = kernel_eval(spec, targets, targets);
  if (context.empty()) {
    out.mean = Vector::Zero(ktt.rows());
    out.cov = ktt;
    return out;
  }
  Matrix kcc = kernel_eval(spec, context.x, context.x);
  kcc.diagonal().array() += noise_var;
  const Matrix kct = kernel_eval(spec, context.x, targets);
  const auto chol = cholesky_safe(kcc);
  const auto L = chol.lower.triangularView<Eigen::Lower>();
  const Vector alpha =
      chol.lower.transpose().triangularView<Eigen::Upper>().solve(L.solve(to_eigen(context.y)));
  const Matrix v = L.solve(kct);
  out.mean = kct.transpose() * alpha;
  out.cov = symmetrize(ktt - v.transpose() * v);
  return out;
}

/// Exact log N(y | mean, cov + extra_diag I). Throws if the covariance is not
/// positive definite.
inline double gaussian_logpdf(std::span<const double> y, const GaussianFDD& fdd,
                              double extra_diag = 0.0) {
  if (static_cast<Eigen::Index>(y.size()) != fdd.dim() || fdd.cov.rows() != fdd.dim()) {
    throw std::invalid_argument("gaussian_logpdf: dimension mismatch (" +
                                std::to_string(y.size()) + " vs " + std::to_string(fdd.dim()) +
                                ")");
  }
  Matrix k = fdd.cov;
  k.diagonal().array() += extra_diag;
  Eigen::LLT<Matrix> llt(k);
  if (llt.info() != Eigen::Success) {
    throw LinalgError("gaussian_logpdf: covariance is not positive definite");
  }
  const Vector r = to_eigen(y) - fdd.mean;
  const Vector z = llt.matrixL().solve(r);
  const double n = static_cast<double>(y.size());
  return -0.5 * z.squaredNorm() - 0.5 * logdet_from_cholesky(llt.matrixL()) -
         0.5 * n * std::log(2.0 * std::numbers::pi);
}

inline double gaussian_logpdf(const Vector& y, const GaussianFDD& fdd, double extra_diag = 0.0) {
  return gaussian_logpdf(std::span<const double>(y.data(), static_cast<std::size_t>(y.size())),
                         fdd, extra_diag);
}

/// Draws one sample from N(mean, cov).
inline Vector sample_gaussian(const GaussianFDD& fdd, Rng& rng) {
  const auto chol = cholesky_safe(fdd.cov);
  std::normal_distribution<double> normal;
  Vector z(fdd.dim());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = normal(rng);
  return fdd.mean + chol.lower * z;
}

}  // namespace gnp
