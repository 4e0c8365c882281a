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
#include <concepts>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gnp/gp.hpp"
#include "gnp/linalg.hpp"
#include "gnp/rng.hpp"

namespace gnp {

/// KL(p, q) for Gaussians split as value = (cov_term + mean_term) / 2.
struct KLReport {
  double value = 0.0;
  double mean_term = 0.0;  // (m1 - m2)^T K2^-1 (m1 - m2)
  double cov_term = 0.0;   // log(|K2|/|K1|) + tr(K2^-1 K1) - n
};

/// Mixture of Gaussians on a shared index set.
struct MixtureFDD {
  std::vector<double> weights;
  std::vector<GaussianFDD> components;

  Eigen::Index dim() const { return components.empty() ? 0 : components.front().dim(); }

  void validate() const {
    if (weights.size() != components.size() || components.empty()) {
      throw std::invalid_argument("MixtureFDD: need one weight per component");
    }
    double total = 0.0;
    for (double w : weights) {
      if (w < 0.0) throw std::invalid_argument("MixtureFDD: negative weight");
      total += w;
    }
    if (std::abs(total - 1.0) > 1e-12) {
      throw std::invalid_argument("MixtureFDD: weights sum to " + std::to_string(total));
    }
    for (const auto& c : components) {
      if (c.dim() != dim() || c.cov.rows() != dim() || c.cov.cols() != dim()) {
        throw std::invalid_argument("MixtureFDD: components differ in dimension");
      }
    }
  }

  static MixtureFDD single(GaussianFDD g) { return {{1.0}, {std::move(g)}}; }
};

inline KLReport gaussian_kl(const GaussianFDD& p, const GaussianFDD& q) {
  const Eigen::Index n = p.dim();
  if (q.dim() != n || p.cov.rows() != n || q.cov.rows() != n) {
    throw std::invalid_argument("gaussian_kl: dimension mismatch");
  }
  Eigen::LLT<Matrix> lq(q.cov);
  if (lq.info() != Eigen::Success) {
    throw LinalgError("gaussian_kl: second covariance is singular or not positive definite");
  }
  Eigen::LLT<Matrix> lp(p.cov);
  if (lp.info() != Eigen::Success) {
    throw LinalgError("gaussian_kl: first covariance is singular or not positive definite");
  }
  const Matrix lq_mat = lq.matrixL();
  const Matrix lp_mat = lp.matrixL();
  const Vector diff = p.mean - q.mean;
  const Vector z = lq.matrixL().solve(diff);
  // tr(K2^-1 K1) = ||L2^-1 L1||_F^2
  const Matrix w = lq.matrixL().solve(lp_mat);
  KLReport r;
  r.mean_term = z.squaredNorm();
  r.cov_term = logdet_from_cholesky(lq_mat) - logdet_from_cholesky(lp_mat) + w.squaredNorm() -
               static_cast<double>(n);
  r.value = 0.5 * (r.cov_term + r.mean_term);
  return r;
}

/// The moment-matched Gaussian N(mu).
inline GaussianFDD moment_match(const MixtureFDD& mu) {
  mu.validate();
  const Eigen::Index n = mu.dim();
  GaussianFDD out;
  out.x = mu.components.front().x;
  out.mean = Vector::Zero(n);
  for (std::size_t i = 0; i < mu.weights.size(); ++i) {
    out.mean += mu.weights[i] * mu.components[i].mean;
  }
  out.cov = Matrix::Zero(n, n);
  for (std::size_t i = 0; i < mu.weights.size(); ++i) {
    const Vector d = mu.components[i].mean - out.mean;
    out.cov += mu.weights[i] * (mu.components[i].cov + d * d.transpose());
  }
  out.cov = symmetrize(out.cov);
  return out;
}

/// G(mu, nu) = KL(N(mu), nu).
inline double gaussian_divergence(const MixtureFDD& mu, const GaussianFDD& nu) {
  return gaussian_kl(moment_match(mu), nu).value;
}

/// Marginal on a subset of coordinates.
inline GaussianFDD project(const GaussianFDD& g, std::span<const std::size_t> idx) {
  GaussianFDD out;
  const auto n = static_cast<Eigen::Index>(idx.size());
  out.mean.resize(n);
  out.cov.resize(n, n);
  for (Eigen::Index a = 0; a < n; ++a) {
    const auto i = static_cast<Eigen::Index>(idx[static_cast<std::size_t>(a)]);
    if (!g.x.empty()) out.x.push_back(g.x[static_cast<std::size_t>(i)]);
    out.mean(a) = g.mean(i);
    for (Eigen::Index b = 0; b < n; ++b) {
      out.cov(a, b) = g.cov(i, static_cast<Eigen::Index>(idx[static_cast<std::size_t>(b)]));
    }
  }
  return out;
}

inline MixtureFDD project(const MixtureFDD& m, std::span<const std::size_t> idx) {
  MixtureFDD out;
  out.weights = m.weights;
  for (const auto& c : m.components) out.components.push_back(project(c, idx));
  return out;
}

template <class D>
concept LogDensity = requires(const D& d, const Vector& y) {
  { d.logpdf(y) } -> std::convertible_to<double>;
};

template <class D>
concept SampleableDensity = LogDensity<D> && requires(const D& d, Rng& rng) {
  { d.sample(rng) } -> std::convertible_to<Vector>;
};

/// Gaussian with a cached Cholesky factor.
class GaussianDensity {
 public:
  explicit GaussianDensity(GaussianFDD fdd) : fdd_(std::move(fdd)), llt_(fdd_.cov) {
    if (llt_.info() != Eigen::Success) {
      throw LinalgError("GaussianDensity: covariance is not positive definite");
    }
    const Matrix l = llt_.matrixL();
    log_norm_ = -0.5 * logdet_from_cholesky(l) -
                0.5 * static_cast<double>(fdd_.dim()) * std::log(2.0 * std::numbers::pi);
  }

  double logpdf(const Vector& y) const {
    const Vector z = llt_.matrixL().solve(y - fdd_.mean);
    return log_norm_ - 0.5 * z.squaredNorm();
  }

  Vector sample(Rng& rng) const {
    std::normal_distribution<double> normal;
    Vector z(fdd_.dim());
    for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = normal(rng);
    return fdd_.mean + llt_.matrixL() * z;
  }

  const GaussianFDD& fdd() const noexcept { return fdd_; }

 private:
  GaussianFDD fdd_;
  Eigen::LLT<Matrix> llt_;
  double log_norm_ = 0.0;
};

/// Exact density and sampler for a MixtureFDD.
class MixtureDensity {
 public:
  explicit MixtureDensity(const MixtureFDD& m) : weights_(m.weights) {
    m.validate();
    for (const auto& c : m.components) parts_.emplace_back(c);
  }

  double logpdf(const Vector& y) const {
    std::vector<double> terms;
    terms.reserve(parts_.size());
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < parts_.size(); ++i) {
      if (weights_[i] == 0.0) continue;
      terms.push_back(std::log(weights_[i]) + parts_[i].logpdf(y));
      top = std::max(top, terms.back());
    }
    double acc = 0.0;
    for (double t : terms) acc += std::exp(t - top);
    return top + std::log(acc);
  }

  Vector sample(Rng& rng) const {
    std::discrete_distribution<std::size_t> pick(weights_.begin(), weights_.end());
    return parts_[pick(rng)].sample(rng);
  }

 private:
  std::vector<double> weights_;
  std::vector<GaussianDensity> parts_;
};

struct MCEstimate {
  double estimate = 0.0;
  double std_error = 0.0;
};

/// Monte-Carlo KL(p, q) = E_p[log p - log q] with its standard error.
template <SampleableDensity P, LogDensity Q>
MCEstimate mc_kl(const P& p, const Q& q, std::size_t n_samples, Rng& rng) {
  if (n_samples < 2) throw std::invalid_argument("mc_kl: need at least two samples");
  double mean = 0.0, m2 = 0.0;
  for (std::size_t i = 0; i < n_samples; ++i) {
    const Vector y = p.sample(rng);
    const double d = p.logpdf(y) - q.logpdf(y);
    const double delta = d - mean;
    mean += delta / static_cast<double>(i + 1);
    m2 += delta * (d - mean);
  }
  const double var = m2 / static_cast<double>(n_samples - 1);
  return {mean, std::sqrt(var / static_cast<double>(n_samples))};
}

/// 4 n^2 (M v 1)^2 / sigma^2, the bound on the KL between n-dimensional
/// marginals of noisy processes with means and covariances bounded by M.
inline double kl_upper_bound(int n, double bound_m, double sigma2) {
  if (n < 2) throw std::invalid_argument("kl_upper_bound: n must be >= 2");
  if (!(bound_m > 0.0)) throw std::invalid_argument("kl_upper_bound: M must be > 0");
  if (!(sigma2 > 0.0)) throw std::invalid_argument("kl_upper_bound: sigma^2 must be > 0");
  const double m = std::max(bound_m, 1.0);
  const double nn = static_cast<double>(n);
  return 4.0 * nn * nn * m * m / sigma2;
}

/// Largest absolute mean or covariance entry.
inline double max_abs_moment(const GaussianFDD& g) {
  double m = 0.0;
  if (g.mean.size() > 0) m = g.mean.cwiseAbs().maxCoeff();
  if (g.cov.size() > 0) m = std::max(m, g.cov.cwiseAbs().maxCoeff());
  return m;
}

/// Prediction map restricted to finite index sets: (context, inputs) -> f.d.d.
using PredictionFn = std::function<GaussianFDD(const Dataset&, std::span<const double>)>;
using IndexSampler = std::function<std::vector<double>(Rng&, std::size_t)>;
using DatasetSampler = std::function<Dataset(Rng&)>;

struct AveragedKL {
  double estimate = 0.0;
  double std_error = 0.0;
  std::vector<double> terms;
  // Per term, the largest |mean| or |covariance| entry over both f.d.d.s.
  std::vector<double> moment_bounds;
};

/// MC estimate of E_{p(D) p(x)}[KL(P_x truth(D), P_x model(D))] over index
/// sets of size n. Both f.d.d.s get noise_var added to their diagonal.
inline AveragedKL averaged_kl(const PredictionFn& truth, const PredictionFn& model,
                              const IndexSampler& index_sampler,
                              const DatasetSampler& dataset_sampler, std::size_t n_outer,
                              std::size_t n, double noise_var, Rng& rng) {
  if (n < 2) throw std::invalid_argument("averaged_kl: index sets must have size >= 2");
  if (n_outer == 0) throw std::invalid_argument("averaged_kl: n_outer must be >= 1");
  AveragedKL out;
  for (std::size_t i = 0; i < n_outer; ++i) {
    const Dataset d = dataset_sampler(rng);
    const std::vector<double> x = index_sampler(rng, n);
    GaussianFDD p = truth(d, x);
    GaussianFDD q = model(d, x);
    p.cov.diagonal().array() += noise_var;
    q.cov.diagonal().array() += noise_var;
    out.terms.push_back(gaussian_kl(p, q).value);
    out.moment_bounds.push_back(std::max(max_abs_moment(p), max_abs_moment(q)));
  }
  double mean = 0.0;
  for (double t : out.terms) mean += t;
  mean /= static_cast<double>(n_outer);
  double var = 0.0;
  for (double t : out.terms) var += (t - mean) * (t - mean);
  out.estimate = mean;
  out.std_error = n_outer > 1 ? std::sqrt(var / static_cast<double>(n_outer - 1) /
                                        static_cast<double>(n_outer))
                            : 0.0;
  return out;
}

/// KL between the marginals on growing prefixes of `inputs`; a lower envelope
/// of the process-level KL (diagnostic only).
inline std::vector<double> kl_lower_envelope(const GaussianFDD& p, const GaussianFDD& q) {
  std::vector<double> out;
  std::vector<std::size_t> idx;
  for (Eigen::Index i = 0; i < p.dim(); ++i) {
    idx.push_back(static_cast<std::size_t>(i));
    out.push_back(gaussian_kl(project(p, idx), project(q, idx)).value);
  }
  return out;
}

}  // namespace gnp
