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
#include <numbers>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "gnp/gp.hpp"
#include "gnp/kernels.hpp"
#include "gnp/linalg.hpp"

namespace gnp {
namespace {

Matrix random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c) {
  std::normal_distribution<double> normal;
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

TEST(Kernels, Examples) {
  const std::vector<double> zero = {0.0}, one = {1.0};
  EXPECT_DOUBLE_EQ(kernel_eval(KernelSpec::eq(), zero, zero)(0, 0), 1.0);
  EXPECT_NEAR(kernel_eval(KernelSpec::eq(), zero, one)(0, 0), 0.606531, 1e-6);
  EXPECT_DOUBLE_EQ(kernel_eval(KernelSpec::matern52(1.0), zero, zero)(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(kernel_eval(KernelSpec::weakly_periodic(), zero, zero)(0, 0), 1.0);
}

TEST(Kernels, MaternClosedForm) {
  const double l = 0.5, r = 0.3;
  const double s = std::sqrt(5.0) * r / l;
  EXPECT_NEAR(KernelSpec::matern52(l)(r), (1 + s + 5 * r * r / (3 * l * l)) * std::exp(-s), 1e-15);
}

TEST(Kernels, WeaklyPeriodicRepeatsUnderEnvelope) {
  const KernelSpec k = KernelSpec::weakly_periodic(2.0, 1.0, 1.0);
  EXPECT_NEAR(k(1.0), std::exp(-0.125), 1e-12);
  EXPECT_LT(k(0.5), k(1.0));
}

TEST(Kernels, StationaryAndValidated) {
  const std::vector<double> a = {0.2, 1.7}, b = {-0.4, 0.9};
  std::vector<double> as = a, bs = b;
  for (auto& v : as) v += 3.25;
  for (auto& v : bs) v += 3.25;
  const Matrix k1 = kernel_eval(KernelSpec::matern52(), a, b);
  const Matrix k2 = kernel_eval(KernelSpec::matern52(), as, bs);
  EXPECT_LT((k1 - k2).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_THROW(kernel_eval(KernelSpec::eq(-1.0), a, b), std::invalid_argument);
  EXPECT_THROW(kernel_eval(KernelSpec::weakly_periodic(1.0, 0.0), a, b), std::invalid_argument);
}

TEST(Kernels, JsonRoundTripRejectsUnknownKeys) {
  const KernelSpec k = KernelSpec::weakly_periodic(1.5, 0.8, 0.9);
  EXPECT_EQ(nlohmann::json(k).get<KernelSpec>(), k);
  EXPECT_THROW((nlohmann::json{{"kind", "eq"}, {"lenghtscale", 1.0}}.get<KernelSpec>()),
               std::invalid_argument);
}

TEST(GpSample, Reproducible) {
  const std::vector<double> x = {-1.0, 0.0, 2.0};
  Rng a(5), b(5);
  EXPECT_EQ(gp_sample(KernelSpec::eq(), x, 0.0025, a), gp_sample(KernelSpec::eq(), x, 0.0025, b));
}

TEST(GpSample, MarginalVarianceAndDistantCorrelation) {
  Rng rng(11);
  const std::vector<double> one = {0.0}, far = {0.0, 10.0};
  const int n = 10000;
  double ss = 0.0, s01 = 0.0, s0 = 0.0, s1 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double y = gp_sample(KernelSpec::eq(), one, 0.0025, rng)[0];
    ss += y * y;
    const auto p = gp_sample(KernelSpec::eq(), far, 0.0025, rng);
    s01 += p[0] * p[1];
    s0 += p[0] * p[0];
    s1 += p[1] * p[1];
  }
  EXPECT_NEAR(ss / n, 1.0025, 0.03 * 1.0025);
  EXPECT_NEAR(s01 / std::sqrt(s0 * s1), 0.0, 0.05);
}

TEST(GpPosterior, EmptyContextIsPrior) {
  const std::vector<double> t = {-0.5, 0.25, 1.0};
  const GaussianFDD post = gp_posterior(KernelSpec::eq(), Dataset{}, 0.01, t);
  EXPECT_EQ(post.mean, Vector::Zero(3));
  EXPECT_EQ(post.cov, kernel_eval(KernelSpec::eq(), t, t));
}

TEST(GpPosterior, NearNoiselessInterpolation) {
  const std::vector<double> t = {0.0};
  const GaussianFDD post = gp_posterior(KernelSpec::eq(), Dataset{{0.0}, {1.0}}, 1e-10, t);
  EXPECT_NEAR(post.mean(0), 1.0, 1e-8);
  EXPECT_NEAR(post.cov(0, 0), 0.0, 1e-8);
}

// Joint Gaussian over (context, targets), conditioned with the partition
// formula using an explicit inverse.
TEST(GpPosterior, MatchesJointConditioning) {
  Rng rng(12);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  std::normal_distribution<double> normal;
  for (auto spec : {KernelSpec::eq(), KernelSpec::matern52(), KernelSpec::weakly_periodic()}) {
    Dataset ctx;
    for (int i = 0; i < 3; ++i) ctx.x.push_back(u(rng)), ctx.y.push_back(normal(rng));
    const std::vector<double> t = {u(rng), u(rng), u(rng), u(rng)};
    const double noise = 0.0025;
    std::vector<double> all = ctx.x;
    all.insert(all.end(), t.begin(), t.end());
    const Matrix joint = kernel_eval(spec, all, all);
    Matrix a = joint.topLeftCorner(3, 3);
    a.diagonal().array() += noise;
    const Matrix b = joint.topRightCorner(3, 4);
    const Matrix c = joint.bottomRightCorner(4, 4);
    const Matrix ainv = a.inverse();
    const Vector y = Eigen::Map<const Vector>(ctx.y.data(), 3);
    const Vector mean = b.transpose() * ainv * y;
    const Matrix cov = c - b.transpose() * ainv * b;
    const GaussianFDD post = gp_posterior(spec, ctx, noise, t);
    EXPECT_LT((post.mean - mean).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LT((post.cov - cov).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(GpPosterior, RejectsNonPositiveNoise) {
  const std::vector<double> t = {0.0};
  EXPECT_THROW(gp_posterior(KernelSpec::eq(), Dataset{{0.0}, {1.0}}, 0.0, t),
               std::invalid_argument);
}

TEST(GaussianLogpdf, Examples) {
  const double y0 = 0.0;
  const GaussianFDD std_normal{{0.0}, Vector::Zero(1), Matrix::Identity(1, 1)};
  EXPECT_NEAR(gaussian_logpdf(std::span<const double>(&y0, 1), std_normal), -0.918939, 1e-6);

  Matrix k(2, 2);
  k << 2.0, 0.3, 0.3, 0.5;
  const GaussianFDD g{{0, 1}, Vector::Constant(2, 0.7), k};
  const std::vector<double> at_mean = {0.7, 0.7};
  EXPECT_NEAR(gaussian_logpdf(at_mean, g),
              -0.5 * std::log(std::pow(2 * std::numbers::pi, 2) * k.determinant()), 1e-12);
}

TEST(GaussianLogpdf, MatchesExplicitInverseFormula) {
  Rng rng(13);
  const Matrix a = random_matrix(rng, 4, 4);
  const Matrix k = a * a.transpose() + 0.5 * Matrix::Identity(4, 4);
  const Vector m = random_matrix(rng, 4, 1);
  const Vector y = random_matrix(rng, 4, 1);
  const double extra = 0.1;
  const Matrix ke = k + extra * Matrix::Identity(4, 4);
  const double expect = -0.5 * (y - m).dot(ke.inverse() * (y - m)) -
                        0.5 * std::log(ke.determinant()) - 2.0 * std::log(2 * std::numbers::pi);
  EXPECT_NEAR(gaussian_logpdf(y, GaussianFDD{{}, m, k}, extra), expect, 1e-9);
}

TEST(GaussianLogpdf, NonPdIsAnError) {
  const std::vector<double> y = {0.0, 0.0};
  Matrix k(2, 2);
  k << 1.0, 2.0, 2.0, 1.0;
  EXPECT_THROW(gaussian_logpdf(y, GaussianFDD{{}, Vector::Zero(2), k}), LinalgError);
}

TEST(NearestPsd, Examples) {
  const Matrix eye = Matrix::Identity(3, 3);
  EXPECT_LT((nearest_psd(eye) - eye).cwiseAbs().maxCoeff(), 1e-12);
  Matrix a(2, 2);
  a << 1.0, 2.0, 2.0, 1.0;
  EXPECT_LT((nearest_psd(a) - Matrix::Constant(2, 2, 1.5)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(NearestPsd, PsdInputIsFixedPoint) {
  Rng rng(14);
  const Matrix b = random_matrix(rng, 5, 3);
  const Matrix psd = b * b.transpose();
  EXPECT_LT((nearest_psd(psd) - psd).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(NearestPsd, CloserThanRandomPsdCandidates) {
  Rng rng(15);
  for (int trial = 0; trial < 5; ++trial) {
    const Matrix a = random_matrix(rng, 4, 4);
    const Matrix sym = symmetrize(a);
    const double best = (sym - nearest_psd(a)).norm();
    for (int i = 0; i < 50; ++i) {
      const Matrix c = random_matrix(rng, 4, 4);
      const Matrix candidate = c * c.transpose() * 0.25;
      EXPECT_LE(best, (sym - candidate).norm());
    }
  }
}

TEST(CholeskySafe, Examples) {
  const Matrix eye = Matrix::Identity(3, 3);
  const auto r = cholesky_safe(eye);
  EXPECT_EQ(r.lower, eye);
  EXPECT_EQ(r.jitter, 0.0);

  Matrix ones = Matrix::Constant(2, 2, 1.0);
  const auto s = cholesky_safe(ones);
  EXPECT_LE(s.jitter, 1e-8);
  EXPECT_LT((s.lower * s.lower.transpose() - ones - s.jitter * Matrix::Identity(2, 2))
                .cwiseAbs()
                .maxCoeff(),
            1e-10);
}

TEST(CholeskySafe, ReconstructsAndGivesUp) {
  Rng rng(16);
  const Matrix a = random_matrix(rng, 6, 6);
  const Matrix k = a * a.transpose() + Matrix::Identity(6, 6);
  const auto r = cholesky_safe(k);
  EXPECT_LT((r.lower * r.lower.transpose() - k).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_THROW(cholesky_safe(-Matrix::Identity(2, 2)), LinalgError);
}

TEST(IsPsd, Detects) {
  Matrix a(2, 2);
  a << 1.0, 2.0, 2.0, 1.0;
  EXPECT_FALSE(is_psd(a));
  EXPECT_TRUE(is_psd(nearest_psd(a)));
}

}  // namespace
}  // namespace gnp
