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
#include <map>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>
#include <gtest/gtest.h>

#include "gnp/models.hpp"
#include "oracles.hpp"

namespace gnp {
namespace {

GNPConfig small_gnp(std::uint64_t seed) {
  GNPConfig c;
  c.points_per_unit = 8.0;
  c.mean_cnn = {3, 4, 5};
  c.kernel_cnn = {3, 4, 3};
  c.init_lengthscale = 0.25;
  c.tie_decoder = false;
  c.seed = seed;
  return c;
}

const Tensor& param(const PredictionModel& m, const std::string& name) {
  const auto& names = m.parameter_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return m.parameters()[i];
  }
  throw std::out_of_range("no parameter " + name);
}

void randomise_biases(PredictionModel& m, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 0.1);
  for (std::size_t i = 0; i < m.parameters().size(); ++i) {
    if (m.parameter_names()[i].ends_with(".bias")) {
      for (auto& v : m.parameters()[i].data()) v = normal(rng);
    }
  }
}

Dataset random_context(Rng& rng, std::size_t n, double lo = -2.0, double hi = 2.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::normal_distribution<double> normal;
  Dataset d;
  for (std::size_t i = 0; i < n; ++i) {
    d.x.push_back(u(rng));
    d.y.push_back(normal(rng));
  }
  return d;
}

double eq_bump(double a, double b, double l) { return std::exp(-0.5 * (a - b) * (a - b) / (l * l)); }

double softplus(double x) { return std::log1p(std::exp(x)); }

// Kernel path evaluated with nested loops and the brute-force convolution.
Matrix bruteforce_gnp_cov(const GNPModel& model, const Dataset& ctx, const std::vector<double>& t) {
  const GNPConfig& c = model.config();
  double lo = 1e300, hi = -1e300;
  for (double x : ctx.x) lo = std::min(lo, x), hi = std::max(hi, x);
  for (double x : t) lo = std::min(lo, x), hi = std::max(hi, x);
  lo -= c.margin;
  hi += c.margin;
  const auto m = static_cast<std::size_t>(std::ceil((hi - lo) * c.points_per_unit - 1e-9)) + 1;
  std::vector<double> z(m);
  for (std::size_t k = 0; k < m; ++k) z[k] = lo + static_cast<double>(k) / c.points_per_unit;

  const double lk = std::exp(param(model, "kernel.log_lengthscale").item());
  const double ld = std::exp(param(model, "kernel.decoder_log_lengthscale").item());
  Tensor h({m, m, 3});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      for (std::size_t n = 0; n < ctx.size(); ++n) {
        const double b = eq_bump(z[i], ctx.x[n], lk) * eq_bump(z[j], ctx.x[n], lk);
        h(i, j, 0) += ctx.y[n] * b;
        h(i, j, 1) += b;
      }
      h(i, j, 2) = i == j ? 1.0 : 0.0;
    }
  }
  Tensor x = h;
  for (std::size_t l = 0; l < c.kernel_cnn.layers; ++l) {
    const std::string prefix = "kernel.conv" + std::to_string(l);
    x = oracle::conv_bruteforce(x, param(model, prefix + ".weight"), param(model, prefix + ".bias"));
    if (l + 1 < c.kernel_cnn.layers) {
      for (auto& v : x.data()) v = v > 0.0 ? v : 0.1 * v;
    }
  }
  Matrix f(m, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) f(i, j) = x.vec()[i * m + j];
  Matrix psi(t.size(), m);
  for (std::size_t a = 0; a < t.size(); ++a)
    for (std::size_t k = 0; k < m; ++k) psi(a, k) = eq_bump(t[a], z[k], ld);
  Matrix cov = psi * f * f.transpose() * psi.transpose();
  cov.diagonal().array() += softplus(param(model, "noise.raw_variance").item());
  return cov;
}

TEST(Grid, SpecExample) {
  const std::vector<double> t = {1.0};
  const auto [g1, g2] = build_grids(Dataset{{0.0}, {0.0}}, t, 20.0, 0.1);
  EXPECT_DOUBLE_EQ(g1.lower, -0.1);
  EXPECT_EQ(g1.size, 25u);
  EXPECT_NEAR(g1.upper(), 1.1, 1e-12);
  EXPECT_EQ(g2.size(), 25u);
  EXPECT_DOUBLE_EQ(g1.spacing(), 0.05);
}

TEST(Grid, CoversInputsAndExtent) {
  Rng rng(50);
  for (int trial = 0; trial < 100; ++trial) {
    const Dataset ctx = random_context(rng, 4, -3.0, 3.0);
    const std::vector<double> t = {0.5};
    const auto [g, unused] = build_grids(ctx, t, 13.0, 0.2, Interval{-1.0, 1.0});
    for (double x : ctx.x) {
      EXPECT_LE(g.lower, x - 0.2 + 1e-12);
      EXPECT_GE(g.upper(), x + 0.2 - 1e-9);
    }
    EXPECT_LE(g.lower, -1.2 + 1e-12);
    EXPECT_GE(g.upper(), 1.2 - 1e-9);
  }
  EXPECT_THROW(build_grids(Dataset{}, std::vector<double>{}), std::invalid_argument);
  EXPECT_THROW(build_grids(Dataset{}, std::vector<double>{0.0}, 0.0), std::invalid_argument);
}

TEST(Encoding, MeanChannels) {
  const Dataset ctx{{0.0, 0.5}, {2.0, -1.0}};
  const auto [g, unused] = build_grids(ctx, std::vector<double>{0.0}, 10.0, 0.1);
  const Tensor enc = encode_mean(ctx, g, 0.2);
  ASSERT_EQ(enc.shape(), (Shape{g.size, 2}));
  for (std::size_t k = 0; k < g.size; ++k) {
    const double b0 = eq_bump(g.node(k), 0.0, 0.2), b1 = eq_bump(g.node(k), 0.5, 0.2);
    EXPECT_NEAR(enc(k, 0), 2.0 * b0 - b1, 1e-14);
    EXPECT_NEAR(enc(k, 1), b0 + b1, 1e-14);
  }
}

TEST(Encoding, KernelChannelsAndEmptyContext) {
  const Dataset ctx{{0.2}, {3.0}};
  const auto [g1, g2] = build_grids(ctx, std::vector<double>{0.6}, 5.0, 0.1);
  const Tensor h = encode_kernel(ctx, g2, 0.3);
  ASSERT_EQ(h.shape(), (Shape{g2.size(), g2.size(), 3}));
  for (std::size_t i = 0; i < g2.size(); ++i) {
    for (std::size_t j = 0; j < g2.size(); ++j) {
      const double b = eq_bump(g1.node(i), 0.2, 0.3) * eq_bump(g1.node(j), 0.2, 0.3);
      EXPECT_NEAR(h(i, j, 0), 3.0 * b, 1e-14);
      EXPECT_NEAR(h(i, j, 1), b, 1e-14);
      EXPECT_EQ(h(i, j, 2), i == j ? 1.0 : 0.0);
    }
  }
  const Tensor empty = encode_kernel(Dataset{}, g2, 0.3);
  for (std::size_t i = 0; i < g2.size(); ++i) {
    for (std::size_t j = 0; j < g2.size(); ++j) {
      EXPECT_EQ(empty(i, j, 0), 0.0);
      EXPECT_EQ(empty(i, j, 1), 0.0);
    }
  }
}

TEST(Encoding, DensityPeaksNearestTheContextPoint) {
  Rng rng(58);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  for (int trial = 0; trial < 50; ++trial) {
    const Dataset ctx{{u(rng)}, {1.0}};
    const auto [g1, g2] = build_grids(ctx, std::vector<double>{-2.0, 2.0}, 10.0, 0.1);
    const Tensor h = encode_kernel(ctx, g2, 0.15);
    std::size_t nearest = 0;
    for (std::size_t k = 1; k < g1.size; ++k) {
      if (std::abs(g1.node(k) - ctx.x[0]) < std::abs(g1.node(nearest) - ctx.x[0])) nearest = k;
    }
    std::size_t bi = 0, bj = 0;
    for (std::size_t i = 0; i < g1.size; ++i) {
      for (std::size_t j = 0; j < g1.size; ++j) {
        if (h(i, j, 1) > h(bi, bj, 1)) bi = i, bj = j;
      }
    }
    EXPECT_EQ(bi, nearest);
    EXPECT_EQ(bj, nearest);
  }
}

TEST(Encoding, DuplicatedPointDoublesChannels) {
  const Dataset once{{0.37}, {-0.8}}, twice{{0.37, 0.37}, {-0.8, -0.8}};
  const auto [g1, g2] = build_grids(once, std::vector<double>{-1.0, 1.0}, 10.0, 0.1);
  const Tensor a = encode_kernel(once, g2, 0.2), b = encode_kernel(twice, g2, 0.2);
  const Tensor ma = encode_mean(once, g1, 0.2), mb = encode_mean(twice, g1, 0.2);
  for (std::size_t i = 0; i < g1.size; ++i) {
    EXPECT_EQ(mb(i, 0), 2.0 * ma(i, 0));
    EXPECT_EQ(mb(i, 1), 2.0 * ma(i, 1));
    for (std::size_t j = 0; j < g1.size; ++j) {
      EXPECT_EQ(b(i, j, 0), 2.0 * a(i, j, 0));
      EXPECT_EQ(b(i, j, 1), 2.0 * a(i, j, 1));
      EXPECT_EQ(b(i, j, 2), a(i, j, 2));
    }
  }
}

TEST(GNPModel, MatchesBruteForce) {
  Rng rng(51);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    GNPModel model(small_gnp(seed));
    randomise_biases(model, rng);
    const Dataset ctx = random_context(rng, seed);
    const std::vector<double> t = {-1.5, -0.2, 0.4, 1.9};
    const GaussianFDD fdd = model.predict(ctx, t);
    const Matrix oracle = bruteforce_gnp_cov(model, ctx, t);
    EXPECT_LT((fdd.cov - oracle).cwiseAbs().maxCoeff(), 1e-12 * std::max(1.0, oracle.norm()));
  }
}

TEST(GNPModel, ZeroWeightsGiveNoiseOnly) {
  GNPModel model(small_gnp(3));
  for (auto& p : model.parameters()) {
    if (p.rank() > 0) p.fill(0.0);
  }
  Rng rng(52);
  const std::vector<double> t = {-0.3, 0.0, 0.8};
  const GaussianFDD fdd = model.predict(random_context(rng, 5), t);
  for (Eigen::Index i = 0; i < 3; ++i) {
    EXPECT_EQ(fdd.mean(i), 0.0);
    for (Eigen::Index j = 0; j < 3; ++j) {
      EXPECT_EQ(fdd.cov(i, j), i == j ? model.noise_var() : 0.0);
    }
  }
}

TEST(GNPModel, OutputShapesAndNoiseFloor) {
  Rng rng(53);
  GNPModel model(small_gnp(4));
  randomise_biases(model, rng);
  for (std::size_t n : {0u, 1u, 7u}) {
    for (std::size_t m : {1u, 5u, 20u}) {
      std::vector<double> t = random_context(rng, m).x;
      const GaussianFDD fdd = model.predict(random_context(rng, n), t);
      ASSERT_EQ(fdd.mean.size(), static_cast<Eigen::Index>(m));
      ASSERT_EQ(fdd.cov.rows(), static_cast<Eigen::Index>(m));
      ASSERT_EQ(fdd.cov.cols(), static_cast<Eigen::Index>(m));
      const Matrix sym = 0.5 * (fdd.cov + fdd.cov.transpose());
      const double lo = Eigen::SelfAdjointEigenSolver<Matrix>(sym).eigenvalues().minCoeff();
      EXPECT_GE(lo, model.noise_var() * (1.0 - 1e-10));
    }
  }
  EXPECT_THROW(model.predict(Dataset{}, std::vector<double>{}), std::invalid_argument);
}

TEST(GNPModel, PermutationInvariantBitwise) {
  Rng rng(54);
  GNPModel model(small_gnp(5));
  randomise_biases(model, rng);
  const Dataset ctx = random_context(rng, 8);
  Dataset shuffled;
  std::vector<std::size_t> idx = {3, 7, 0, 5, 1, 6, 2, 4};
  for (auto i : idx) shuffled.x.push_back(ctx.x[i]), shuffled.y.push_back(ctx.y[i]);
  const std::vector<double> t = {-1.0, 0.1, 1.3};
  const GaussianFDD a = model.predict(ctx, t), b = model.predict(shuffled, t);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.cov, b.cov);
}

TEST(GNPModel, TiedDecoderHasOneFewerParameter) {
  GNPConfig tied = small_gnp(6);
  tied.tie_decoder = true;
  EXPECT_EQ(GNPModel(small_gnp(6)).parameters().size(), GNPModel(tied).parameters().size() + 1);
}

TEST(GNPModel, ConfigValidation) {
  GNPConfig c = small_gnp(7);
  c.kernel_cnn.kernel = 4;
  EXPECT_THROW(GNPModel{c}, std::invalid_argument);
  c = small_gnp(7);
  c.kernel_cnn = {40, 4, 5};
  EXPECT_THROW(GNPModel{c}, std::invalid_argument);
  c = small_gnp(7);
  c.points_per_unit = 0.0;
  EXPECT_THROW(GNPModel{c}, std::invalid_argument);
}

TEST(GNPModel, NearestPsdModeIsPsd) {
  GNPConfig c = small_gnp(8);
  c.psd_mode = PsdMode::nearest_psd;
  GNPModel model(c);
  Rng rng(55);
  randomise_biases(model, rng);
  const std::vector<double> t = {-0.7, -0.6, 0.0, 1.1};
  const GaussianFDD fdd = model.predict(random_context(rng, 4), t);
  const double lo = Eigen::SelfAdjointEigenSolver<Matrix>(fdd.cov).eigenvalues().minCoeff();
  EXPECT_GE(lo, model.noise_var() * (1.0 - 1e-8));
}

TEST(ConvCNPModel, DiagonalWithFloor) {
  ConvCNPConfig c;
  c.points_per_unit = 8.0;
  c.cnn = {3, 4, 5};
  ConvCNPModel model(c);
  Rng rng(56);
  randomise_biases(model, rng);
  const std::vector<double> t = {-1.0, -0.9, 0.3, 2.0};
  const GaussianFDD fdd = model.predict(random_context(rng, 6), t);
  for (Eigen::Index i = 0; i < 4; ++i) {
    EXPECT_GE(fdd.cov(i, i), c.min_variance);
    for (Eigen::Index j = 0; j < 4; ++j) {
      if (i != j) {
        EXPECT_EQ(fdd.cov(i, j), 0.0);
      }
    }
  }
}

TEST(PriorCovariance, FiniteAndSymmetricInLag) {
  Rng rng(57);
  GNPModel model(small_gnp(9));
  randomise_biases(model, rng);
  const std::vector<double> lags = {-1.0, -0.3, 0.0, 0.3, 1.0};
  const PriorCovariance pc = extract_prior_covariance(model, lags);
  ASSERT_EQ(pc.covariance.size(), lags.size());
  for (double v : pc.covariance) EXPECT_TRUE(std::isfinite(v));
  // The pair for -lag is the pair for lag with roles swapped.
  EXPECT_NEAR(pc.covariance[0], pc.covariance[4], 1e-12);
  EXPECT_NEAR(pc.covariance[1], pc.covariance[3], 1e-12);
  EXPECT_GE(pc.covariance[2], 0.0);
}

TEST(MakeModel, FromJson) {
  auto gnp = make_model(nlohmann::json{{"kind", "gnp"}, {"points_per_unit", 10.0}});
  EXPECT_EQ(gnp->kind(), "gnp");
  EXPECT_EQ(gnp->config_json().at("points_per_unit"), 10.0);
  auto cnp = make_model(nlohmann::json{{"kind", "convcnp"}});
  EXPECT_EQ(cnp->kind(), "convcnp");
  EXPECT_THROW(make_model(nlohmann::json{{"kind", "transformer"}}), std::invalid_argument);
  EXPECT_THROW(make_model(nlohmann::json{{"kind", "gnp"}, {"ppu", 10.0}}), std::invalid_argument);
  const GNPConfig c = small_gnp(10);
  EXPECT_EQ(GNPModel(c).config_json().get<GNPConfig>(), c);
}

TEST(MakeModel, SeedDeterminesInitialisation) {
  const GNPModel a(small_gnp(11)), b(small_gnp(11)), c(small_gnp(12));
  EXPECT_EQ(a.parameters(), b.parameters());
  EXPECT_NE(a.parameters(), c.parameters());
}

}  // namespace
}  // namespace gnp
