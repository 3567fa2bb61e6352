// tests/test_gmm.cpp

// Copyright 2026 The ASCM Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <numbers>
#include <random>

#include "ascm/gmm.hpp"
#include "test_util.hpp"

using namespace ascm;

namespace {

Matrix gaussian_frames(Eigen::Index n, Eigen::Index d, std::uint64_t seed, double offset = 0.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Matrix x(n, d);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = g(rng) + offset;
  return x;
}

// log N(x; mu, diag(var)) written out term by term.
double log_normal(const Eigen::RowVectorXd& x, const Eigen::RowVectorXd& mu, const Eigen::RowVectorXd& var) {
  double s = 0;
  for (Eigen::Index d = 0; d < x.size(); ++d)
    s += -0.5 * std::log(2 * std::numbers::pi * var[d]) - 0.5 * (x[d] - mu[d]) * (x[d] - mu[d]) / var[d];
  return s;
}

}  // namespace

TEST(Ubm, SingleComponentIsClosedForm) {
  Matrix x = gaussian_frames(400, 3, 5);
  x.col(1).array() *= 3.0;
  x.col(2).array() += 1.5;
  UbmReport rep;
  const auto g = train_ubm(x, 1, EmConfig{}, &rep);
  const Eigen::RowVectorXd mean = x.colwise().mean();
  Eigen::RowVectorXd var = Eigen::RowVectorXd::Zero(3);
  for (Eigen::Index i = 0; i < x.rows(); ++i) var += (x.row(i) - mean).cwiseAbs2();
  var /= double(x.rows());
  EXPECT_NEAR(g.weights[0], 1.0, 1e-15);
  EXPECT_LT((g.means.row(0) - mean).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT((g.variances.row(0) - var).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Ubm, SeparatedClustersMatchCentroids) {
  Matrix a = gaussian_frames(150, 2, 1, 0.0), b = gaussian_frames(250, 2, 2, 50.0);
  Matrix x(400, 2);
  x << a, b;
  const auto g = train_ubm(x, 2, EmConfig{});
  // With clusters this far apart every responsibility is 0 or 1 to machine
  // precision, so the fixed point is the pair of cluster centroids.
  const Eigen::RowVectorXd ca = a.colwise().mean(), cb = b.colwise().mean();
  const int ia = g.means(0, 0) < 25 ? 0 : 1;
  EXPECT_LT((g.means.row(ia) - ca).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LT((g.means.row(1 - ia) - cb).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_NEAR(g.weights[ia], 150.0 / 400.0, 1e-9);

  std::mt19937_64 rng(4);
  const Matrix c = detail::kmeans_centres(x, 2, 10, rng);
  const int ka = c(0, 0) < 25 ? 0 : 1;
  EXPECT_LT((c.row(ka) - ca).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT((c.row(1 - ka) - cb).cwiseAbs().maxCoeff(), 1e-9);
}

class UbmMonotone : public ::testing::TestWithParam<std::tuple<int, std::uint64_t>> {};

TEST_P(UbmMonotone, LogLikelihoodNeverDecreases) {
  const auto [components, seed] = GetParam();
  Matrix x = gaussian_frames(1500, 4, seed);
  // mixture-ish data: shift half the rows
  x.bottomRows(700).array() += 2.0;
  EmConfig cfg;
  cfg.seed = seed;
  cfg.max_iters = 25;
  cfg.rel_tol = 0;
  UbmReport rep;
  train_ubm(x, components, cfg, &rep);
  ASSERT_TRUE(rep.reseeded.empty());
  ASSERT_GE(rep.loglik_trace.size(), 2u);
  for (std::size_t i = 1; i < rep.loglik_trace.size(); ++i)
    EXPECT_GE(rep.loglik_trace[i] - rep.loglik_trace[i - 1], -1e-8 * std::abs(rep.loglik_trace[i - 1])) << i;
}

INSTANTIATE_TEST_SUITE_P(Seeds, UbmMonotone,
                         ::testing::Combine(::testing::Values(2, 5, 9), ::testing::Values(1u, 2u, 3u)));

TEST(Ubm, DeterministicPerSeed) {
  const Matrix x = gaussian_frames(600, 3, 8);
  EmConfig cfg;
  cfg.seed = 11;
  const auto a = train_ubm(x, 4, cfg), b = train_ubm(x, 4, cfg);
  EXPECT_EQ(a.means, b.means);
  EXPECT_EQ(a.variances, b.variances);
  EXPECT_EQ(a.weights, b.weights);
}

TEST(Ubm, Errors) {
  EXPECT_THROW(train_ubm(gaussian_frames(30, 2, 1), 4, EmConfig{}), Error);
  EXPECT_THROW(train_ubm(gaussian_frames(30, 2, 1), 0, EmConfig{}), Error);
  Matrix bad = gaussian_frames(100, 2, 1);
  bad(3, 1) = std::nan("");
  EXPECT_THROW(train_ubm(bad, 2, EmConfig{}), Error);
}

TEST(Ubm, VarianceFloor) {
  Matrix x = gaussian_frames(400, 2, 3);
  x.col(1).setConstant(1.0);  // zero variance dimension
  x(0, 1) = 1.0001;
  const auto g = train_ubm(x, 2, EmConfig{});
  EXPECT_TRUE((g.variances.array() > 0).all());
  g.validate();
}

TEST(Gmm, LikelihoodsAndPosteriorsMatchDirectFormula) {
  DiagGmm g;
  g.weights = Vector(3);
  g.weights << 0.2, 0.5, 0.3;
  g.means = gaussian_frames(3, 4, 7);
  g.variances = (gaussian_frames(3, 4, 8).array().square() + 0.5).matrix();
  const Matrix x = gaussian_frames(20, 4, 9);
  const Matrix ll = g.component_log_likelihoods(x);
  Vector frame_ll;
  const Matrix post = g.posteriors(x, &frame_ll);
  for (Eigen::Index t = 0; t < x.rows(); ++t) {
    double total = 0;
    for (int c = 0; c < 3; ++c) {
      const double expect = std::log(g.weights[c]) + log_normal(x.row(t), g.means.row(c), g.variances.row(c));
      EXPECT_LT(test::rel_err(ll(t, c), expect), 1e-12);
      total += std::exp(expect);
    }
    EXPECT_LT(test::rel_err(frame_ll[t], std::log(total)), 1e-12);
    EXPECT_NEAR(post.row(t).sum(), 1.0, 1e-12);
  }
  EXPECT_THROW(g.component_log_likelihoods(Matrix::Zero(2, 3)), Error);
}

TEST(Stats, MatchLoopedDefinition) {
  DiagGmm g;
  g.weights = Vector::Constant(2, 0.5);
  g.means = gaussian_frames(2, 3, 1);
  g.variances = Matrix::Constant(2, 3, 2.0);
  const Matrix x = gaussian_frames(15, 3, 2);
  const auto s = accumulate_stats(g, x);
  const Matrix post = g.posteriors(x);
  for (int c = 0; c < 2; ++c) {
    double n = 0;
    Eigen::RowVectorXd f = Eigen::RowVectorXd::Zero(3);
    for (Eigen::Index t = 0; t < 15; ++t) {
      n += post(t, c);
      f += post(t, c) * (x.row(t) - g.means.row(c));
    }
    EXPECT_NEAR(s.n[c], n, 1e-12);
    EXPECT_LT((s.f.row(c) - f).cwiseAbs().maxCoeff(), 1e-12);
  }
  EXPECT_EQ(s.total_frames, 15.0);
  EXPECT_NEAR(s.n.sum(), 15.0, 1e-12);
}

TEST(Stats, FrameAtComponentMean) {
  DiagGmm g;
  g.weights = Vector::Constant(2, 0.5);
  g.means = Matrix(2, 2);
  g.means << 0, 0, 100, 100;
  g.variances = Matrix::Ones(2, 2);
  const auto s = accumulate_stats(g, Matrix(g.means.row(1)));
  EXPECT_NEAR(s.n[1], 1.0, 1e-12);
  EXPECT_NEAR(s.n[0], 0.0, 1e-12);
  EXPECT_LT(s.f.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Stats, AdditionAndAdaptedMeans) {
  DiagGmm g;
  g.weights = Vector::Constant(1, 1.0);
  g.means = Matrix::Zero(1, 2);
  g.variances = Matrix::Ones(1, 2);
  Matrix x(2, 2);
  x << 1, 2, 3, 4;
  auto s = accumulate_stats(g, x);
  EXPECT_LT((s.adapted_means(g) - Matrix(x.colwise().mean())).cwiseAbs().maxCoeff(), 1e-15);
  auto t = SuffStats::zeros(1, 2);
  t += s;
  t += s;
  EXPECT_EQ(t.n[0], 4.0);
  EXPECT_THROW(t += SuffStats::zeros(2, 2), Error);
}
