// tests/test_backend.cpp

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

#include <random>

#include "ascm/backend.hpp"
#include "test_util.hpp"

using namespace ascm;

namespace {

struct Labelled {
  Matrix x;
  std::vector<int> labels;
};

Labelled random_classes(int C, int per_class, int dim, std::uint64_t seed, double spread = 3.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Matrix centres(C, dim);
  for (Eigen::Index i = 0; i < centres.size(); ++i) centres.data()[i] = spread * g(rng);
  Labelled d;
  d.x.resize(C * per_class, dim);
  for (int c = 0; c < C; ++c)
    for (int k = 0; k < per_class; ++k) {
      const int r = c * per_class + k;
      for (int j = 0; j < dim; ++j) d.x(r, j) = centres(c, j) + g(rng) * (1.0 + 0.5 * j);
      d.labels.push_back(c);
    }
  return d;
}

std::vector<std::string> names(int C) {
  std::vector<std::string> out;
  for (int c = 0; c < C; ++c) out.push_back("class" + std::to_string(c));
  return out;
}

}  // namespace

TEST(Lda, SeparatedAlongFirstAxis) {
  // Class means at x = -5 and x = +5; each class has the same symmetric
  // four-point cloud, so the within-class scatter is isotropic.
  Matrix x(8, 2);
  std::vector<int> labels;
  const double off[4][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
  for (int c = 0; c < 2; ++c)
    for (int k = 0; k < 4; ++k) {
      x(c * 4 + k, 0) = (c ? 5.0 : -5.0) + off[k][0];
      x(c * 4 + k, 1) = off[k][1];
      labels.push_back(c);
    }
  const Matrix a = train_lda(x, labels, 2, 1);
  ASSERT_EQ(a.rows(), 2);
  ASSERT_EQ(a.cols(), 1);
  const double angle = std::acos(std::min(1.0, std::abs(a(0, 0)) / a.col(0).norm()));
  EXPECT_LT(angle, 1e-3);
  EXPECT_GT(a(0, 0), 0.0);
}

TEST(Lda, MatchesWhitenedEigenOracle) {
  const auto d = random_classes(4, 25, 6, 3);
  const Matrix a = train_lda(d.x, d.labels, 4, 3);

  // Scatters written out directly.
  const double n = double(d.x.rows());
  Eigen::MatrixXd means = Eigen::MatrixXd::Zero(4, 6);
  std::vector<double> cnt(4, 0);
  for (Eigen::Index i = 0; i < d.x.rows(); ++i) {
    means.row(d.labels[i]) += d.x.row(i);
    cnt[d.labels[i]] += 1;
  }
  for (int c = 0; c < 4; ++c) means.row(c) /= cnt[c];
  const Eigen::RowVectorXd mu = d.x.colwise().mean();
  Eigen::MatrixXd sw = Eigen::MatrixXd::Zero(6, 6), sb = sw;
  for (Eigen::Index i = 0; i < d.x.rows(); ++i) {
    const Eigen::RowVectorXd r = d.x.row(i) - means.row(d.labels[i]);
    sw += r.transpose() * r / n;
  }
  for (int c = 0; c < 4; ++c) {
    const Eigen::RowVectorXd r = means.row(c) - mu;
    sb += (cnt[c] / n) * r.transpose() * r;
  }
  sw.diagonal().array() += 1e-6 * sw.trace() / 6;
  // Whitening route: Sw = L L', eig of L^-1 Sb L^-T, v = L^-T u.
  const Eigen::MatrixXd L = sw.llt().matrixL();
  const Eigen::MatrixXd Li = L.inverse();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Li * sb * Li.transpose());
  for (int k = 0; k < 3; ++k) {
    Eigen::VectorXd v = Li.transpose() * es.eigenvectors().col(5 - k);
    v.normalize();
    Eigen::Index imax;
    v.cwiseAbs().maxCoeff(&imax);
    if (v[imax] < 0) v = -v;
    EXPECT_LT((a.col(k) - v).cwiseAbs().maxCoeff(), 1e-8) << k;
  }
}

TEST(Lda, DimensionsAndDuplication) {
  const auto d = random_classes(2, 10, 3, 5);
  EXPECT_EQ(train_lda(d.x, d.labels, 2, 1).cols(), 1);
  EXPECT_THROW(train_lda(d.x, d.labels, 2, 2), Error);

  const auto e = random_classes(3, 8, 4, 6);
  Matrix twice(2 * e.x.rows(), e.x.cols());
  twice << e.x, e.x;
  std::vector<int> l2 = e.labels;
  l2.insert(l2.end(), e.labels.begin(), e.labels.end());
  EXPECT_LT((train_lda(e.x, e.labels, 3, 2) - train_lda(twice, l2, 3, 2)).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Wccn, HandExamples) {
  EXPECT_LT((wccn_from_covariance(Eigen::MatrixXd::Identity(3, 3)) - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff(),
            1e-15);
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(2, 2);
  w(0, 0) = 4;
  w(1, 1) = 1;
  Matrix expect = Matrix::Zero(2, 2);
  expect(0, 0) = 0.5;
  expect(1, 1) = 1.0;
  EXPECT_LT((wccn_from_covariance(w) - expect).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_THROW(wccn_from_covariance(-Eigen::MatrixXd::Identity(2, 2)), Error);
}

TEST(Wccn, WhitensWithinClassCovariance) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto d = random_classes(5, 20, 4, seed);
    const Matrix b = train_wccn(d.x, d.labels, 5);
    const Eigen::MatrixXd w = within_class_covariance(d.x, d.labels, 5);
    EXPECT_LT((b.transpose() * w * b - Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_EQ(b(0, 1), 0.0);  // lower triangular
    // Covariance of the projected data is the identity (up to the ridge).
    const Eigen::MatrixXd wp = within_class_covariance(d.x * b, d.labels, 5, false);
    EXPECT_LT((wp - Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-5);
  }
}

TEST(Projection, IdentityAndZero) {
  ProjectionModel p;
  p.lda = Matrix::Identity(3, 3);
  p.wccn = Matrix::Identity(3, 3);
  Vector v(3);
  v << 1, -2, 3;
  EXPECT_EQ(p.project(v), v);
  EXPECT_EQ(p.project(Vector::Zero(3)), Vector::Zero(3));
  EXPECT_THROW(p.project(Vector::Zero(2)), Error);
  const auto d = random_classes(3, 10, 5, 4);
  const auto q = train_projection(d.x, d.labels, names(3));
  EXPECT_EQ(q.lda.cols(), 2);
  const Matrix rows = q.project_rows(d.x);
  for (Eigen::Index i = 0; i < d.x.rows(); ++i)
    EXPECT_LT((rows.row(i).transpose() - q.project(d.x.row(i).transpose())).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ClassModels, Examples) {
  Matrix one(2, 2);
  one << 1, 2, 3, 4;
  const auto m = build_class_models(one, {0, 1}, names(2));
  EXPECT_EQ(m.models, one);

  Matrix pm(2, 2);
  pm << 1, 2, -1, -2;
  const auto z = build_class_models(pm, {0, 0}, names(1));
  EXPECT_EQ(z.models.norm(), 0.0);
  EXPECT_THROW(cosine_score(Vector::Ones(2), z), Error);

  Matrix x(4, 2);
  x << 1, 0, 0, 1, 2, 2, 5, 1;
  const std::vector<int> l = {0, 1, 0, 1};
  const Matrix xp = x({2, 3, 0, 1}, Eigen::all);
  const std::vector<int> lp = {0, 1, 0, 1};
  EXPECT_EQ(build_class_models(x, l, names(2)).models, build_class_models(xp, lp, names(2)).models);
  EXPECT_THROW(build_class_models(x, {0, 0, 0, 0}, names(2)), Error);
}

TEST(Cosine, Examples) {
  ClassModels m;
  m.classes = names(3);
  m.models.resize(3, 2);
  m.models << 1, 0, 0, 1, -2, 0;
  Vector t(2);
  t << 3, 0;
  const Vector s = cosine_score(t, m);
  EXPECT_NEAR(s[0], 1.0, 1e-15);
  EXPECT_NEAR(s[1], 0.0, 1e-15);
  EXPECT_NEAR(s[2], -1.0, 1e-15);
  EXPECT_THROW(cosine_score(Vector::Zero(2), m), Error);
}

TEST(Cosine, RangeAndScaleInvariance) {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> u(1e-3, 1e3);
  ClassModels m;
  m.classes = names(6);
  m.models.resize(6, 5);
  for (Eigen::Index i = 0; i < m.models.size(); ++i) m.models.data()[i] = g(rng);
  for (int trial = 0; trial < 200; ++trial) {
    Vector t(5);
    for (auto& v : t) v = g(rng);
    const Vector s = cosine_score(t, m);
    EXPECT_LE(s.maxCoeff(), 1.0);
    EXPECT_GE(s.minCoeff(), -1.0);
    Eigen::Index a, b;
    s.maxCoeff(&a);
    cosine_score(u(rng) * t, m).maxCoeff(&b);
    EXPECT_EQ(a, b);
  }
}

TEST(Averaging, Examples) {
  ScoreMatrix s;
  s.ids = {"x"};
  s.classes = {"a", "b"};
  s.scores = Matrix(1, 2);
  s.scores << 0.3, -0.2;
  const auto same = average_channel_scores({s, s, s, s});
  EXPECT_LT((same.scores - s.scores).cwiseAbs().maxCoeff(), 1e-15);
  std::vector<ScoreMatrix> four(4, s);
  four[0].scores(0, 0) = 1;
  four[1].scores(0, 0) = 0;
  four[2].scores(0, 0) = 0;
  four[3].scores(0, 0) = -1;
  EXPECT_EQ(average_channel_scores(four).scores(0, 0), 0.0);
  four[3].ids = {"y"};
  EXPECT_THROW(average_channel_scores(four), Error);
}

TEST(Backend, EndToEndOnSeparableData) {
  const auto train = random_classes(4, 30, 8, 7, 4.0);
  const auto test = random_classes(4, 10, 8, 7, 4.0);  // same centres (same seed), fresh noise below
  Matrix tx = test.x;
  std::mt19937_64 rng(70);
  std::normal_distribution<double> g(0, 0.3);
  for (Eigen::Index i = 0; i < tx.size(); ++i) tx.data()[i] += g(rng);
  const auto be = train_backend(train.x, train.labels, names(4));
  std::vector<std::string> ids;
  for (Eigen::Index i = 0; i < tx.rows(); ++i) ids.push_back("t" + std::to_string(i));
  const auto s = be.score(tx, ids, "x");
  int ok = 0;
  const auto pred = s.argmax();
  for (std::size_t i = 0; i < pred.size(); ++i) ok += pred[i] == test.labels[i];
  EXPECT_GE(ok, 36);
}
