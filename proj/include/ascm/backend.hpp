// ascm/backend.hpp

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

#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "ascm/common.hpp"
#include "ascm/scores.hpp"

namespace ascm {

// Rows of `x` are samples; labels index classes 0..C-1.
struct LabelledSet {
  Matrix x;
  std::vector<int> labels;
  int n_classes = 0;
};

namespace detail {

inline std::vector<int> class_counts(const std::vector<int>& labels, int n_classes) {
  std::vector<int> counts(static_cast<std::size_t>(n_classes), 0);
  for (int l : labels) {
    require(l >= 0 && l < n_classes, "value", "label index out of range");
    ++counts[static_cast<std::size_t>(l)];
  }
  return counts;
}

inline Matrix class_means(const Matrix& x, const std::vector<int>& labels, int n_classes,
                          const std::vector<int>& counts) {
  Matrix means = Matrix::Zero(n_classes, x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) means.row(labels[static_cast<std::size_t>(i)]) += x.row(i);
  for (int c = 0; c < n_classes; ++c)
    if (counts[static_cast<std::size_t>(c)] > 0) means.row(c) /= counts[static_cast<std::size_t>(c)];
  return means;
}

inline double scatter_epsilon(const Eigen::MatrixXd& w) {
  return 1e-6 * w.trace() / double(w.rows());
}

}  // namespace detail

// Fisher LDA. Columns are the leading generalised eigenvectors of the
// between-class scatter against the (regularised) within-class scatter, unit
// length, with the largest-magnitude entry made positive.
inline Matrix train_lda(const Matrix& x, const std::vector<int>& labels, int n_classes, int out_dims) {
  require(static_cast<Eigen::Index>(labels.size()) == x.rows(), "shape", "LDA labels/sample mismatch");
  require(n_classes >= 2, "data", "LDA needs at least two classes");
  if (out_dims < 1 || out_dims > n_classes - 1 || out_dims > x.cols())
    fail("config", "LDA output dims " + std::to_string(out_dims) + " must be in [1, min(C-1, R)]");
  const auto counts = detail::class_counts(labels, n_classes);
  for (int c = 0; c < n_classes; ++c)
    require(counts[static_cast<std::size_t>(c)] >= 2, "data",
            "LDA needs at least two samples per class");
  const double n = double(x.rows());
  const Matrix means = detail::class_means(x, labels, n_classes, counts);
  const Eigen::RowVectorXd mu = x.colwise().mean();

  Eigen::MatrixXd sw = Eigen::MatrixXd::Zero(x.cols(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Eigen::RowVectorXd d = x.row(i) - means.row(labels[static_cast<std::size_t>(i)]);
    sw.noalias() += d.transpose() * d;
  }
  sw /= n;
  Eigen::MatrixXd sb = Eigen::MatrixXd::Zero(x.cols(), x.cols());
  for (int c = 0; c < n_classes; ++c) {
    const Eigen::RowVectorXd d = means.row(c) - mu;
    sb.noalias() += (counts[static_cast<std::size_t>(c)] / n) * (d.transpose() * d);
  }
  if (!(sw.trace() > 0.0)) fail("numeric", "within-class scatter is singular");
  sw.diagonal().array() += detail::scatter_epsilon(sw);

  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> ges(sb, sw);
  if (ges.info() != Eigen::Success) fail("numeric", "LDA eigen-decomposition failed");
  // Eigenvalues come out ascending.
  const Eigen::MatrixXd& vecs = ges.eigenvectors();
  Matrix a(x.cols(), out_dims);
  for (int k = 0; k < out_dims; ++k) {
    Vector v = vecs.col(vecs.cols() - 1 - k);
    v.normalize();
    Eigen::Index imax;
    v.cwiseAbs().maxCoeff(&imax);
    if (v[imax] < 0) v = -v;
    a.col(k) = v;
  }
  return a;
}

// Average of per-class covariance matrices, regularised by eps * I.
inline Eigen::MatrixXd within_class_covariance(const Matrix& x, const std::vector<int>& labels,
                                               int n_classes, bool regularise = true) {
  const auto counts = detail::class_counts(labels, n_classes);
  const Matrix means = detail::class_means(x, labels, n_classes, counts);
  std::vector<Eigen::MatrixXd> covs(static_cast<std::size_t>(n_classes),
                                    Eigen::MatrixXd::Zero(x.cols(), x.cols()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const int c = labels[static_cast<std::size_t>(i)];
    const Eigen::RowVectorXd d = x.row(i) - means.row(c);
    covs[static_cast<std::size_t>(c)].noalias() += d.transpose() * d;
  }
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(x.cols(), x.cols());
  int used = 0;
  for (int c = 0; c < n_classes; ++c) {
    if (counts[static_cast<std::size_t>(c)] == 0) continue;
    w += covs[static_cast<std::size_t>(c)] / double(counts[static_cast<std::size_t>(c)]);
    ++used;
  }
  require(used > 0, "data", "no samples for within-class covariance");
  w /= double(used);
  if (regularise) w.diagonal().array() += detail::scatter_epsilon(w);
  return w;
}

// Lower-triangular B with B B' = W^-1, so that B' W B = I.
inline Matrix wccn_from_covariance(const Eigen::MatrixXd& w) {
  require(w.rows() == w.cols() && w.rows() >= 1, "shape", "WCCN needs a square covariance");
  Eigen::LLT<Eigen::MatrixXd> llt_w(w);
  if (llt_w.info() != Eigen::Success) fail("numeric", "within-class covariance is not positive definite");
  const Eigen::MatrixXd w_inv = llt_w.solve(Eigen::MatrixXd::Identity(w.rows(), w.cols()));
  Eigen::LLT<Eigen::MatrixXd> llt(0.5 * (w_inv + w_inv.transpose()));
  if (llt.info() != Eigen::Success) fail("numeric", "inverse within-class covariance is not positive definite");
  return llt.matrixL().toDenseMatrix();
}

inline Matrix train_wccn(const Matrix& x, const std::vector<int>& labels, int n_classes) {
  require(static_cast<Eigen::Index>(labels.size()) == x.rows(), "shape", "WCCN labels/sample mismatch");
  const auto counts = detail::class_counts(labels, n_classes);
  for (int c = 0; c < n_classes; ++c)
    require(counts[static_cast<std::size_t>(c)] >= 2, "data",
            "WCCN needs at least two samples per class");
  return wccn_from_covariance(within_class_covariance(x, labels, n_classes));
}

struct ProjectionModel {
  Matrix lda;   // R x D
  Matrix wccn;  // D x D
  std::vector<std::string> classes;

  // B'(A'v)
  Vector project(const Vector& v) const {
    require(v.size() == lda.rows(), "shape",
            "i-vector dim " + std::to_string(v.size()) + " does not match projection " +
                std::to_string(lda.rows()));
    return wccn.transpose() * (lda.transpose() * v);
  }

  Matrix project_rows(const Matrix& x) const {
    require(x.cols() == lda.rows(), "shape", "i-vector dim does not match projection");
    return x * lda * wccn;
  }
};

inline ProjectionModel train_projection(const Matrix& ivectors, const std::vector<int>& labels,
                                        const std::vector<std::string>& classes, int out_dims = 0) {
  const int C = static_cast<int>(classes.size());
  if (out_dims <= 0) out_dims = std::min<int>(C - 1, static_cast<int>(ivectors.cols()));
  ProjectionModel p;
  p.classes = classes;
  p.lda = train_lda(ivectors, labels, C, out_dims);
  p.wccn = train_wccn(ivectors * p.lda, labels, C);
  return p;
}

struct ClassModels {
  Matrix models;  // C x D
  std::vector<std::string> classes;
};

inline ClassModels build_class_models(const Matrix& projected, const std::vector<int>& labels,
                                      const std::vector<std::string>& classes) {
  const int C = static_cast<int>(classes.size());
  require(static_cast<Eigen::Index>(labels.size()) == projected.rows(), "shape",
          "class model labels/sample mismatch");
  const auto counts = detail::class_counts(labels, C);
  for (int c = 0; c < C; ++c)
    if (counts[static_cast<std::size_t>(c)] == 0)
      fail("data", "class '" + classes[static_cast<std::size_t>(c)] + "' has no training vectors");
  return {detail::class_means(projected, labels, C, counts), classes};
}

inline Vector cosine_score(const Vector& test, const ClassModels& models) {
  require(test.size() == models.models.cols(), "shape", "test vector dim does not match class models");
  const double tn = test.norm();
  if (!(tn > 0.0)) fail("value", "cosine scoring of a zero-norm test vector");
  Vector out(models.models.rows());
  for (Eigen::Index c = 0; c < models.models.rows(); ++c) {
    const double mn = models.models.row(c).norm();
    if (!(mn > 0.0))
      fail("value", "class model '" + models.classes[static_cast<std::size_t>(c)] + "' has zero norm");
    out[c] = models.models.row(c).dot(test) / (tn * mn);
  }
  return out;
}

// One LDA/WCCN/class-model backend for one audio source.
struct Backend {
  ProjectionModel projection;
  ClassModels models;

  ScoreMatrix score(const Matrix& ivectors, const std::vector<std::string>& ids,
                    const std::string& tag) const {
    ScoreMatrix s;
    s.ids = ids;
    s.classes = models.classes;
    s.tag = tag;
    s.scores.resize(ivectors.rows(), static_cast<Eigen::Index>(models.classes.size()));
    for (Eigen::Index i = 0; i < ivectors.rows(); ++i)
      s.scores.row(i) = cosine_score(projection.project(ivectors.row(i).transpose()), models).transpose();
    return s;
  }
};

inline Backend train_backend(const Matrix& ivectors, const std::vector<int>& labels,
                             const std::vector<std::string>& classes, int lda_dims = 0) {
  Backend b;
  b.projection = train_projection(ivectors, labels, classes, lda_dims);
  b.models = build_class_models(b.projection.project_rows(ivectors), labels, classes);
  return b;
}

inline ScoreMatrix average_channel_scores(const std::vector<ScoreMatrix>& per_source) {
  require(!per_source.empty(), "data", "no score sets to average");
  ScoreMatrix out = per_source.front();
  for (std::size_t k = 1; k < per_source.size(); ++k) {
    check_aligned(per_source.front(), per_source[k]);
    out.scores += per_source[k].scores;
  }
  out.scores /= double(per_source.size());
  out.tag = "average";
  return out;
}

}  // namespace ascm
