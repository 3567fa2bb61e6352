// ascm/fusion.hpp

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
#include <deque>
#include <string>
#include <vector>

#include "ascm/common.hpp"
#include "ascm/io.hpp"
#include "ascm/scores.hpp"

namespace ascm {

// Linear-logistic fusion of K score sets: l'(x) = sum_k alpha_k l_k(x) + beta.
struct FusionModel {
  Vector alphas;  // K
  Vector beta;    // C
  std::vector<std::string> classes;

  int k() const { return static_cast<int>(alphas.size()); }

  Container to_container() const {
    Container c;
    c.set("alphas", alphas);
    c.set("beta", beta);
    c.set_text("classes", join(classes, '\t'));
    c.set_text("kind", "fusion");
    return c;
  }
  static FusionModel from_container(const Container& c) {
    FusionModel m;
    m.alphas = c.vector("alphas");
    m.beta = c.vector("beta");
    m.classes = split(c.text("classes"), '\t');
    require(m.beta.size() == static_cast<Eigen::Index>(m.classes.size()), "format",
            "fusion model: beta does not match class list");
    return m;
  }
};

struct FusionTrainConfig {
  int max_iters = 1000;
  double grad_tol = 1e-9;
  int history = 10;  // L-BFGS memory
};

struct FusionReport {
  std::vector<double> objective_trace;
  int iterations = 0;
  bool converged = false;
};

// w_c = (1/C) / (N_c / N)
inline Vector class_weights(const std::vector<int>& labels, int n_classes) {
  require(n_classes >= 1, "value", "class_weights needs at least one class");
  Vector counts = Vector::Zero(n_classes);
  for (int l : labels) {
    require(l >= 0 && l < n_classes, "value", "label index out of range");
    counts[l] += 1.0;
  }
  const double n = double(labels.size());
  Vector w(n_classes);
  for (int c = 0; c < n_classes; ++c) {
    if (counts[c] == 0) fail("data", "class " + std::to_string(c) + " has no examples");
    w[c] = (1.0 / n_classes) / (counts[c] / n);
  }
  return w;
}

inline void check_score_sets(const std::vector<ScoreMatrix>& sets) {
  require(!sets.empty(), "data", "no score sets");
  for (const auto& s : sets) s.validate();
  for (std::size_t k = 1; k < sets.size(); ++k) check_aligned(sets.front(), sets[k]);
}

inline ScoreMatrix fuse_scores(const FusionModel& model, const std::vector<ScoreMatrix>& sets) {
  check_score_sets(sets);
  require(static_cast<int>(sets.size()) == model.k(), "shape",
          "fusion model expects " + std::to_string(model.k()) + " score sets, got " +
              std::to_string(sets.size()));
  if (model.classes != sets.front().classes) fail("align", "fusion model class order differs from scores");
  ScoreMatrix out;
  out.ids = sets.front().ids;
  out.classes = model.classes;
  out.tag = "fused";
  out.scores = Matrix::Zero(sets.front().rows(), sets.front().cols());
  for (int k = 0; k < model.k(); ++k) out.scores += model.alphas[k] * sets[static_cast<std::size_t>(k)].scores;
  out.scores.rowwise() += model.beta.transpose();
  return out;
}

// Softmax; the flat prior 1/C cancels.
inline Vector posterior(const Vector& fused) {
  const double m = fused.maxCoeff();
  Vector e = (fused.array() - m).exp();
  return e / e.sum();
}

namespace detail {

// Packs (alphas, beta) into one parameter vector.
inline Vector pack(const FusionModel& m) {
  Vector th(m.alphas.size() + m.beta.size());
  th << m.alphas, m.beta;
  return th;
}

inline void unpack(const Vector& th, int K, FusionModel& m) {
  m.alphas = th.head(K);
  m.beta = th.tail(th.size() - K);
}

// Weighted cross-entropy and its gradient with respect to (alphas, beta).
inline double fusion_objective(const Vector& th, const std::vector<ScoreMatrix>& sets,
                               const std::vector<int>& labels, const Vector& weights, Vector* grad) {
  const int K = static_cast<int>(sets.size());
  const Eigen::Index N = sets.front().rows(), C = sets.front().cols();
  Matrix fused = Matrix::Zero(N, C);
  for (int k = 0; k < K; ++k) fused += th[k] * sets[static_cast<std::size_t>(k)].scores;
  fused.rowwise() += th.tail(C).transpose();
  double total = 0.0;
  Matrix resid(N, C);  // w/N (p - onehot)
  for (Eigen::Index n = 0; n < N; ++n) {
    const int y = labels[static_cast<std::size_t>(n)];
    const double m = fused.row(n).maxCoeff();
    const double lse = m + std::log((fused.row(n).array() - m).exp().sum());
    const double w = weights[y];
    total -= w * (fused(n, y) - lse);
    if (grad) {
      resid.row(n) = (fused.row(n).array() - lse).exp().matrix() * (w / double(N));
      resid(n, y) -= w / double(N);
    }
  }
  if (grad) {
    grad->resize(K + C);
    for (int k = 0; k < K; ++k) (*grad)[k] = resid.cwiseProduct(sets[static_cast<std::size_t>(k)].scores).sum();
    grad->tail(C) = resid.colwise().sum().transpose();
  }
  return total / double(N);
}

}  // namespace detail

// C'_llr = -(1/N) sum_n w_{c(n)} log P'_n
inline double objective(const FusionModel& model, const std::vector<ScoreMatrix>& sets,
                        const std::vector<int>& labels, const Vector& weights) {
  check_score_sets(sets);
  require(static_cast<int>(sets.size()) == model.k(), "shape", "fusion model / score set count mismatch");
  require(static_cast<Eigen::Index>(labels.size()) == sets.front().rows(), "shape",
          "labels do not match score rows");
  return detail::fusion_objective(detail::pack(model), sets, labels, weights, nullptr);
}

inline Vector objective_gradient(const FusionModel& model, const std::vector<ScoreMatrix>& sets,
                                 const std::vector<int>& labels, const Vector& weights) {
  check_score_sets(sets);
  Vector g;
  detail::fusion_objective(detail::pack(model), sets, labels, weights, &g);
  return g;
}

inline FusionModel identity_fusion(int k, const std::vector<std::string>& classes) {
  return {Vector::Constant(k, 1.0 / k), Vector::Zero(static_cast<Eigen::Index>(classes.size())), classes};
}

// Minimises C'_llr from alpha = 1/K, beta = 0 with L-BFGS directions and a
// backtracking (Armijo) line search. The problem is convex in (alpha, beta).
inline FusionModel train_fusion(const std::vector<ScoreMatrix>& sets, const std::vector<int>& labels,
                                const FusionTrainConfig& cfg = {}, FusionReport* report = nullptr) {
  check_score_sets(sets);
  const int K = static_cast<int>(sets.size());
  const int C = static_cast<int>(sets.front().cols());
  require(static_cast<Eigen::Index>(labels.size()) == sets.front().rows(), "shape",
          "labels do not match score rows");
  require(cfg.grad_tol > 0 && cfg.max_iters >= 0, "config", "fusion tolerances must be positive");
  const Vector weights = class_weights(labels, C);

  FusionReport local;
  FusionReport& rep = report ? *report : local;
  rep = FusionReport{};
  FusionModel model = identity_fusion(K, sets.front().classes);
  Vector th = detail::pack(model);
  Vector g;
  double f = detail::fusion_objective(th, sets, labels, weights, &g);
  if (!std::isfinite(f)) fail("numeric", "fusion objective is not finite");
  rep.objective_trace.push_back(f);

  std::deque<std::pair<Vector, Vector>> hist;  // (s, y)
  for (int it = 0; it < cfg.max_iters; ++it) {
    if (g.norm() < cfg.grad_tol) {
      rep.converged = true;
      break;
    }
    // Two-loop recursion.
    Vector q = g;
    std::vector<double> alpha(hist.size());
    for (std::size_t i = hist.size(); i-- > 0;) {
      const auto& [s, y] = hist[i];
      alpha[i] = s.dot(q) / y.dot(s);
      q -= alpha[i] * y;
    }
    if (!hist.empty()) {
      const auto& [s, y] = hist.back();
      q *= s.dot(y) / y.dot(y);
    }
    for (std::size_t i = 0; i < hist.size(); ++i) {
      const auto& [s, y] = hist[i];
      const double b = y.dot(q) / y.dot(s);
      q += (alpha[i] - b) * s;
    }
    Vector d = -q;
    double slope = g.dot(d);
    if (!(slope < 0)) {
      hist.clear();
      d = -g;
      slope = -g.squaredNorm();
    }
    double step = 1.0;
    Vector th_new, g_new;
    double f_new = f;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      th_new = th + step * d;
      f_new = detail::fusion_objective(th_new, sets, labels, weights, &g_new);
      if (std::isfinite(f_new) && f_new <= f + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      // No decrease representable in double precision: treat as converged.
      rep.converged = true;
      break;
    }
    Vector s = th_new - th, y = g_new - g;
    if (s.dot(y) > 1e-16 * s.norm() * y.norm()) {
      hist.emplace_back(std::move(s), std::move(y));
      if (static_cast<int>(hist.size()) > cfg.history) hist.pop_front();
    }
    th = std::move(th_new);
    g = std::move(g_new);
    f = f_new;
    rep.objective_trace.push_back(f);
    rep.iterations = it + 1;
  }
  if (!std::isfinite(f)) fail("numeric", "fusion objective is not finite");
  detail::unpack(th, K, model);
  return model;
}

// Mean over fold models of their fused scores on a common evaluation set.
inline ScoreMatrix bag_fold_fusions(const std::vector<FusionModel>& folds,
                                    const std::vector<ScoreMatrix>& sets) {
  require(!folds.empty(), "data", "no fold fusion models");
  for (const auto& m : folds) {
    if (m.k() != folds.front().k() || m.classes != folds.front().classes)
      fail("value", "fold fusion models disagree in K or class order");
  }
  ScoreMatrix out = fuse_scores(folds.front(), sets);
  for (std::size_t i = 1; i < folds.size(); ++i) out.scores += fuse_scores(folds[i], sets).scores;
  out.scores /= double(folds.size());
  out.tag = "bagged";
  return out;
}

}  // namespace ascm
