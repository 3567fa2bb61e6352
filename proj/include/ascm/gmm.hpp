// ascm/gmm.hpp

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
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "ascm/common.hpp"
#include "ascm/features.hpp"

namespace ascm {

// Diagonal-covariance Gaussian mixture. Row c of `means` is the mean of
// component c; concatenating the rows gives the UBM mean supervector.
struct DiagGmm {
  Vector weights;    // C
  Matrix means;      // C x F
  Matrix variances;  // C x F

  int n_components() const { return static_cast<int>(weights.size()); }
  int dim() const { return static_cast<int>(means.cols()); }

  void validate() const {
    require(weights.size() >= 1, "shape", "GMM has no components");
    require(means.rows() == weights.size() && variances.rows() == weights.size() &&
                means.cols() == variances.cols(),
            "shape", "GMM parameter shapes disagree");
    require(std::abs(weights.sum() - 1.0) < 1e-9, "value", "GMM weights do not sum to one");
    require((variances.array() > 0).all(), "value", "GMM variances must be positive");
  }

  // frames x C matrix of log(w_c) + log N(x_t; mu_c, diag(var_c)).
  Matrix component_log_likelihoods(const Matrix& x) const {
    require(x.cols() == means.cols(), "shape",
            "feature dim " + std::to_string(x.cols()) + " does not match GMM dim " +
                std::to_string(means.cols()));
    const Eigen::Index C = means.rows(), F = means.cols();
    Matrix inv_var = variances.cwiseInverse();
    Matrix lin = means.cwiseProduct(inv_var);  // mu / var
    Vector gconst(C);
    for (Eigen::Index c = 0; c < C; ++c) {
      gconst[c] = std::log(weights[c]) -
                  0.5 * (double(F) * std::log(2.0 * std::numbers::pi) +
                         variances.row(c).array().log().sum() +
                         means.row(c).cwiseProduct(lin.row(c)).sum());
    }
    Matrix ll = x * lin.transpose();
    ll.noalias() -= 0.5 * (x.cwiseProduct(x) * inv_var.transpose());
    ll.rowwise() += gconst.transpose();
    return ll;
  }

  // Posterior responsibilities (frames x C); optionally returns per-frame log p(x_t).
  Matrix posteriors(const Matrix& x, Vector* frame_loglik = nullptr) const {
    Matrix ll = component_log_likelihoods(x);
    Vector lse(ll.rows());
    for (Eigen::Index t = 0; t < ll.rows(); ++t) {
      const double m = ll.row(t).maxCoeff();
      const double s = (ll.row(t).array() - m).exp().sum();
      lse[t] = m + std::log(s);
      ll.row(t) = (ll.row(t).array() - lse[t]).exp();
    }
    if (frame_loglik) *frame_loglik = std::move(lse);
    return ll;
  }

  double average_log_likelihood(const Matrix& x) const {
    Vector lse;
    posteriors(x, &lse);
    return lse.mean();
  }
};

struct EmConfig {
  int max_iters = 10;
  double rel_tol = 1e-6;
  double variance_floor_ratio = 1e-4;  // relative to the global variance per dim
  int kmeans_iters = 10;
  std::uint64_t seed = 0;
};

struct UbmReport {
  std::vector<double> loglik_trace;   // average per-frame log-likelihood, one per EM iteration
  std::vector<int> reseeded;          // components re-seeded for low occupancy
  int iterations = 0;
  bool converged = false;
};

namespace detail {

// k-means++ seeding followed by Lloyd iterations.
inline Matrix kmeans_centres(const Matrix& x, int k, int iters, std::mt19937_64& rng) {
  const Eigen::Index n = x.rows();
  Matrix centres(k, x.cols());
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  centres.row(0) = x.row(pick(rng));
  Vector d2 = (x.rowwise() - centres.row(0)).rowwise().squaredNorm();
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int c = 1; c < k; ++c) {
    const double total = d2.sum();
    Eigen::Index chosen = pick(rng);
    if (total > 0) {
      double r = unif(rng) * total;
      for (Eigen::Index i = 0; i < n; ++i) {
        r -= d2[i];
        if (r <= 0) {
          chosen = i;
          break;
        }
      }
    }
    centres.row(c) = x.row(chosen);
    d2 = d2.cwiseMin((x.rowwise() - centres.row(c)).rowwise().squaredNorm());
  }
  std::vector<int> assign(static_cast<std::size_t>(n), -1);
  for (int it = 0; it < iters; ++it) {
    Matrix sums = Matrix::Zero(k, x.cols());
    Vector counts = Vector::Zero(k);
    // ||x - c||^2 = ||x||^2 - 2 x.c + ||c||^2; the ||x||^2 term does not affect argmin.
    Matrix cross = x * centres.transpose();
    Vector cn = centres.rowwise().squaredNorm();
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index best;
      (cn.transpose() - 2.0 * cross.row(i)).minCoeff(&best);
      if (assign[static_cast<std::size_t>(i)] != best) changed = true;
      assign[static_cast<std::size_t>(i)] = static_cast<int>(best);
      sums.row(best) += x.row(i);
      counts[best] += 1.0;
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0)
        centres.row(c) = sums.row(c) / counts[c];
      else
        centres.row(c) = x.row(pick(rng));
    }
    if (!changed) break;
  }
  return centres;
}

}  // namespace detail

// Maximum-likelihood diagonal GMM by EM, initialised from seeded k-means.
// Variances are floored at `variance_floor_ratio` times the global variance.
inline DiagGmm train_ubm(const Matrix& frames, int n_components, const EmConfig& cfg,
                         UbmReport* report = nullptr) {
  require(n_components >= 1, "config", "UBM needs at least one component");
  if (frames.rows() < 10 * static_cast<Eigen::Index>(n_components))
    fail("data", "too few frames for UBM: " + std::to_string(frames.rows()) + " < 10 x " +
                     std::to_string(n_components));
  require(frames.allFinite(), "value", "UBM training frames contain non-finite values");
  const Eigen::Index n = frames.rows(), F = frames.cols();
  const Eigen::RowVectorXd gmean = frames.colwise().mean();
  const Eigen::RowVectorXd gvar =
      (frames.rowwise() - gmean).array().square().colwise().mean().matrix();
  Eigen::RowVectorXd floor = cfg.variance_floor_ratio * gvar;
  for (Eigen::Index d = 0; d < F; ++d) floor[d] = std::max(floor[d], 1e-12);

  std::mt19937_64 rng(cfg.seed);
  DiagGmm gmm;
  gmm.means = detail::kmeans_centres(frames, n_components, cfg.kmeans_iters, rng);
  gmm.weights = Vector::Constant(n_components, 1.0 / n_components);
  gmm.variances = gvar.cwiseMax(floor).replicate(n_components, 1);

  UbmReport local;
  UbmReport& rep = report ? *report : local;
  rep = UbmReport{};
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);

  for (int it = 0; it < cfg.max_iters; ++it) {
    Vector frame_ll;
    const Matrix post = gmm.posteriors(frames, &frame_ll);
    const double avg = frame_ll.mean();
    rep.loglik_trace.push_back(avg);
    if (rep.loglik_trace.size() >= 2) {
      const double prev = rep.loglik_trace[rep.loglik_trace.size() - 2];
      if ((avg - prev) <= cfg.rel_tol * std::abs(prev)) {
        rep.converged = true;
        break;
      }
    }

    const Vector occ = post.colwise().sum().transpose();
    const Matrix first = post.transpose() * frames;
    const Matrix second = post.transpose() * frames.cwiseProduct(frames);
    for (int c = 0; c < n_components; ++c) {
      if (occ[c] < 1.0) {
        rep.reseeded.push_back(c);
        gmm.means.row(c) = frames.row(pick(rng));
        gmm.variances.row(c) = gvar.cwiseMax(floor);
        gmm.weights[c] = 1.0 / double(n);
        continue;
      }
      gmm.weights[c] = occ[c] / double(n);
      gmm.means.row(c) = first.row(c) / occ[c];
      Eigen::RowVectorXd var =
          second.row(c) / occ[c] - gmm.means.row(c).cwiseProduct(gmm.means.row(c));
      gmm.variances.row(c) = var.cwiseMax(floor);
    }
    gmm.weights /= gmm.weights.sum();
    rep.iterations = it + 1;
  }
  if (!rep.converged) rep.loglik_trace.push_back(gmm.average_log_likelihood(frames));
  return gmm;
}

// Zeroth- and centred first-order Baum-Welch statistics of one segment.
struct SuffStats {
  Vector n;   // C
  Matrix f;   // C x F, sum_t gamma_t(c) (x_t - m_c)
  double total_frames = 0.0;

  SuffStats& operator+=(const SuffStats& o) {
    require(n.size() == o.n.size() && f.rows() == o.f.rows() && f.cols() == o.f.cols(), "shape",
            "cannot add statistics of different shapes");
    n += o.n;
    f += o.f;
    total_frames += o.total_frames;
    return *this;
  }

  static SuffStats zeros(int components, int dim) {
    return {Vector::Zero(components), Matrix::Zero(components, dim), 0.0};
  }

  // Mean supervector of the GMM adapted to this segment, m_c + f_c / n_c.
  Matrix adapted_means(const DiagGmm& ubm) const {
    Matrix m = ubm.means;
    for (Eigen::Index c = 0; c < n.size(); ++c)
      if (n[c] > 0) m.row(c) += f.row(c) / n[c];
    return m;
  }
};

inline SuffStats accumulate_stats(const DiagGmm& ubm, const Matrix& feats) {
  const Matrix post = ubm.posteriors(feats);
  SuffStats s;
  s.n = post.colwise().sum().transpose();
  s.f = post.transpose() * feats;
  for (Eigen::Index c = 0; c < s.n.size(); ++c) s.f.row(c) -= s.n[c] * ubm.means.row(c);
  s.total_frames = static_cast<double>(feats.rows());
  return s;
}

inline SuffStats accumulate_stats(const DiagGmm& ubm, const FeatureMatrix& feats) {
  feats.validate();
  return accumulate_stats(ubm, feats.data);
}

}  // namespace ascm
