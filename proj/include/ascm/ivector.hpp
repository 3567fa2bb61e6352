// ascm/ivector.hpp

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
#include <random>
#include <string>
#include <vector>

#include "ascm/common.hpp"
#include "ascm/gmm.hpp"

namespace ascm {

// Total-variability matrix, (C*F) x R. Rows [c*F, (c+1)*F) load component c.
struct TMatrix {
  Matrix t;
  int components = 0;
  int dim = 0;

  int rank() const { return static_cast<int>(t.cols()); }
  auto block(int c) const { return t.middleRows(static_cast<Eigen::Index>(c) * dim, dim); }
  auto block(int c) { return t.middleRows(static_cast<Eigen::Index>(c) * dim, dim); }
};

struct IVector {
  Vector y;
  std::string id;
  std::string source;
};

struct TvConfig {
  int rank = 400;
  int iters = 10;
  double init_scale = 0.1;
  std::uint64_t seed = 0;
  int jobs = 1;
};

struct TvReport {
  // Log-likelihood of the statistics under the factor model (up to a
  // T-independent constant), evaluated at the start of each iteration and once
  // after the last update.
  std::vector<double> objective_trace;
  std::vector<int> singular_components;
  std::vector<std::string> warnings;
};

inline TMatrix random_tmatrix(int components, int dim, int rank, double scale, std::uint64_t seed) {
  require(rank >= 1, "config", "i-vector rank must be >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  TMatrix tm;
  tm.components = components;
  tm.dim = dim;
  tm.t.resize(static_cast<Eigen::Index>(components) * dim, rank);
  for (Eigen::Index i = 0; i < tm.t.size(); ++i) tm.t.data()[i] = scale * normal(rng);
  return tm;
}

// Precomputed per-component quantities for posterior inference of y given
// Baum-Welch statistics: P_c = T_c' S_c^-1 T_c stacked as columns of an
// R^2 x C matrix, and S^-1 T.
class IvectorPosterior {
 public:
  IvectorPosterior(const TMatrix& tm, const DiagGmm& ubm) : tm_(tm) {
    require(tm.components == ubm.n_components() && tm.dim == ubm.dim(), "shape",
            "T matrix does not match the UBM");
    const int R = tm.rank();
    inv_var_ = ubm.variances.cwiseInverse();
    prec_t_.resize(tm.t.rows(), R);
    p_stack_.resize(static_cast<Eigen::Index>(R) * R, tm.components);
    for (int c = 0; c < tm.components; ++c) {
      const auto tc = tm.block(c);
      auto st = prec_t_.middleRows(static_cast<Eigen::Index>(c) * tm.dim, tm.dim);
      st = inv_var_.row(c).transpose().asDiagonal() * tc;
      Eigen::MatrixXd pc = tc.transpose() * st;
      p_stack_.col(c) = Eigen::Map<const Vector>(pc.data(), pc.size());
    }
  }

  struct Result {
    Vector mean;             // posterior mean of y
    Eigen::MatrixXd cov;     // L^-1 (only when requested)
    double log_evidence = 0; // -0.5 log|L| + 0.5 b' L^-1 b
  };

  Result infer(const SuffStats& s, bool want_cov) const {
    require(s.n.size() == tm_.components && s.f.rows() == tm_.components && s.f.cols() == tm_.dim,
            "shape", "statistics do not match the T matrix");
    require(s.n.allFinite() && s.f.allFinite(), "value", "non-finite Baum-Welch statistics");
    const int R = tm_.rank();
    Vector lvec = p_stack_ * s.n;
    Eigen::MatrixXd L = Eigen::Map<const Eigen::MatrixXd>(lvec.data(), R, R);
    L.diagonal().array() += 1.0;
    Eigen::Map<const Vector> fvec(s.f.data(), s.f.size());
    const Vector b = prec_t_.transpose() * fvec;
    Eigen::LLT<Eigen::MatrixXd> llt(L);
    require(llt.info() == Eigen::Success, "numeric", "i-vector precision is not positive definite");
    Result r;
    r.mean = llt.solve(b);
    r.log_evidence = -llt.matrixLLT().diagonal().array().log().sum() + 0.5 * b.dot(r.mean);
    if (want_cov) r.cov = llt.solve(Eigen::MatrixXd::Identity(R, R));
    return r;
  }

 private:
  const TMatrix& tm_;
  Matrix inv_var_;
  Matrix prec_t_;
  Eigen::MatrixXd p_stack_;
};

// EM for the total-variability matrix from fixed initial T. Each iteration:
//   E: L_s = I + sum_c N_sc T_c' S_c^-1 T_c,  y_s = L_s^-1 T' S^-1 f_s,
//      E[y y'] = L_s^-1 + y_s y_s'
//   M: T_c = (sum_s f_sc y_s') (sum_s N_sc E[y y']_s)^-1
// Statistics are reduced in input order, so results do not depend on cfg.jobs.
inline TMatrix train_total_variability(const std::vector<SuffStats>& stats, const DiagGmm& ubm,
                                       TMatrix tm, const TvConfig& cfg, TvReport* report = nullptr) {
  require(!stats.empty(), "data", "no statistics for T-matrix training");
  TvReport local;
  TvReport& rep = report ? *report : local;
  rep = TvReport{};
  const int C = tm.components, F = tm.dim, R = tm.rank();
  if (static_cast<int>(stats.size()) < R)
    rep.warnings.push_back("only " + std::to_string(stats.size()) + " segments for rank " +
                           std::to_string(R));

  const std::size_t S = stats.size();
  const std::size_t block = std::max<std::size_t>(1, static_cast<std::size_t>(cfg.jobs) * 8);
  for (int it = 0; it <= cfg.iters; ++it) {
    const IvectorPosterior post(tm, ubm);
    const bool final_pass = it == cfg.iters;
    Eigen::MatrixXd acc_a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(R) * R, C);
    Matrix acc_c = Matrix::Zero(static_cast<Eigen::Index>(C) * F, R);
    double objective = 0.0;
    std::vector<IvectorPosterior::Result> results(block);
    for (std::size_t b0 = 0; b0 < S; b0 += block) {
      const std::size_t nb = std::min(block, S - b0);
      parallel_for(nb, cfg.jobs,
                   [&](std::size_t i) { results[i] = post.infer(stats[b0 + i], !final_pass); });
      for (std::size_t i = 0; i < nb; ++i) {
        const auto& r = results[i];
        const SuffStats& s = stats[b0 + i];
        objective += r.log_evidence;
        if (final_pass) continue;
        Eigen::MatrixXd second = r.cov + r.mean * r.mean.transpose();
        acc_a.noalias() += Eigen::Map<const Vector>(second.data(), second.size()) * s.n.transpose();
        Eigen::Map<const Vector> fvec(s.f.data(), s.f.size());
        acc_c.noalias() += fvec * r.mean.transpose();
      }
    }
    rep.objective_trace.push_back(objective);
    if (final_pass) break;

    for (int c = 0; c < C; ++c) {
      const Eigen::MatrixXd a = Eigen::Map<const Eigen::MatrixXd>(acc_a.col(c).data(), R, R);
      const Eigen::MatrixXd rhs =
          acc_c.middleRows(static_cast<Eigen::Index>(c) * F, F).transpose();
      Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
      Eigen::MatrixXd sol;
      bool ok = ldlt.info() == Eigen::Success && ldlt.isPositive();
      if (ok) {
        sol = ldlt.solve(rhs);
        const double maxd = ldlt.vectorD().cwiseAbs().maxCoeff();
        const double mind = ldlt.vectorD().cwiseAbs().minCoeff();
        ok = sol.allFinite() && mind > 1e-12 * std::max(maxd, 1e-300);
      }
      if (!ok) {
        rep.singular_components.push_back(c);
        sol = a.completeOrthogonalDecomposition().solve(rhs);
      }
      tm.block(c) = sol.transpose();
    }
  }
  return tm;
}

inline TMatrix train_total_variability(const std::vector<SuffStats>& stats, const DiagGmm& ubm,
                                       const TvConfig& cfg, TvReport* report = nullptr) {
  require(!stats.empty(), "data", "no statistics for T-matrix training");
  TMatrix init = random_tmatrix(ubm.n_components(), ubm.dim(), cfg.rank, cfg.init_scale, cfg.seed);
  return train_total_variability(stats, ubm, std::move(init), cfg, report);
}

// Posterior mean of the latent factor under a standard-normal prior.
inline IVector extract_ivector(const SuffStats& stats, const TMatrix& tm, const DiagGmm& ubm) {
  const IvectorPosterior post(tm, ubm);
  return {post.infer(stats, false).mean, {}, {}};
}

inline IVector length_normalize(IVector v) {
  const double norm = v.y.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) fail("value", "degenerate i-vector");
  v.y /= norm;
  return v;
}

}  // namespace ascm
