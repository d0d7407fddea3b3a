/* Copyright 2026 The StatA Authors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#ifndef STATA_SOLVER_HPP_
#define STATA_SOLVER_HPP_

// Batch transductive solve: alternating Jacobi assignment sweeps (the
// concave-convex step) and closed-form anchored parameter updates.

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "stata/affinity.hpp"
#include "stata/gaussian.hpp"
#include "stata/types.hpp"
#include "stata/zero_shot.hpp"

namespace stata {

struct SolverConfig {
  int outer_iters = 10;
  int inner_z_iters = 3;
  double z_tolerance = 1e-4;      // L-inf stop threshold over one outer iteration
  AffinityMode affinity = AffinityMode::kKnn;
  int knn_k = 3;
  AnchorConfig anchor;
  double tau = 100.0;
  bool record_objective = false;  // O(N^2) per point with a full graph
  // Extra rounds of within-batch refinement in streaming mode; 1 keeps the
  // default single z-solve pass per batch.
  int stream_refine_rounds = 1;
  // Test hook, called after every assignment sweep.
  std::function<void(const AssignmentMatrix&)> sweep_observer;
};

struct SolveResult {
  AssignmentMatrix z;
  GaussianBank bank;
  std::vector<double> objective_trace;
  int iterations_run = 0;
};

namespace solver_detail {

/// Jacobi sweep reading `z` and writing `z_next` (distinct buffers), with the
/// log prior precomputed.
inline void sweep_into(const AssignmentMatrix& z, const Matrix& log_yhat,
                       const Matrix& loglik, const AffinityGraph& graph,
                       AssignmentMatrix& z_next) {
  Eigen::RowVectorXd g(z.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    g = loglik.row(i) + log_yhat.row(i);
    for (const auto& e : graph.rows[static_cast<size_t>(i)]) {
      g += e.w * z.row(e.j);
    }
    const double m = g.maxCoeff();
    if (!std::isfinite(m)) {
      throw DataError("z_update_sweep: non-finite exponent in row " + std::to_string(i));
    }
    z_next.row(i) = (g.array() - m).exp();
    z_next.row(i) /= z_next.row(i).sum();
  }
}

}  // namespace solver_detail

/// One Jacobi sweep of the assignment update:
///   z_i <- normalize( yhat_i * exp(loglik_i + sum_j w_ij z_j) )
/// Every row reads the previous iterate; exponentials are stabilized by
/// per-row max subtraction. yhat is clamped at 1e-30 inside the product only,
/// guarding underflowed softmax entries.
inline void z_update_sweep(AssignmentMatrix& z, const AssignmentMatrix& yhat,
                           const Matrix& loglik, const AffinityGraph& graph) {
  if (z.rows() != yhat.rows() || z.cols() != yhat.cols() ||
      z.rows() != loglik.rows() || z.cols() != loglik.cols() ||
      graph.n() != z.rows()) {
    throw std::invalid_argument("z_update_sweep: shape mismatch");
  }
  const Matrix log_yhat = yhat.array().max(1e-30).log();
  AssignmentMatrix z_next(z.rows(), z.cols());
  solver_detail::sweep_into(z, log_yhat, loglik, graph, z_next);
  z.swap(z_next);
}

/// Full objective at the current state:
///   - sum_i z_i . loglik_i
///   - 1/2 sum_{i != j} w_ij z_i . z_j        (each unordered pair once)
///   + sum_i KL(z_i || yhat_i)                (0 log 0 = 0)
///   + alpha * kl_anchor_term
/// A yhat entry of exactly zero paired with positive z mass is an error, not
/// something to clamp away.
inline double objective_value(const AssignmentMatrix& z, const EmbeddingSet& features,
                              const GaussianBank& bank, const AnchorDistribution& anchor,
                              const AssignmentMatrix& yhat, const AffinityGraph& graph,
                              double alpha) {
  const Matrix loglik = log_likelihoods(features, bank);
  double value = -(z.array() * loglik.array()).sum();

  double lap = 0.0;
  for (Eigen::Index i = 0; i < graph.n(); ++i) {
    for (const auto& e : graph.rows[static_cast<size_t>(i)]) {
      lap += e.w * z.row(i).dot(z.row(e.j));
    }
  }
  value -= 0.5 * lap;

  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    for (Eigen::Index k = 0; k < z.cols(); ++k) {
      const double zik = z(i, k);
      if (zik <= 0.0) continue;
      const double yik = yhat(i, k);
      if (yik <= 0.0) {
        throw DataError("objective_value: infinite KL, yhat is zero at (" +
                        std::to_string(i) + ", " + std::to_string(k) +
                        ") with positive z");
      }
      value += zik * std::log(zik / yik);
    }
  }
  value += alpha * kl_anchor_term(bank, anchor);
  if (!std::isfinite(value)) throw DataError("objective_value: non-finite result");
  return value;
}

/// The full transductive procedure. Initializes assignments at the zero-shot
/// prediction and the bank at the anchor, then alternates inner assignment
/// sweeps with the blended closed-form parameter update. Stops early once the
/// L-inf change of z over an outer iteration drops below z_tolerance.
inline SolveResult solve(const EmbeddingSet& features, const AnchorSet& anchors,
                         const SolverConfig& cfg) {
  if (cfg.outer_iters < 1 || cfg.inner_z_iters < 1) {
    throw std::invalid_argument("solve: iteration counts must be >= 1");
  }
  if (cfg.anchor.alpha < 0.0 || !(cfg.anchor.variance_floor > 0.0)) {
    throw std::invalid_argument("solve: need alpha >= 0 and variance_floor > 0");
  }
  const AssignmentMatrix yhat = zero_shot_predict(features, anchors, {cfg.tau});
  const AnchorDistribution anchor =
      init_anchor(features, anchors, yhat, cfg.anchor.variance_floor);
  const AffinityGraph graph = build_affinity(features, cfg.affinity, cfg.knn_k);

  SolveResult res;
  res.bank = anchor.make_bank();
  res.z = yhat;

  auto record = [&] {
    if (cfg.record_objective) {
      res.objective_trace.push_back(objective_value(
          res.z, features, res.bank, anchor, yhat, graph, cfg.anchor.alpha));
    }
  };
  record();

  const Matrix log_yhat = yhat.array().max(1e-30).log();
  Matrix loglik;
  AssignmentMatrix z_before, z_next(res.z.rows(), res.z.cols());
  for (int outer = 0; outer < cfg.outer_iters; ++outer) {
    loglik = log_likelihoods(features, res.bank);
    z_before = res.z;
    for (int l = 0; l < cfg.inner_z_iters; ++l) {
      solver_detail::sweep_into(res.z, log_yhat, loglik, graph, z_next);
      res.z.swap(z_next);
      if (cfg.sweep_observer) cfg.sweep_observer(res.z);
      record();
    }
    const Vector beta = compute_beta(res.z, cfg.anchor);
    update_parameters(features, res.z, anchor, beta, res.bank,
                      cfg.anchor.variance_floor);
    record();
    res.iterations_run = outer + 1;
    if ((res.z - z_before).cwiseAbs().maxCoeff() < cfg.z_tolerance) break;
  }
  return res;
}

}  // namespace stata

#endif  // STATA_SOLVER_HPP_
