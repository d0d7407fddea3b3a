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
#ifndef STATA_ONLINE_HPP_
#define STATA_ONLINE_HPP_

// Streaming adaptation: per-batch assignment solves against the current bank,
// with class statistics carried across batches through running weighted means,
// running squared deviations, and two counters per class.

#include <algorithm>
#include <optional>
#include <stdexcept>

#include "stata/solver.hpp"

namespace stata {

/// Mutable state of one stream. The anchor is fixed at stream start (shared
/// covariance estimated from the first batch) and never re-estimated.
struct StreamState {
  Matrix running_mean;    // K x d, soft-mass-weighted mean of seen features
  Matrix running_sqdev;   // K x d, weighted squared deviation about the live mu
  Vector soft_mass;       // per-class accumulated soft assignment mass
  Vector hard_count;      // per-class accumulated argmax counts
  GaussianBank bank;
  std::optional<AnchorDistribution> anchor;

  Eigen::Index k() const { return bank.k(); }
  Eigen::Index dim() const { return bank.dim(); }
};

/// Folds one batch into the running statistics. Pure accumulation: uses the
/// supplied mu for the squared-deviation residuals and leaves the bank alone.
inline void accumulate_batch(Matrix& running_mean, Matrix& running_sqdev,
                             Vector& soft_mass, Vector& hard_count,
                             const EmbeddingSet& batch, const AssignmentMatrix& z,
                             const Matrix& mu) {
  const Matrix& f = batch.data();
  const Vector batch_mass = z.colwise().sum().transpose();
  const Matrix weighted_sum = z.transpose() * f;
  const Matrix weighted_sqsum = z.transpose() * (f.array() * f.array()).matrix();

  for (Eigen::Index k = 0; k < running_mean.rows(); ++k) {
    const double total = soft_mass(k) + batch_mass(k);
    if (total <= 0.0) continue;
    running_mean.row(k) =
        (soft_mass(k) * running_mean.row(k) + weighted_sum.row(k)) / total;
    // Batch contribution to sum_i z (f - mu)^2, expanded about the given mu.
    const Eigen::RowVectorXd batch_sqdev =
        weighted_sqsum.row(k).array() -
        2.0 * mu.row(k).array() * weighted_sum.row(k).array() +
        mu.row(k).array().square() * batch_mass(k);
    running_sqdev.row(k) =
        (soft_mass(k) * running_sqdev.row(k) + batch_sqdev) / total;
    soft_mass(k) = total;
  }
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    hard_count(argmax_row(z.row(i))) += 1.0;
  }
}

/// Recomputes the bank from accumulated statistics with the blended update.
/// The blend weight uses the accumulated hard counts (or the soft mass when
/// the config selects soft mode). A class that was never hard-assigned keeps
/// the anchor parameters exactly.
inline void refresh_bank_from_stats(const StreamState& state,
                                    const AnchorConfig& cfg, GaussianBank& bank) {
  const AnchorDistribution& anchor = *state.anchor;
  const Vector& mass =
      cfg.beta_mode == BetaMode::kHard ? state.hard_count : state.soft_mass;
  for (Eigen::Index k = 0; k < bank.k(); ++k) {
    const double denom = mass(k) + cfg.alpha;
    const double beta = denom > 0.0 ? mass(k) / denom : 0.0;
    const auto mu_p = anchor.mu_prime().row(k);
    const Eigen::RowVectorXd mu_new =
        beta * state.running_mean.row(k) + (1.0 - beta) * mu_p;
    const Eigen::RowVectorXd drift = (mu_p - mu_new).array().square();
    bank.mu.row(k) = mu_new;
    bank.sigma.row(k) =
        (beta * state.running_sqdev.row(k).array() +
         (1.0 - beta) *
             (anchor.sigma_prime().transpose().array() + drift.array()))
            .cwiseMax(cfg.variance_floor);
  }
}

/// Starts a stream: anchor built from the first batch's zero-shot statistics,
/// bank initialized at the anchor, all accumulators zeroed.
inline StreamState stream_init(const AnchorSet& anchors,
                               const EmbeddingSet& first_batch,
                               const SolverConfig& cfg) {
  if (first_batch.n() < 1) throw std::invalid_argument("stream_init: empty first batch");
  const AssignmentMatrix yhat = zero_shot_predict(first_batch, anchors, {cfg.tau});
  StreamState st;
  st.anchor = init_anchor(first_batch, anchors, yhat, cfg.anchor.variance_floor);
  st.bank = st.anchor->make_bank();
  st.running_mean = Matrix::Zero(anchors.k(), anchors.dim());
  st.running_sqdev = Matrix::Zero(anchors.k(), anchors.dim());
  st.soft_mass = Vector::Zero(anchors.k());
  st.hard_count = Vector::Zero(anchors.k());
  return st;
}

/// Processes one batch: solves the batch assignments against the current bank
/// (prediction precedes adaptation), then folds the batch into the running
/// statistics and refreshes the bank from them. Returns the batch assignments.
inline AssignmentMatrix stream_step(StreamState& state, const EmbeddingSet& batch,
                                    const SolverConfig& cfg) {
  if (!state.anchor) throw std::logic_error("stream_step: uninitialized state");
  if (batch.n() == 0) return AssignmentMatrix(0, state.k());
  if (batch.dim() != state.dim()) {
    throw std::invalid_argument("stream_step: batch dimension mismatch");
  }
  const AnchorDistribution& anchor = *state.anchor;
  const AnchorSet batch_anchors = AnchorSet::from_rows(anchor.mu_prime());
  const AssignmentMatrix yhat = zero_shot_predict(batch, batch_anchors, {cfg.tau});

  const int knn =
      static_cast<int>(std::min<Eigen::Index>(cfg.knn_k, batch.n() - 1));
  const AffinityGraph graph = build_affinity(batch, cfg.affinity, knn);

  AssignmentMatrix z = yhat;
  Matrix loglik = log_likelihoods(batch, state.bank);
  const int rounds = std::max(1, cfg.stream_refine_rounds);
  for (int round = 0; round < rounds; ++round) {
    if (round > 0) {
      // Within-batch refinement against a throwaway copy of the accumulators;
      // the persistent state only advances once, below.
      StreamState trial = state;
      accumulate_batch(trial.running_mean, trial.running_sqdev, trial.soft_mass,
                       trial.hard_count, batch, z, state.bank.mu);
      GaussianBank trial_bank = state.bank;
      refresh_bank_from_stats(trial, cfg.anchor, trial_bank);
      loglik = log_likelihoods(batch, trial_bank);
    }
    for (int l = 0; l < cfg.inner_z_iters; ++l) {
      z_update_sweep(z, yhat, loglik, graph);
      if (cfg.sweep_observer) cfg.sweep_observer(z);
    }
  }

  accumulate_batch(state.running_mean, state.running_sqdev, state.soft_mass,
                   state.hard_count, batch, z, state.bank.mu);
  refresh_bank_from_stats(state, cfg.anchor, state.bank);
  return z;
}

}  // namespace stata

#endif  // STATA_ONLINE_HPP_
