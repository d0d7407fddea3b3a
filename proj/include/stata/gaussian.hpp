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
#ifndef STATA_GAUSSIAN_HPP_
#define STATA_GAUSSIAN_HPP_

// Diagonal-Gaussian machinery: the fixed text-derived anchor distribution,
// per-class log-likelihoods, the KL anchor penalty, and the closed-form
// blended parameter updates.

#include <cmath>
#include <stdexcept>
#include <utility>

#include "stata/types.hpp"

namespace stata {

enum class BetaMode { kHard, kSoft };

struct AnchorConfig {
  double alpha = 1.0;                     // anchor weight; 0 disables the anchor
  BetaMode beta_mode = BetaMode::kHard;
  double variance_floor = kVarianceFloor;
};

/// Per-class mean and diagonal covariance, K x d each.
struct GaussianBank {
  Matrix mu;
  Matrix sigma;  // diagonal entries, always >= variance floor

  Eigen::Index k() const { return mu.rows(); }
  Eigen::Index dim() const { return mu.cols(); }
};

/// The fixed anchor: per-class means equal to the text embeddings and one
/// shared diagonal covariance. Never updated after construction.
class AnchorDistribution {
 public:
  AnchorDistribution(Matrix mu_prime, Vector sigma_prime)
      : mu_prime_(std::move(mu_prime)), sigma_prime_(std::move(sigma_prime)) {
    if (mu_prime_.cols() != sigma_prime_.size()) {
      throw std::invalid_argument("anchor: mu/sigma dimension mismatch");
    }
    if (sigma_prime_.minCoeff() < kVarianceFloor) {
      throw std::invalid_argument("anchor: covariance entry below variance floor");
    }
  }

  Eigen::Index k() const { return mu_prime_.rows(); }
  Eigen::Index dim() const { return mu_prime_.cols(); }
  const Matrix& mu_prime() const { return mu_prime_; }
  const Vector& sigma_prime() const { return sigma_prime_; }

  /// Bank initialized at the anchor (every class gets the shared covariance).
  GaussianBank make_bank() const {
    GaussianBank bank;
    bank.mu = mu_prime_;
    bank.sigma = sigma_prime_.transpose().replicate(mu_prime_.rows(), 1);
    return bank;
  }

 private:
  Matrix mu_prime_;
  Vector sigma_prime_;
};

/// Builds the anchor from the zero-shot predictions: shared covariance entry j
/// is sum_{i,k} yhat_ik (f_ij - t_kj)^2 / N, floored at `variance_floor`.
inline AnchorDistribution init_anchor(const EmbeddingSet& features,
                                      const AnchorSet& anchors,
                                      const AssignmentMatrix& yhat,
                                      double variance_floor = kVarianceFloor) {
  const Eigen::Index n = features.n();
  const Eigen::Index d = features.dim();
  if (anchors.dim() != d || yhat.rows() != n || yhat.cols() != anchors.k()) {
    throw std::invalid_argument("init_anchor: shape mismatch");
  }
  const Matrix& f = features.data();
  const Matrix& t = anchors.data();
  // Expanded over k: sum_i f^2 - 2 sum_i f .* (yhat t) + colsum(yhat) (t .* t).
  Vector sp = (f.array() * f.array()).colwise().sum().transpose();
  const Matrix proj = yhat * t;  // N x d
  sp -= 2.0 * (f.array() * proj.array()).colwise().sum().matrix().transpose();
  const Vector class_mass = yhat.colwise().sum().transpose();
  sp += (t.array() * t.array()).matrix().transpose() * class_mass;
  sp /= static_cast<double>(n);
  sp = sp.cwiseMax(variance_floor);
  return AnchorDistribution(t, std::move(sp));
}

/// Entry (i, k) = -0.5 sum_j [ log sigma_kj + (f_ij - mu_kj)^2 / sigma_kj ].
/// The -(d/2) log 2pi constant is dropped; it cancels in the normalized
/// assignment update.
inline Matrix log_likelihoods(const EmbeddingSet& features, const GaussianBank& bank) {
  if (features.dim() != bank.dim()) {
    throw std::invalid_argument("log_likelihoods: dimension mismatch");
  }
  const Matrix& f = features.data();
  const Matrix inv = bank.sigma.cwiseInverse();             // K x d
  // Quadratic form expanded into three inner products so the whole N x K
  // matrix comes out of two GEMMs.
  Matrix out = (f.array() * f.array()).matrix() * inv.transpose();
  out.noalias() -= 2.0 * f * (bank.mu.array() * inv.array()).matrix().transpose();
  const Vector mu_quad = (bank.mu.array() * bank.mu.array() * inv.array())
                             .rowwise()
                             .sum();
  const Vector logdet = bank.sigma.array().log().rowwise().sum();
  out.rowwise() += (mu_quad + logdet).transpose();
  out *= -0.5;
  return out;
}

/// Sum over classes of KL(anchor_k || bank_k) for diagonal Gaussians.
inline double kl_anchor_term(const GaussianBank& bank, const AnchorDistribution& anchor) {
  if (bank.k() != anchor.k() || bank.dim() != anchor.dim()) {
    throw std::invalid_argument("kl_anchor_term: shape mismatch");
  }
  const double d = static_cast<double>(bank.dim());
  double total = 0.0;
  for (Eigen::Index k = 0; k < bank.k(); ++k) {
    const auto sigma = bank.sigma.row(k).array();
    const auto diff = (anchor.mu_prime().row(k) - bank.mu.row(k)).array();
    const double quad = (diff * diff / sigma).sum();
    const double trace = (anchor.sigma_prime().transpose().array() / sigma).sum();
    const double logdet =
        sigma.log().sum() - anchor.sigma_prime().array().log().sum();
    total += 0.5 * (quad + trace + logdet - d);
  }
  if (!std::isfinite(total)) {
    throw DataError("kl_anchor_term: non-finite intermediate");
  }
  return total;
}

/// Per-class blend weight between sample statistics and the anchor.
/// Soft mode uses assigned soft mass; hard mode counts argmax assignments
/// (ties to the lowest index). Zero mass with alpha == 0 yields 0.
inline Vector compute_beta(const AssignmentMatrix& z, const AnchorConfig& cfg) {
  if (cfg.alpha < 0.0) throw std::invalid_argument("compute_beta: alpha < 0");
  Vector mass(z.cols());
  if (cfg.beta_mode == BetaMode::kSoft) {
    mass = z.colwise().sum().transpose();
  } else {
    mass.setZero();
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      mass(argmax_row(z.row(i))) += 1.0;
    }
  }
  Vector beta(z.cols());
  for (Eigen::Index k = 0; k < z.cols(); ++k) {
    const double denom = mass(k) + cfg.alpha;
    beta(k) = denom > 0.0 ? mass(k) / denom : 0.0;
  }
  return beta;
}

/// Closed-form blended update. For each class:
///   mu_k    <- beta_k v_k + (1 - beta_k) mu'_k
///   Sigma_k <- beta_k T_k + (1 - beta_k) (Sigma' + (mu'_k - mu_k)^2), floored
/// where v_k / T_k are the soft sample mean and squared deviation about the
/// freshly updated mu_k. Classes with no assigned mass fall back to the anchor.
inline void update_parameters(const EmbeddingSet& features, const AssignmentMatrix& z,
                              const AnchorDistribution& anchor, const Vector& beta,
                              GaussianBank& bank,
                              double variance_floor = kVarianceFloor) {
  const Eigen::Index n = features.n();
  const Eigen::Index kk = anchor.k();
  const Eigen::Index d = anchor.dim();
  if (z.rows() != n || z.cols() != kk || beta.size() != kk ||
      bank.k() != kk || bank.dim() != d) {
    throw std::invalid_argument("update_parameters: shape mismatch");
  }
  const Matrix& f = features.data();
  const Vector mass = z.colwise().sum().transpose();              // K
  const Matrix weighted_sum = z.transpose() * f;                  // K x d
  const Matrix weighted_sqsum =
      z.transpose() * (f.array() * f.array()).matrix();           // K x d

  constexpr double kEmptyMass = 1e-30;
  for (Eigen::Index k = 0; k < kk; ++k) {
    const auto mu_p = anchor.mu_prime().row(k);
    Eigen::RowVectorXd v(d), sqdev(d);
    if (mass(k) > kEmptyMass) {
      v = weighted_sum.row(k) / mass(k);
    } else {
      v = mu_p;  // empty class: agree with the beta -> 0 limit
    }
    const Eigen::RowVectorXd mu_new = beta(k) * v + (1.0 - beta(k)) * mu_p;
    if (mass(k) > kEmptyMass) {
      // sum_i z (f - mu)^2 = sum_i z f^2 - 2 mu sum_i z f + mu^2 sum_i z,
      // with the NEW mu.
      sqdev = (weighted_sqsum.row(k).array() -
               2.0 * mu_new.array() * weighted_sum.row(k).array() +
               mu_new.array().square() * mass(k)) /
              mass(k);
    } else {
      sqdev = anchor.sigma_prime().transpose();
    }
    const Eigen::RowVectorXd drift = (mu_p - mu_new).array().square();
    bank.mu.row(k) = mu_new;
    bank.sigma.row(k) =
        (beta(k) * sqdev.array() +
         (1.0 - beta(k)) * (anchor.sigma_prime().transpose().array() + drift.array()))
            .cwiseMax(variance_floor);
    if (!bank.mu.row(k).allFinite() || !bank.sigma.row(k).allFinite()) {
      throw DataError("update_parameters: non-finite accumulation in class " +
                      std::to_string(k));
    }
  }
}

}  // namespace stata

#endif  // STATA_GAUSSIAN_HPP_
