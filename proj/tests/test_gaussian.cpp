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
#include "stata/gaussian.hpp"

#include <cmath>

#include "gtest/gtest.h"
#include "stata/random.hpp"

namespace stata {
namespace {

EmbeddingSet embeddings_from(Matrix m) { return EmbeddingSet::from_rows(std::move(m)); }

EmbeddingSet random_embeddings(int n, int d, uint64_t seed) {
  Rng rng(seed);
  Matrix m(n, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return embeddings_from(std::move(m));
}

AnchorSet random_anchors(int k, int d, uint64_t seed) {
  Rng rng(seed);
  Matrix m(k, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return AnchorSet::from_rows(std::move(m));
}

AssignmentMatrix random_simplex_rows(int n, int k, uint64_t seed) {
  Rng rng(seed);
  AssignmentMatrix z(n, k);
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int j = 0; j < k; ++j) {
      z(i, j) = rng.uniform() + 1e-6;
      s += z(i, j);
    }
    z.row(i) /= s;
  }
  return z;
}

// Direct summation of the shared anchor covariance, the oracle for Eq-style
// hand values and for the production GEMM path.
Vector oracle_sigma_prime(const Matrix& f, const Matrix& t, const Matrix& yhat) {
  Vector sp = Vector::Zero(f.cols());
  for (Eigen::Index i = 0; i < f.rows(); ++i) {
    for (Eigen::Index k = 0; k < t.rows(); ++k) {
      sp.array() +=
          yhat(i, k) * (f.row(i) - t.row(k)).array().square().transpose();
    }
  }
  return sp / static_cast<double>(f.rows());
}

TEST(InitAnchor, ZeroResidualFloorsAtVarianceFloor) {
  Matrix fm(1, 2), tm(2, 2);
  fm << 1, 0;
  tm << 1, 0, 0, 1;
  AssignmentMatrix yhat(1, 2);
  yhat << 1, 0;  // one-hot onto the matching anchor
  const AnchorDistribution a =
      init_anchor(embeddings_from(fm), AnchorSet::from_rows(tm), yhat);
  EXPECT_DOUBLE_EQ(a.sigma_prime()(0), kVarianceFloor);
  EXPECT_DOUBLE_EQ(a.sigma_prime()(1), kVarianceFloor);
}

TEST(InitAnchor, OracleReproducesHandValue) {
  // Two opposite scalar samples around a zero anchor: (1^2 + 1^2) / 2 = 1.
  Matrix f(2, 1), t(1, 1), yhat(2, 1);
  f << 1, -1;
  t << 0;
  yhat << 1, 1;
  EXPECT_DOUBLE_EQ(oracle_sigma_prime(f, t, yhat)(0), 1.0);
}

TEST(InitAnchor, MatchesOracleOnUniformIdenticalAnchors) {
  const EmbeddingSet f = random_embeddings(20, 4, 1);
  Matrix tm(2, 4);
  tm.row(0) = f.data().row(0);
  tm.row(1) = f.data().row(0);
  const AnchorSet t = AnchorSet::from_rows(tm);
  AssignmentMatrix yhat(20, 2);
  yhat.setConstant(0.5);
  const AnchorDistribution a = init_anchor(f, t, yhat);
  const Vector expect = oracle_sigma_prime(f.data(), t.data(), yhat);
  for (int j = 0; j < 4; ++j) EXPECT_NEAR(a.sigma_prime()(j), expect(j), 1e-14);
}

TEST(InitAnchor, MatchesOracleOnRandomInstances) {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const int n = static_cast<int>(rng.uniform_int(2, 30));
    const int k = static_cast<int>(rng.uniform_int(1, 6));
    const int d = static_cast<int>(rng.uniform_int(1, 9));
    const EmbeddingSet f = random_embeddings(n, d, seed * 7 + 1);
    const AnchorSet t = random_anchors(k, d, seed * 7 + 2);
    const AssignmentMatrix yhat = random_simplex_rows(n, k, seed * 7 + 3);
    const AnchorDistribution a = init_anchor(f, t, yhat);
    const Vector expect =
        oracle_sigma_prime(f.data(), t.data(), yhat).cwiseMax(kVarianceFloor);
    for (int j = 0; j < d; ++j) {
      EXPECT_NEAR(a.sigma_prime()(j), expect(j), 1e-12 * std::max(1.0, expect(j)));
    }
  }
}

TEST(LogLikelihoods, ZeroAtMeanWithUnitVariance) {
  Matrix fm(1, 3);
  fm << 1, 0, 0;
  GaussianBank bank;
  bank.mu = fm;
  bank.sigma = Matrix::Ones(1, 3);
  const Matrix ll = log_likelihoods(embeddings_from(fm), bank);
  EXPECT_DOUBLE_EQ(ll(0, 0), 0.0);
}

TEST(LogLikelihoods, HandValues) {
  // Quadratic only: f = (1,0), mu = (-1,0), sigma = 1 -> -0.5 * 2^2 = -2.
  Matrix fm(1, 2);
  fm << 1, 0;
  GaussianBank bank;
  bank.mu = Matrix(2, 2);
  bank.mu << -1, 0, 1, 0;
  bank.sigma = Matrix::Ones(2, 2);
  bank.sigma(1, 0) = std::exp(1.0);  // log-det only: -0.5 * log(e) = -0.5
  const Matrix ll = log_likelihoods(embeddings_from(fm), bank);
  EXPECT_NEAR(ll(0, 0), -2.0, 1e-12);
  EXPECT_NEAR(ll(0, 1), -0.5, 1e-12);
}

TEST(KlAnchorTerm, ZeroForIdenticalDistributions) {
  const AnchorSet t = random_anchors(3, 5, 2);
  Rng rng(3);
  Vector sp(5);
  for (int j = 0; j < 5; ++j) sp(j) = 0.5 + rng.uniform();
  const AnchorDistribution anchor(t.data(), sp);
  const GaussianBank bank = anchor.make_bank();
  EXPECT_DOUBLE_EQ(kl_anchor_term(bank, anchor), 0.0);
}

TEST(KlAnchorTerm, HandValues) {
  // Unit variances, means 0 and 1: KL = 1/2 (1 + 1 + 0 - 1) = 1/2.
  const AnchorDistribution anchor(Matrix::Zero(1, 1), Vector::Ones(1));
  GaussianBank bank;
  bank.mu = Matrix::Ones(1, 1);
  bank.sigma = Matrix::Ones(1, 1);
  EXPECT_NEAR(kl_anchor_term(bank, anchor), 0.5, 1e-15);

  // Equal means, variances 1 vs 2: 1/2 (0.5 + ln 2 - 1).
  bank.mu.setZero();
  bank.sigma.setConstant(2.0);
  EXPECT_NEAR(kl_anchor_term(bank, anchor), 0.5 * (0.5 + std::log(2.0) - 1.0), 1e-15);
}

TEST(KlAnchorTerm, NonnegativeOnFuzzedBanks) {
  for (uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const int k = static_cast<int>(rng.uniform_int(1, 5));
    const int d = static_cast<int>(rng.uniform_int(1, 8));
    Matrix mu_p(k, d), mu(k, d), sigma(k, d);
    Vector sp(d);
    for (Eigen::Index i = 0; i < mu_p.size(); ++i) mu_p.data()[i] = rng.normal();
    for (Eigen::Index i = 0; i < mu.size(); ++i) mu.data()[i] = rng.normal();
    for (Eigen::Index i = 0; i < sigma.size(); ++i) {
      sigma.data()[i] = 0.05 + 2.0 * rng.uniform();
    }
    for (int j = 0; j < d; ++j) sp(j) = 0.05 + 2.0 * rng.uniform();
    const AnchorDistribution anchor(mu_p, sp);
    GaussianBank bank{mu, sigma};
    EXPECT_GE(kl_anchor_term(bank, anchor), -1e-9);
  }
}

TEST(ComputeBeta, HardModeCounts) {
  AssignmentMatrix z(4, 2);
  z << 0.9, 0.1, 0.8, 0.2, 0.6, 0.4, 0.2, 0.8;
  AnchorConfig cfg;
  cfg.alpha = 1.0;
  cfg.beta_mode = BetaMode::kHard;
  const Vector beta = compute_beta(z, cfg);
  EXPECT_DOUBLE_EQ(beta(0), 0.75);  // 3 of 4 argmax to class 0
  EXPECT_DOUBLE_EQ(beta(1), 0.5);
}

TEST(ComputeBeta, EmptyClassAndDisabledAnchor) {
  AssignmentMatrix z(2, 3);
  z << 1, 0, 0, 1, 0, 0;
  AnchorConfig cfg;
  cfg.beta_mode = BetaMode::kHard;
  EXPECT_DOUBLE_EQ(compute_beta(z, cfg)(1), 0.0);

  cfg.alpha = 0.0;
  cfg.beta_mode = BetaMode::kSoft;
  AssignmentMatrix zs(2, 2);
  zs << 0.7, 0.3, 0.4, 0.6;
  const Vector beta = compute_beta(zs, cfg);
  EXPECT_DOUBLE_EQ(beta(0), 1.0);
  EXPECT_DOUBLE_EQ(beta(1), 1.0);
}

TEST(UpdateParameters, BetaZeroSnapsToAnchorExactly) {
  const EmbeddingSet f = random_embeddings(10, 3, 4);
  const AnchorSet t = random_anchors(2, 3, 5);
  const AssignmentMatrix z = random_simplex_rows(10, 2, 6);
  const AnchorDistribution anchor = init_anchor(f, t, random_simplex_rows(10, 2, 7));
  GaussianBank bank = anchor.make_bank();
  bank.mu.setConstant(0.25);  // scribble so the snap is observable
  update_parameters(f, z, anchor, Vector::Zero(2), bank);
  for (int k = 0; k < 2; ++k) {
    EXPECT_TRUE(bank.mu.row(k) == anchor.mu_prime().row(k));
    EXPECT_TRUE(bank.sigma.row(k) == anchor.sigma_prime().transpose());
  }
}

// Independent per-class summation of the sample statistics.
void oracle_mle(const Matrix& f, const AssignmentMatrix& z, Matrix& v_out,
                Matrix& t_out) {
  const Eigen::Index k = z.cols(), d = f.cols();
  v_out.resize(k, d);
  t_out.resize(k, d);
  for (Eigen::Index c = 0; c < k; ++c) {
    double mass = 0.0;
    Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(d);
    for (Eigen::Index i = 0; i < f.rows(); ++i) {
      mass += z(i, c);
      sum += z(i, c) * f.row(i);
    }
    v_out.row(c) = sum / mass;
    Eigen::RowVectorXd sq = Eigen::RowVectorXd::Zero(d);
    for (Eigen::Index i = 0; i < f.rows(); ++i) {
      sq += z(i, c) * (f.row(i) - v_out.row(c)).array().square().matrix();
    }
    t_out.row(c) = sq / mass;
  }
}

TEST(UpdateParameters, AlphaZeroSoftMatchesMleOracle) {
  for (uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(seed);
    const int n = static_cast<int>(rng.uniform_int(3, 50));
    const int k = static_cast<int>(rng.uniform_int(1, 5));
    const int d = static_cast<int>(rng.uniform_int(1, 8));
    const EmbeddingSet f = random_embeddings(n, d, seed * 11 + 1);
    const AnchorSet t = random_anchors(k, d, seed * 11 + 2);
    const AssignmentMatrix z = random_simplex_rows(n, k, seed * 11 + 3);
    const AnchorDistribution anchor = init_anchor(f, t, z);
    GaussianBank bank = anchor.make_bank();
    AnchorConfig cfg;
    cfg.alpha = 0.0;
    cfg.beta_mode = BetaMode::kSoft;
    update_parameters(f, z, anchor, compute_beta(z, cfg), bank);
    Matrix v, tk;
    oracle_mle(f.data(), z, v, tk);
    for (int c = 0; c < k; ++c) {
      for (int j = 0; j < d; ++j) {
        EXPECT_NEAR(bank.mu(c, j), v(c, j), 1e-12 * std::max(1.0, std::abs(v(c, j))));
        const double want = std::max(tk(c, j), kVarianceFloor);
        EXPECT_NEAR(bank.sigma(c, j), want, 1e-12 * std::max(1.0, want));
      }
    }
  }
}

TEST(UpdateParameters, ConvexCombinationOfMeanAndAnchor) {
  Matrix fm(1, 2);
  fm << 1, 0;
  Matrix tm(1, 2);
  tm << 0, 1;
  const EmbeddingSet f = embeddings_from(fm);
  const AnchorSet t = AnchorSet::from_rows(tm);
  AssignmentMatrix z(1, 1);
  z << 1;
  const AnchorDistribution anchor = init_anchor(f, t, z);
  GaussianBank bank = anchor.make_bank();
  Vector beta(1);
  beta << 0.5;
  update_parameters(f, z, anchor, beta, bank);
  EXPECT_DOUBLE_EQ(bank.mu(0, 0), 0.5);  // halfway between f and the anchor
  EXPECT_DOUBLE_EQ(bank.mu(0, 1), 0.5);
}

TEST(UpdateParameters, MeanPathIsMonotoneInBeta) {
  const EmbeddingSet f = random_embeddings(12, 3, 8);
  const AnchorSet t = random_anchors(1, 3, 9);
  const AssignmentMatrix z = random_simplex_rows(12, 1, 10);
  const AnchorDistribution anchor = init_anchor(f, t, z);
  Matrix prev;
  for (int step = 0; step <= 10; ++step) {
    GaussianBank bank = anchor.make_bank();
    Vector beta(1);
    beta << step / 10.0;
    update_parameters(f, z, anchor, beta, bank);
    if (step == 0) {
      EXPECT_TRUE(bank.mu == anchor.mu_prime());
    } else {
      // Each coordinate moves from mu' toward v without ever reversing.
      for (int j = 0; j < 3; ++j) {
        const double before = prev(0, j) - anchor.mu_prime()(0, j);
        const double now = bank.mu(0, j) - anchor.mu_prime()(0, j);
        EXPECT_GE(std::abs(now) + 1e-15, std::abs(before));
        EXPECT_GE(now * before, -1e-15);
      }
    }
    prev = bank.mu;
  }
}

}  // namespace
}  // namespace stata
