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
#ifndef STATA_BENCH_HPP_
#define STATA_BENCH_HPP_

// End-to-end benchmark harness: synthetic data with a Bayes-oracle reference,
// scenario runners producing task-averaged accuracy reports, and a
// Monte-Carlo check for the closed-form Gaussian KL.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "stata/online.hpp"
#include "stata/random.hpp"
#include "stata/scenario.hpp"
#include "stata/solver.hpp"

namespace stata {

/// Task-averaged benchmark outcome. The delta is against the zero-shot
/// baseline scored on exactly the same tasks.
struct RunReport {
  std::vector<double> per_task_accuracy;
  double mean_accuracy = 0.0;
  double delta_vs_zeroshot = 0.0;
  double wall_time_seconds = 0.0;
  nlohmann::json config_snapshot;
};

struct SyntheticSpec {
  int k = 10;
  int d = 32;
  int n_per_class = 100;
  double center_separation = 6.0;  // minimum pairwise center distance, in
                                   // units of the within-class std
  double anchor_noise = 0.0;       // std of the perturbation defining anchors
  uint64_t seed = 0;
};

struct SyntheticData {
  EmbeddingSet features;
  AnchorSet anchors;
  LabelVector labels;
  double bayes_accuracy = 0.0;  // oracle classification with the true
                                // generative parameters, before normalization
};

namespace bench_detail {

/// Cluster centers with pairwise distance >= separation. With d >= k they sit
/// on random orthogonal directions at radius sqrt(2) * separation (pairwise
/// distance 2 * separation, comfortably angular after normalization);
/// otherwise rejection sampling at increasing scale.
inline Matrix draw_centers(int k, int d, double separation, Rng& rng) {
  if (d >= k) {
    Matrix g(d, k);
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = rng.normal();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(d, k);
    return std::sqrt(2.0) * separation * q.transpose();
  }
  double scale = separation;
  for (int attempt = 0; attempt < 200; ++attempt) {
    Matrix centers(k, d);
    for (Eigen::Index i = 0; i < centers.size(); ++i) {
      centers.data()[i] = scale * rng.normal();
    }
    double min_dist = std::numeric_limits<double>::infinity();
    for (int a = 0; a < k; ++a) {
      for (int b = a + 1; b < k; ++b) {
        min_dist = std::min(min_dist, (centers.row(a) - centers.row(b)).norm());
      }
    }
    if (min_dist >= separation) return centers;
    scale *= 1.25;
  }
  throw DataError("generate_synthetic: cannot place " + std::to_string(k) +
                  " centers at separation " + std::to_string(separation) +
                  " in " + std::to_string(d) + " dimensions");
}

}  // namespace bench_detail

/// Draws the synthetic verification dataset: isotropic unit-variance Gaussian
/// clusters, anchors at noise-perturbed centers, everything L2-normalized.
/// The Bayes accuracy is computed against the raw (pre-normalization) samples
/// with the true centers.
inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  if (spec.k < 1 || spec.d < 1 || spec.n_per_class < 1) {
    throw std::invalid_argument("generate_synthetic: counts must be >= 1");
  }
  if (!(spec.center_separation > 0.0)) {
    throw std::invalid_argument("generate_synthetic: separation must be > 0");
  }
  Rng rng(spec.seed);
  const Matrix centers = bench_detail::draw_centers(spec.k, spec.d,
                                                    spec.center_separation, rng);
  const int64_t n = static_cast<int64_t>(spec.k) * spec.n_per_class;
  Matrix x(n, spec.d);
  LabelVector labels;
  labels.labels.reserve(static_cast<size_t>(n));
  for (int c = 0; c < spec.k; ++c) {
    for (int s = 0; s < spec.n_per_class; ++s) {
      const Eigen::Index row = static_cast<Eigen::Index>(c) * spec.n_per_class + s;
      for (int j = 0; j < spec.d; ++j) x(row, j) = centers(c, j) + rng.normal();
      labels.labels.push_back(c);
    }
  }
  int64_t bayes_hits = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index best = 0;
    double best_dist = (x.row(i) - centers.row(0)).squaredNorm();
    for (int c = 1; c < spec.k; ++c) {
      const double dist = (x.row(i) - centers.row(c)).squaredNorm();
      if (dist < best_dist) {
        best_dist = dist;
        best = c;
      }
    }
    if (best == labels.labels[static_cast<size_t>(i)]) ++bayes_hits;
  }
  Matrix anchor_rows = centers;
  for (Eigen::Index i = 0; i < anchor_rows.size(); ++i) {
    anchor_rows.data()[i] += spec.anchor_noise * rng.normal();
  }
  SyntheticData out;
  out.features = EmbeddingSet::from_rows(std::move(x));
  out.anchors = AnchorSet::from_rows(std::move(anchor_rows));
  out.labels = std::move(labels);
  out.bayes_accuracy = static_cast<double>(bayes_hits) / static_cast<double>(n);
  return out;
}

/// Bisects the anchor noise until zero-shot accuracy lands in [lo, hi].
/// Returns the spec with the tuned noise; throws if the bracket never closes.
inline SyntheticSpec tune_anchor_noise(SyntheticSpec spec, double lo, double hi,
                                       double tau = 100.0) {
  if (!(lo < hi)) throw std::invalid_argument("tune_anchor_noise: lo >= hi");
  double lo_noise = 0.0;
  double hi_noise = 20.0 * spec.center_separation;
  for (int step = 0; step < 60; ++step) {
    spec.anchor_noise = 0.5 * (lo_noise + hi_noise);
    const SyntheticData data = generate_synthetic(spec);
    const double acc = zero_shot_accuracy(
        zero_shot_predict(data.features, data.anchors, {tau}), data.labels);
    if (acc > hi) {
      lo_noise = spec.anchor_noise;
    } else if (acc < lo) {
      hi_noise = spec.anchor_noise;
    } else {
      return spec;
    }
  }
  throw DataError("tune_anchor_noise: could not reach the target zero-shot band");
}

namespace bench_detail {

inline double accuracy_of(const AssignmentMatrix& z, const LabelVector& labels) {
  int64_t hits = 0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    if (argmax_row(z.row(i)) == labels.labels[static_cast<size_t>(i)]) ++hits;
  }
  return z.rows() ? static_cast<double>(hits) / static_cast<double>(z.rows()) : 0.0;
}

/// Runs `fn(task_index)` over [0, n_tasks) on `jobs` threads. Results land in
/// pre-assigned slots, so the aggregate is independent of scheduling.
template <typename Fn>
void parallel_tasks(int n_tasks, int jobs, Fn&& fn) {
  jobs = std::max(1, std::min(jobs, n_tasks));
  if (jobs == 1) {
    for (int t = 0; t < n_tasks; ++t) fn(t);
    return;
  }
  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> errors(static_cast<size_t>(jobs));
  for (int w = 0; w < jobs; ++w) {
    workers.emplace_back([&, w] {
      try {
        for (int t = w; t < n_tasks; t += jobs) fn(t);
      } catch (...) {
        errors[static_cast<size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& th : workers) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

inline nlohmann::json solver_config_json(const SolverConfig& cfg) {
  return {{"outer_iters", cfg.outer_iters},
          {"inner_z_iters", cfg.inner_z_iters},
          {"z_tolerance", cfg.z_tolerance},
          {"affinity", cfg.affinity == AffinityMode::kFull ? "full" : "knn"},
          {"knn", cfg.knn_k},
          {"alpha", cfg.anchor.alpha},
          {"beta_mode", cfg.anchor.beta_mode == BetaMode::kHard ? "hard" : "soft"},
          {"variance_floor", cfg.anchor.variance_floor},
          {"tau", cfg.tau},
          {"stream_refine_rounds", cfg.stream_refine_rounds}};
}

}  // namespace bench_detail

/// Runs `n_tasks` batch tasks sampled from the scenario. Each task is solved
/// on its subset with the full anchor set (the solver is never told which
/// classes are present) and scored by argmax accuracy.
inline RunReport run_batch_benchmark(const EmbeddingSet& features,
                                     const AnchorSet& anchors,
                                     const LabelVector& labels,
                                     const BatchScenario& scenario,
                                     const SolverConfig& solver_cfg, int jobs = 1) {
  if (scenario.n_tasks < 1) throw std::invalid_argument("run_batch_benchmark: empty scenario");
  if (features.n() != labels.size()) {
    throw std::invalid_argument("run_batch_benchmark: features/labels size mismatch");
  }
  const auto t0 = std::chrono::steady_clock::now();
  const int k = static_cast<int>(anchors.k());

  Rng rng(scenario.seed);
  std::vector<Task> tasks;
  tasks.reserve(static_cast<size_t>(scenario.n_tasks));
  for (int t = 0; t < scenario.n_tasks; ++t) {
    tasks.push_back(sample_batch_task(labels, scenario, k, rng));
  }

  RunReport report;
  report.per_task_accuracy.resize(static_cast<size_t>(scenario.n_tasks));
  std::vector<double> zs_accuracy(static_cast<size_t>(scenario.n_tasks));
  bench_detail::parallel_tasks(scenario.n_tasks, jobs, [&](int t) {
    const Task& task = tasks[static_cast<size_t>(t)];
    const EmbeddingSet sub = features.subset(task.indices);
    const LabelVector sub_labels = labels.subset(task.indices);
    zs_accuracy[static_cast<size_t>(t)] = zero_shot_accuracy(
        zero_shot_predict(sub, anchors, {solver_cfg.tau}), sub_labels);
    const SolveResult res = solve(sub, anchors, solver_cfg);
    report.per_task_accuracy[static_cast<size_t>(t)] =
        bench_detail::accuracy_of(res.z, sub_labels);
  });

  double acc_sum = 0.0, zs_sum = 0.0;
  for (int t = 0; t < scenario.n_tasks; ++t) {
    acc_sum += report.per_task_accuracy[static_cast<size_t>(t)];
    zs_sum += zs_accuracy[static_cast<size_t>(t)];
  }
  report.mean_accuracy = acc_sum / scenario.n_tasks;
  report.delta_vs_zeroshot = report.mean_accuracy - zs_sum / scenario.n_tasks;
  report.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  report.config_snapshot = {
      {"scenario",
       {{"type", "batch"},
        {"name", to_string(scenario.name)},
        {"keff_lo", scenario.keff_lo},
        {"keff_hi", scenario.keff_hi},
        {"batch_size", scenario.batch_size},
        {"n_tasks", scenario.n_tasks},
        {"seed", scenario.seed}}},
      {"solver", bench_detail::solver_config_json(solver_cfg)}};
  return report;
}

/// Runs `n_tasks` stream tasks. Accuracy counts the prediction emitted when
/// each batch was processed; every sample of the stream is scored once.
inline RunReport run_stream_benchmark(const EmbeddingSet& features,
                                      const AnchorSet& anchors,
                                      const LabelVector& labels,
                                      const StreamScenario& scenario,
                                      const SolverConfig& solver_cfg, int jobs = 1) {
  if (scenario.n_tasks < 1) throw std::invalid_argument("run_stream_benchmark: empty scenario");
  if (features.n() != labels.size()) {
    throw std::invalid_argument("run_stream_benchmark: features/labels size mismatch");
  }
  const auto t0 = std::chrono::steady_clock::now();
  const int k = static_cast<int>(anchors.k());

  Rng rng(scenario.seed);
  std::vector<Task> tasks;
  tasks.reserve(static_cast<size_t>(scenario.n_tasks));
  for (int t = 0; t < scenario.n_tasks; ++t) {
    tasks.push_back(sample_stream_task(labels, scenario, k, rng));
  }

  RunReport report;
  report.per_task_accuracy.resize(static_cast<size_t>(scenario.n_tasks));
  std::vector<double> zs_accuracy(static_cast<size_t>(scenario.n_tasks));
  bench_detail::parallel_tasks(scenario.n_tasks, jobs, [&](int t) {
    const Task& task = tasks[static_cast<size_t>(t)];
    int64_t begin = 0;
    int64_t hits = 0, zs_hits = 0, total = 0;
    StreamState state;
    for (size_t b = 0; b < task.batch_boundaries.size(); ++b) {
      const int64_t end = task.batch_boundaries[b];
      const std::vector<int64_t> batch_idx(task.indices.begin() + begin,
                                           task.indices.begin() + end);
      const EmbeddingSet batch = features.subset(batch_idx);
      const LabelVector batch_labels = labels.subset(batch_idx);
      if (b == 0) state = stream_init(anchors, batch, solver_cfg);
      const AssignmentMatrix z = stream_step(state, batch, solver_cfg);
      const AssignmentMatrix zs =
          zero_shot_predict(batch, anchors, {solver_cfg.tau});
      for (Eigen::Index i = 0; i < z.rows(); ++i) {
        const int32_t y = batch_labels.labels[static_cast<size_t>(i)];
        hits += argmax_row(z.row(i)) == y;
        zs_hits += argmax_row(zs.row(i)) == y;
      }
      total += end - begin;
      begin = end;
    }
    report.per_task_accuracy[static_cast<size_t>(t)] =
        static_cast<double>(hits) / static_cast<double>(total);
    zs_accuracy[static_cast<size_t>(t)] =
        static_cast<double>(zs_hits) / static_cast<double>(total);
  });

  double acc_sum = 0.0, zs_sum = 0.0;
  for (int t = 0; t < scenario.n_tasks; ++t) {
    acc_sum += report.per_task_accuracy[static_cast<size_t>(t)];
    zs_sum += zs_accuracy[static_cast<size_t>(t)];
  }
  report.mean_accuracy = acc_sum / scenario.n_tasks;
  report.delta_vs_zeroshot = report.mean_accuracy - zs_sum / scenario.n_tasks;
  report.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  report.config_snapshot = {
      {"scenario",
       {{"type", "stream"},
        {"mode", scenario.mode == StreamMode::kDirichlet ? "dirichlet" : "separate"},
        {"gamma", scenario.gamma},
        {"batch_size", scenario.batch_size},
        {"n_tasks", scenario.n_tasks},
        {"seed", scenario.seed}}},
      {"solver", bench_detail::solver_config_json(solver_cfg)}};
  return report;
}

struct McEstimate {
  double value = 0.0;
  double std_error = 0.0;
};

/// Monte-Carlo estimate of KL(p || q) for diagonal Gaussians via
/// E_p[log p - log q]; the independent check of the closed form.
inline McEstimate mc_kl_oracle(const Vector& mu_p, const Vector& sigma_p,
                               const Vector& mu_q, const Vector& sigma_q,
                               int64_t n_samples, Rng& rng) {
  const Eigen::Index d = mu_p.size();
  if (sigma_p.size() != d || mu_q.size() != d || sigma_q.size() != d) {
    throw std::invalid_argument("mc_kl_oracle: shape mismatch");
  }
  if (d > 8) throw std::invalid_argument("mc_kl_oracle: d must be <= 8");
  if (n_samples < 100000) throw std::invalid_argument("mc_kl_oracle: need >= 1e5 samples");
  if (sigma_p.minCoeff() <= 0.0 || sigma_q.minCoeff() <= 0.0) {
    throw std::invalid_argument("mc_kl_oracle: degenerate sigma");
  }
  const Vector sd_p = sigma_p.array().sqrt();
  // The shared -(d/2) log 2pi cancels in the difference of log densities.
  const double log_det_ratio =
      0.5 * (sigma_q.array().log().sum() - sigma_p.array().log().sum());
  double sum = 0.0, sumsq = 0.0;
  Vector x(d);
  for (int64_t s = 0; s < n_samples; ++s) {
    for (Eigen::Index j = 0; j < d; ++j) x(j) = mu_p(j) + sd_p(j) * rng.normal();
    const double quad_p = ((x - mu_p).array().square() / sigma_p.array()).sum();
    const double quad_q = ((x - mu_q).array().square() / sigma_q.array()).sum();
    const double v = log_det_ratio + 0.5 * (quad_q - quad_p);
    sum += v;
    sumsq += v * v;
  }
  McEstimate est;
  est.value = sum / static_cast<double>(n_samples);
  const double var =
      (sumsq - sum * sum / static_cast<double>(n_samples)) /
      static_cast<double>(n_samples - 1);
  est.std_error = std::sqrt(std::max(0.0, var) / static_cast<double>(n_samples));
  return est;
}

}  // namespace stata

#endif  // STATA_BENCH_HPP_
