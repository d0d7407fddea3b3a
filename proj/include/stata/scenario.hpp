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
#ifndef STATA_SCENARIO_HPP_
#define STATA_SCENARIO_HPP_

// Evaluation-task generators: batch tasks with a bounded number of effective
// classes, and non-i.i.d. streams built by slot-wise Dirichlet allocation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stata/random.hpp"
#include "stata/types.hpp"

namespace stata {

enum class BatchScenarioName { kVeryLow, kLow, kMedium, kHigh, kVeryHigh, kAll, kCustom };

inline const char* to_string(BatchScenarioName n) {
  switch (n) {
    case BatchScenarioName::kVeryLow: return "very-low";
    case BatchScenarioName::kLow: return "low";
    case BatchScenarioName::kMedium: return "medium";
    case BatchScenarioName::kHigh: return "high";
    case BatchScenarioName::kVeryHigh: return "very-high";
    case BatchScenarioName::kAll: return "all";
    case BatchScenarioName::kCustom: return "custom";
  }
  return "?";
}

struct BatchScenario {
  BatchScenarioName name = BatchScenarioName::kLow;
  int keff_lo = 2;
  int keff_hi = 10;
  int batch_size = 64;
  int n_tasks = 1000;
  uint64_t seed = 0;

  /// Named scenario with its fixed effective-class range. `k` is the total
  /// class count; ranges are clipped to it.
  static BatchScenario make(BatchScenarioName name, int k, int batch_size,
                            int n_tasks, uint64_t seed) {
    int lo = 1, hi = k;
    switch (name) {
      case BatchScenarioName::kVeryLow: lo = 1; hi = 4; break;
      case BatchScenarioName::kLow: lo = 2; hi = 10; break;
      case BatchScenarioName::kMedium: lo = 5; hi = 25; break;
      case BatchScenarioName::kHigh: lo = 25; hi = 50; break;
      case BatchScenarioName::kVeryHigh: lo = 50; hi = 100; break;
      case BatchScenarioName::kAll: lo = k; hi = k; break;
      case BatchScenarioName::kCustom:
        throw std::invalid_argument("custom scenario needs an explicit range");
    }
    lo = std::min(lo, k);
    hi = std::min(hi, k);
    if (lo > hi) throw std::invalid_argument("batch scenario: empty range after clipping");
    return BatchScenario{name, lo, hi, batch_size, n_tasks, seed};
  }
};

enum class StreamMode { kDirichlet, kSeparate };

struct StreamScenario {
  StreamMode mode = StreamMode::kDirichlet;
  double gamma = 0.1;   // Dirichlet concentration; small = highly correlated
  int batch_size = 128;
  int n_tasks = 100;
  uint64_t seed = 0;
};

/// One materialized evaluation task: ordered sample indices plus, for streams,
/// the exclusive end offset of every batch.
struct Task {
  std::vector<int64_t> indices;
  std::vector<int64_t> batch_boundaries;
  std::vector<int32_t> effective_classes;
  nlohmann::json scenario;
  uint64_t seed = 0;

  int64_t n_batches() const { return static_cast<int64_t>(batch_boundaries.size()); }
};

namespace scenario_detail {

inline std::vector<std::vector<int64_t>> class_pools(const LabelVector& labels, int k) {
  std::vector<std::vector<int64_t>> pools(static_cast<size_t>(k));
  for (int64_t i = 0; i < labels.size(); ++i) {
    const int32_t c = labels.labels[static_cast<size_t>(i)];
    if (c < 0 || c >= k) {
      throw DataError("labels contain class " + std::to_string(c) +
                      " outside [0, " + std::to_string(k) + ")");
    }
    pools[static_cast<size_t>(c)].push_back(i);
  }
  return pools;
}

}  // namespace scenario_detail

/// Number of stream slots for a dataset of n samples.
inline int stream_slot_count(int64_t n, int k, int batch_size) {
  if (batch_size < 1) throw std::invalid_argument("stream: batch_size < 1");
  const int64_t by_size = n / batch_size;
  if (by_size < 1) throw std::invalid_argument("stream: fewer samples than one batch");
  return static_cast<int>(std::min<int64_t>(k, by_size));
}

/// Draws one batch task: a uniform effective-class count from the scenario
/// range, that many distinct classes, one guaranteed sample per chosen class,
/// and uniform without-replacement fill from the chosen classes' pools (with
/// replacement only once the pools are exhausted).
inline Task sample_batch_task(const LabelVector& labels, const BatchScenario& sc,
                              int k, Rng& rng) {
  const auto pools = scenario_detail::class_pools(labels, k);
  for (int c = 0; c < k; ++c) {
    if (pools[static_cast<size_t>(c)].empty()) {
      throw DataError("batch task: class " + std::to_string(c) + " has zero samples");
    }
  }
  if (sc.keff_lo < 1 || sc.keff_lo > sc.keff_hi || sc.keff_hi > k) {
    throw std::invalid_argument("batch task: effective-class range outside [1, K]");
  }
  if (sc.batch_size < sc.keff_lo) {
    throw std::invalid_argument("batch task: batch_size < minimum effective classes");
  }
  const int keff = static_cast<int>(rng.uniform_int(sc.keff_lo, sc.keff_hi));
  if (sc.batch_size < keff) {
    throw std::invalid_argument("batch task: batch_size " + std::to_string(sc.batch_size) +
                                " < drawn effective classes " + std::to_string(keff));
  }
  const std::vector<int64_t> chosen_raw = rng.sample_distinct(k, keff);
  std::vector<int32_t> chosen(chosen_raw.begin(), chosen_raw.end());
  std::sort(chosen.begin(), chosen.end());

  std::vector<int64_t> picked;
  picked.reserve(static_cast<size_t>(sc.batch_size));
  std::vector<int64_t> union_pool;   // everything from the chosen classes
  std::vector<int64_t> leftover;     // union minus the reserved samples
  for (int32_t c : chosen) {
    const auto& pool = pools[static_cast<size_t>(c)];
    const size_t at = static_cast<size_t>(
        rng.uniform_int(0, static_cast<int64_t>(pool.size()) - 1));
    picked.push_back(pool[at]);
    union_pool.insert(union_pool.end(), pool.begin(), pool.end());
    for (size_t i = 0; i < pool.size(); ++i) {
      if (i != at) leftover.push_back(pool[i]);
    }
  }
  rng.shuffle(leftover);
  size_t take = 0;
  while (static_cast<int>(picked.size()) < sc.batch_size && take < leftover.size()) {
    picked.push_back(leftover[take++]);
  }
  while (static_cast<int>(picked.size()) < sc.batch_size) {
    // Union pool exhausted: fall back to with-replacement draws across it.
    picked.push_back(union_pool[static_cast<size_t>(
        rng.uniform_int(0, static_cast<int64_t>(union_pool.size()) - 1))]);
  }
  rng.shuffle(picked);

  Task task;
  task.indices = std::move(picked);
  task.effective_classes = std::move(chosen);
  task.seed = sc.seed;
  task.scenario = {{"type", "batch"},
                   {"name", to_string(sc.name)},
                   {"keff_lo", sc.keff_lo},
                   {"keff_hi", sc.keff_hi},
                   {"batch_size", sc.batch_size}};
  return task;
}

/// Distributes every sample to a slot: per class, slot proportions are drawn
/// from Dirichlet(gamma) and the class's samples assigned multinomially.
/// Kept in log space so that tiny gamma does not underflow every slot weight
/// to zero. Returns slot -> member indices.
inline std::vector<std::vector<int64_t>> dirichlet_slot_assignment(
    const LabelVector& labels, int k, int slots, double gamma, Rng& rng) {
  if (!(gamma > 0.0)) throw std::invalid_argument("stream: gamma must be > 0");
  const auto pools = scenario_detail::class_pools(labels, k);
  std::vector<std::vector<int64_t>> slot_members(static_cast<size_t>(slots));
  std::vector<double> log_w(static_cast<size_t>(slots));
  std::vector<double> cum(static_cast<size_t>(slots));
  for (int c = 0; c < k; ++c) {
    double lse_max = -std::numeric_limits<double>::infinity();
    for (int s = 0; s < slots; ++s) {
      log_w[static_cast<size_t>(s)] = rng.log_gamma_draw(gamma);
      lse_max = std::max(lse_max, log_w[static_cast<size_t>(s)]);
    }
    double total = 0.0;
    for (int s = 0; s < slots; ++s) {
      total += std::exp(log_w[static_cast<size_t>(s)] - lse_max);
      cum[static_cast<size_t>(s)] = total;
    }
    for (int64_t idx : pools[static_cast<size_t>(c)]) {
      const double u = rng.uniform() * total;
      const auto it = std::upper_bound(cum.begin(), cum.end(), u);
      const size_t s = std::min(static_cast<size_t>(it - cum.begin()),
                                static_cast<size_t>(slots - 1));
      slot_members[s].push_back(idx);
    }
  }
  return slot_members;
}

/// Draws one stream task covering the whole dataset: dirichlet mode spreads
/// each class over the slots by Dirichlet(gamma) proportions and shuffles
/// within slots; separate mode plays the classes sequentially in random
/// order. The order is then cut into batches; a ragged final batch is kept.
inline Task sample_stream_task(const LabelVector& labels, const StreamScenario& sc,
                               int k, Rng& rng) {
  const auto pools = scenario_detail::class_pools(labels, k);
  const int64_t n = labels.size();
  Task task;
  task.seed = sc.seed;

  if (sc.mode == StreamMode::kDirichlet) {
    const int slots = stream_slot_count(n, k, sc.batch_size);
    auto slot_members = dirichlet_slot_assignment(labels, k, slots, sc.gamma, rng);
    for (auto& slot : slot_members) {
      rng.shuffle(slot);
      task.indices.insert(task.indices.end(), slot.begin(), slot.end());
    }
  } else {
    std::vector<int64_t> class_order(static_cast<size_t>(k));
    for (int c = 0; c < k; ++c) class_order[static_cast<size_t>(c)] = c;
    rng.shuffle(class_order);
    for (int64_t c : class_order) {
      std::vector<int64_t> members = pools[static_cast<size_t>(c)];
      rng.shuffle(members);
      task.indices.insert(task.indices.end(), members.begin(), members.end());
    }
  }

  for (int64_t off = sc.batch_size; off < n; off += sc.batch_size) {
    task.batch_boundaries.push_back(off);
  }
  task.batch_boundaries.push_back(n);

  std::set<int32_t> present;
  for (int64_t idx : task.indices) {
    present.insert(labels.labels[static_cast<size_t>(idx)]);
  }
  task.effective_classes.assign(present.begin(), present.end());
  task.scenario = {{"type", "stream"},
                   {"mode", sc.mode == StreamMode::kDirichlet ? "dirichlet" : "separate"},
                   {"gamma", sc.gamma},
                   {"batch_size", sc.batch_size}};
  return task;
}

inline nlohmann::json task_to_json(const Task& task) {
  return {{"indices", task.indices},
          {"batch_boundaries", task.batch_boundaries},
          {"effective_classes", task.effective_classes},
          {"scenario", task.scenario},
          {"seed", task.seed}};
}

inline Task task_from_json(const nlohmann::json& j) {
  Task task;
  task.indices = j.at("indices").get<std::vector<int64_t>>();
  task.batch_boundaries = j.value("batch_boundaries", std::vector<int64_t>{});
  task.effective_classes = j.value("effective_classes", std::vector<int32_t>{});
  if (j.contains("scenario")) task.scenario = j["scenario"];
  task.seed = j.value("seed", uint64_t{0});
  return task;
}

}  // namespace stata

#endif  // STATA_SCENARIO_HPP_
