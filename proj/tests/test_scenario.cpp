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
#include "stata/scenario.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "gtest/gtest.h"

namespace stata {
namespace {

LabelVector balanced_labels(int k, int per_class) {
  LabelVector v;
  for (int c = 0; c < k; ++c) {
    for (int s = 0; s < per_class; ++s) v.labels.push_back(c);
  }
  return v;
}

TEST(BatchScenario, NamedRanges) {
  EXPECT_EQ(BatchScenario::make(BatchScenarioName::kVeryLow, 100, 64, 1, 0).keff_lo, 1);
  EXPECT_EQ(BatchScenario::make(BatchScenarioName::kVeryLow, 100, 64, 1, 0).keff_hi, 4);
  EXPECT_EQ(BatchScenario::make(BatchScenarioName::kLow, 100, 64, 1, 0).keff_hi, 10);
  EXPECT_EQ(BatchScenario::make(BatchScenarioName::kMedium, 100, 64, 1, 0).keff_hi, 25);
  EXPECT_EQ(BatchScenario::make(BatchScenarioName::kHigh, 100, 64, 1, 0).keff_lo, 25);
  EXPECT_EQ(BatchScenario::make(BatchScenarioName::kVeryHigh, 100, 64, 1, 0).keff_hi, 100);
  const BatchScenario all = BatchScenario::make(BatchScenarioName::kAll, 37, 64, 1, 0);
  EXPECT_EQ(all.keff_lo, 37);
  EXPECT_EQ(all.keff_hi, 37);
}

TEST(BatchTask, GuaranteesChosenClassPresence) {
  const LabelVector labels = balanced_labels(20, 30);
  Rng rng(1);
  BatchScenario sc = BatchScenario::make(BatchScenarioName::kLow, 20, 64, 1, 1);
  for (int t = 0; t < 200; ++t) {
    const Task task = sample_batch_task(labels, sc, 20, rng);
    EXPECT_EQ(task.indices.size(), 64u);
    std::set<int32_t> seen;
    for (int64_t idx : task.indices) {
      seen.insert(labels.labels[static_cast<size_t>(idx)]);
    }
    const std::set<int32_t> chosen(task.effective_classes.begin(),
                                   task.effective_classes.end());
    EXPECT_EQ(seen, chosen);  // every chosen class occurs, nothing else
    // Without-replacement fill while the chosen classes' pool suffices;
    // repeats only appear once the pool is exhausted.
    std::set<int64_t> uniq(task.indices.begin(), task.indices.end());
    const size_t pool = chosen.size() * 30;
    if (pool >= task.indices.size()) {
      EXPECT_EQ(uniq.size(), task.indices.size());
    } else {
      EXPECT_EQ(uniq.size(), pool);  // whole pool used before any repeat
    }
  }
}

TEST(BatchTask, KeffSpansTheRange) {
  const LabelVector labels = balanced_labels(100, 4);
  Rng rng(2);
  BatchScenario sc = BatchScenario::make(BatchScenarioName::kVeryLow, 100, 16, 1, 2);
  std::map<size_t, int> hist;
  for (int t = 0; t < 10000; ++t) {
    const Task task = sample_batch_task(labels, sc, 100, rng);
    hist[task.effective_classes.size()]++;
  }
  ASSERT_EQ(hist.size(), 4u);  // 1..4 all observed
  for (const auto& [keff, count] : hist) {
    EXPECT_GE(keff, 1u);
    EXPECT_LE(keff, 4u);
    EXPECT_GT(count, 0);
  }
}

TEST(BatchTask, UniformKeffChiSquare) {
  const LabelVector labels = balanced_labels(30, 8);
  Rng rng(3);
  BatchScenario sc = BatchScenario::make(BatchScenarioName::kLow, 30, 64, 1, 3);
  const int draws = 20000;
  std::vector<int> counts(9, 0);  // keff in [2, 10]
  for (int t = 0; t < draws; ++t) {
    const Task task = sample_batch_task(labels, sc, 30, rng);
    counts[task.effective_classes.size() - 2]++;
  }
  const double expected = draws / 9.0;
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
  // df = 8; p > 0.001 means chi2 below the 0.999 quantile (~26.12).
  EXPECT_LT(chi2, 26.12);
}

TEST(BatchTask, AllScenarioCoversDataset) {
  const LabelVector labels = balanced_labels(10, 10);
  Rng rng(4);
  BatchScenario sc = BatchScenario::make(BatchScenarioName::kAll, 10, 100, 1, 4);
  const Task task = sample_batch_task(labels, sc, 10, rng);
  EXPECT_EQ(task.effective_classes.size(), 10u);
  std::set<int64_t> uniq(task.indices.begin(), task.indices.end());
  EXPECT_EQ(uniq.size(), 100u);  // whole dataset, each sample once
}

TEST(BatchTask, RejectsImpossibleRequests) {
  const LabelVector labels = balanced_labels(10, 5);
  Rng rng(5);
  BatchScenario sc = BatchScenario::make(BatchScenarioName::kAll, 10, 4, 1, 5);
  EXPECT_THROW(sample_batch_task(labels, sc, 10, rng), std::invalid_argument);

  LabelVector holey = balanced_labels(3, 5);
  for (auto& l : holey.labels) {
    if (l == 1) l = 2;  // class 1 now empty
  }
  BatchScenario sc2 = BatchScenario::make(BatchScenarioName::kVeryLow, 3, 8, 1, 6);
  EXPECT_THROW(sample_batch_task(holey, sc2, 3, rng), DataError);
}

TEST(StreamTask, SlotCountFormula) {
  EXPECT_EQ(stream_slot_count(1000, 10, 128), 7);  // min(10, floor(1000/128))
  EXPECT_EQ(stream_slot_count(1000, 4, 128), 4);
  EXPECT_EQ(stream_slot_count(256, 100, 128), 2);
  EXPECT_THROW(stream_slot_count(100, 10, 128), std::invalid_argument);
}

TEST(StreamTask, IsAPermutationOfTheDataset) {
  const LabelVector labels = balanced_labels(10, 100);
  Rng rng(6);
  StreamScenario sc;
  sc.gamma = 0.05;
  sc.batch_size = 128;
  sc.seed = 6;
  const Task task = sample_stream_task(labels, sc, 10, rng);
  EXPECT_EQ(task.indices.size(), 1000u);
  std::set<int64_t> uniq(task.indices.begin(), task.indices.end());
  EXPECT_EQ(uniq.size(), 1000u);
  EXPECT_EQ(task.batch_boundaries.back(), 1000);
  for (size_t b = 1; b < task.batch_boundaries.size(); ++b) {
    EXPECT_GT(task.batch_boundaries[b], task.batch_boundaries[b - 1]);
  }
  // Ragged tail: 1000 = 7 * 128 + 104.
  EXPECT_EQ(task.batch_boundaries.size(), 8u);
}

TEST(StreamTask, SeparateModeIsContiguousByClass) {
  const LabelVector labels = balanced_labels(6, 40);
  Rng rng(7);
  StreamScenario sc;
  sc.mode = StreamMode::kSeparate;
  sc.batch_size = 32;
  const Task task = sample_stream_task(labels, sc, 6, rng);
  std::set<int32_t> finished;
  int32_t current = labels.labels[static_cast<size_t>(task.indices[0])];
  for (int64_t idx : task.indices) {
    const int32_t c = labels.labels[static_cast<size_t>(idx)];
    if (c != current) {
      EXPECT_TRUE(finished.insert(current).second);  // runs never resume
      current = c;
    }
  }
  EXPECT_FALSE(finished.contains(current));
}

TEST(StreamTask, HighGammaSpreadsClassesEvenly) {
  const LabelVector labels = balanced_labels(10, 1000);
  const int slots = stream_slot_count(labels.size(), 10, 128);
  double tv_sum = 0.0;
  int slot_count = 0;
  for (int seed = 0; seed < 50; ++seed) {
    Rng rng(static_cast<uint64_t>(seed));
    const auto members = dirichlet_slot_assignment(labels, 10, slots, 100.0, rng);
    for (const auto& slot : members) {
      if (slot.empty()) continue;
      Vector hist = Vector::Zero(10);
      for (int64_t idx : slot) hist(labels.labels[static_cast<size_t>(idx)]) += 1.0;
      hist /= hist.sum();
      tv_sum += 0.5 * (hist.array() - 0.1).abs().sum();
      ++slot_count;
    }
  }
  EXPECT_LT(tv_sum / slot_count, 0.1);
}

TEST(StreamTask, TinyGammaConcentratesEachClass) {
  const LabelVector labels = balanced_labels(10, 200);
  const int slots = stream_slot_count(labels.size(), 10, 128);
  double share_sum = 0.0;
  int class_count = 0;
  for (int seed = 0; seed < 50; ++seed) {
    Rng rng(1000 + static_cast<uint64_t>(seed));
    const auto members = dirichlet_slot_assignment(labels, 10, slots, 0.001, rng);
    std::map<int32_t, std::map<size_t, int>> per_class;
    for (size_t s = 0; s < members.size(); ++s) {
      for (int64_t idx : members[s]) {
        per_class[labels.labels[static_cast<size_t>(idx)]][s]++;
      }
    }
    for (const auto& [cls, hist] : per_class) {
      int best = 0, total = 0;
      for (const auto& [slot, count] : hist) {
        best = std::max(best, count);
        total += count;
      }
      share_sum += static_cast<double>(best) / total;
      ++class_count;
    }
  }
  EXPECT_GT(share_sum / class_count, 0.95);
}

TEST(Task, SeededDeterminismAndJsonRoundTrip) {
  const LabelVector labels = balanced_labels(12, 25);
  StreamScenario sc;
  sc.gamma = 0.01;
  sc.batch_size = 50;
  sc.seed = 99;
  Rng r1(99), r2(99);
  const Task a = sample_stream_task(labels, sc, 12, r1);
  const Task b = sample_stream_task(labels, sc, 12, r2);
  EXPECT_EQ(a.indices, b.indices);
  EXPECT_EQ(task_to_json(a).dump(), task_to_json(b).dump());

  const Task c = task_from_json(task_to_json(a));
  EXPECT_EQ(c.indices, a.indices);
  EXPECT_EQ(c.batch_boundaries, a.batch_boundaries);
  EXPECT_EQ(c.effective_classes, a.effective_classes);
}

}  // namespace
}  // namespace stata
