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

// stata: transductive and online test-time adaptation for vision-language
// embeddings. Subcommands: adapt, stream, gen-tasks, synth, eval, bench.
// Exit codes: 0 success, 1 usage error, 2 data/validation error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "stata/bench.hpp"
#include "stata/online.hpp"
#include "stata/scenario.hpp"
#include "stata/solver.hpp"
#include "stata/tensor_io.hpp"

namespace {

using nlohmann::json;

struct CommonFlags {
  std::string features, anchors, labels, task, output;
  std::string format = "csv";
  std::string beta_mode = "hard";
  std::string affinity = "knn";
  double alpha = 1.0;
  double tau = 100.0;
  int knn = 3;
  int outer_iters = 10;
  int inner_iters = 3;
  double z_tol = 1e-4;
  bool trace_objective = false;
};

void add_solver_flags(CLI::App* cmd, CommonFlags& f, bool allow_both_beta = false) {
  cmd->add_option("--alpha", f.alpha, "Anchor weight")->capture_default_str();
  cmd->add_option("--tau", f.tau, "Zero-shot softmax temperature")->capture_default_str();
  cmd->add_option("--knn", f.knn, "Neighbors per sample (0 disables the graph)")
      ->capture_default_str();
  cmd->add_option("--affinity", f.affinity, "Affinity graph: full or knn")
      ->check(CLI::IsMember({"full", "knn"}))
      ->capture_default_str();
  cmd->add_option("--outer-iters", f.outer_iters, "Outer iterations")->capture_default_str();
  cmd->add_option("--inner-iters", f.inner_iters, "Assignment sweeps per outer iteration")
      ->capture_default_str();
  cmd->add_option("--z-tol", f.z_tol, "L-inf assignment stop threshold")
      ->capture_default_str();
  std::vector<std::string> modes{"hard", "soft"};
  if (allow_both_beta) modes.push_back("both");
  cmd->add_option("--beta-mode", f.beta_mode, "Anchor blend weighting")
      ->check(CLI::IsMember(modes))
      ->capture_default_str();
  cmd->add_flag("--trace-objective", f.trace_objective,
                "Record the objective after every update (slow with --affinity full)");
}

stata::SolverConfig make_solver_config(const CommonFlags& f) {
  stata::SolverConfig cfg;
  cfg.outer_iters = f.outer_iters;
  cfg.inner_z_iters = f.inner_iters;
  cfg.z_tolerance = f.z_tol;
  cfg.affinity = f.affinity == "full" ? stata::AffinityMode::kFull
                                      : stata::AffinityMode::kKnn;
  cfg.knn_k = f.knn;
  cfg.anchor.alpha = f.alpha;
  cfg.anchor.beta_mode =
      f.beta_mode == "soft" ? stata::BetaMode::kSoft : stata::BetaMode::kHard;
  cfg.tau = f.tau;
  cfg.record_objective = f.trace_objective;
  return cfg;
}

/// Writes to the output path, or stdout when the path is empty.
void emit(const std::string& path, const std::string& content) {
  if (path.empty()) {
    std::cout << content;
    return;
  }
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw stata::DataError(path + ": cannot open for writing");
  out << content;
  if (!out) throw stata::DataError(path + ": write failed");
}

std::string predictions_csv(const stata::AssignmentMatrix& z,
                            const std::vector<int64_t>& indices) {
  std::string out = "index,predicted_class,max_prob\n";
  char line[96];
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const Eigen::Index cls = stata::argmax_row(z.row(i));
    std::snprintf(line, sizeof(line), "%lld,%lld,%.17g\n",
                  static_cast<long long>(indices[static_cast<size_t>(i)]),
                  static_cast<long long>(cls), z(i, cls));
    out += line;
  }
  return out;
}

std::string predictions_json(const stata::AssignmentMatrix& z,
                             const std::vector<int64_t>& indices) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const Eigen::Index cls = stata::argmax_row(z.row(i));
    std::vector<double> zrow(z.cols());
    for (Eigen::Index k = 0; k < z.cols(); ++k) zrow[static_cast<size_t>(k)] = z(i, k);
    rows.push_back({{"index", indices[static_cast<size_t>(i)]},
                    {"predicted_class", cls},
                    {"max_prob", z(i, cls)},
                    {"z", zrow}});
  }
  return json{{"predictions", rows}}.dump(2) + "\n";
}

std::vector<int64_t> identity_indices(int64_t n) {
  std::vector<int64_t> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = i;
  return out;
}

stata::Task load_task(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw stata::DataError(path + ": cannot open for reading");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw stata::DataError(path + ": malformed task JSON: " + e.what());
  }
  return stata::task_from_json(j);
}

int run_adapt(const CommonFlags& f) {
  const stata::EmbeddingSet all = stata::load_embeddings(f.features);
  const stata::AnchorSet anchors = stata::load_anchors(f.anchors);
  std::vector<int64_t> indices = identity_indices(all.n());
  stata::EmbeddingSet subset = all;
  if (!f.task.empty()) {
    const stata::Task task = load_task(f.task);
    indices = task.indices;
    subset = all.subset(indices);
  }
  const stata::SolverConfig cfg = make_solver_config(f);
  const stata::SolveResult res = stata::solve(subset, anchors, cfg);
  if (cfg.record_objective) {
    json trace = res.objective_trace;
    std::cerr << "objective trace: " << trace.dump() << "\n";
  }
  emit(f.output, f.format == "json" ? predictions_json(res.z, indices)
                                    : predictions_csv(res.z, indices));
  if (!f.labels.empty()) {
    const stata::LabelVector labels =
        stata::load_labels(f.labels, anchors.k()).subset(indices);
    std::cerr << "accuracy: " << stata::zero_shot_accuracy(res.z, labels) << "\n";
  }
  return 0;
}

int run_stream(const CommonFlags& f) {
  const stata::EmbeddingSet all = stata::load_embeddings(f.features);
  const stata::AnchorSet anchors = stata::load_anchors(f.anchors);
  const stata::Task task = load_task(f.task);
  std::vector<int64_t> boundaries = task.batch_boundaries;
  if (boundaries.empty()) {
    boundaries.push_back(static_cast<int64_t>(task.indices.size()));
  }
  const stata::SolverConfig cfg = make_solver_config(f);

  stata::AssignmentMatrix z_all(static_cast<Eigen::Index>(task.indices.size()),
                                anchors.k());
  stata::StreamState state;
  int64_t begin = 0;
  for (size_t b = 0; b < boundaries.size(); ++b) {
    const int64_t end = boundaries[b];
    if (end < begin || end > static_cast<int64_t>(task.indices.size())) {
      throw stata::DataError(f.task + ": bad batch boundary " + std::to_string(end));
    }
    const std::vector<int64_t> batch_idx(task.indices.begin() + begin,
                                         task.indices.begin() + end);
    const stata::EmbeddingSet batch = all.subset(batch_idx);
    if (b == 0) state = stata::stream_init(anchors, batch, cfg);
    const stata::AssignmentMatrix z = stata::stream_step(state, batch, cfg);
    z_all.middleRows(begin, end - begin) = z;
    begin = end;
  }
  emit(f.output, f.format == "json" ? predictions_json(z_all, task.indices)
                                    : predictions_csv(z_all, task.indices));
  return 0;
}

int infer_num_classes(const stata::LabelVector& labels, int num_classes_flag) {
  if (num_classes_flag > 0) return num_classes_flag;
  int32_t hi = 0;
  for (int32_t v : labels.labels) hi = std::max(hi, v);
  return hi + 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transductive and online test-time adaptation for "
               "vision-language embeddings"};
  app.require_subcommand(1);

  CommonFlags f;
  int num_classes = 0;
  int seed_flag = 0;
  int n_tasks = 1000;
  int batch_size = 64;
  int jobs = 1;
  int keff_min = 0, keff_max = 0;
  double gamma = 0.1;
  std::string scenario_name = "low";
  std::string pred_path;

  // adapt
  auto* adapt = app.add_subcommand("adapt", "Batch transductive solve");
  adapt->add_option("--features", f.features, "Query embeddings (EMB1)")->required();
  adapt->add_option("--anchors", f.anchors, "Class anchors (EMB1)")->required();
  adapt->add_option("--labels", f.labels, "Optional labels; accuracy goes to stderr");
  adapt->add_option("--task", f.task, "Optional task JSON restricting the solve");
  adapt->add_option("--output", f.output, "Output path (default stdout)");
  adapt->add_option("--format", f.format)->check(CLI::IsMember({"csv", "json"}));
  add_solver_flags(adapt, f);

  // stream
  auto* stream = app.add_subcommand("stream", "Online adaptation over a stream task");
  stream->add_option("--features", f.features)->required();
  stream->add_option("--anchors", f.anchors)->required();
  stream->add_option("--task", f.task, "Stream task JSON")->required();
  stream->add_option("--output", f.output);
  stream->add_option("--format", f.format)->check(CLI::IsMember({"csv", "json"}));
  add_solver_flags(stream, f);

  // gen-tasks
  auto* gen = app.add_subcommand("gen-tasks", "Generate evaluation tasks");
  gen->add_option("--labels", f.labels)->required();
  gen->add_option("--num-classes", num_classes, "Total classes (default: max label + 1)");
  gen->add_option("--scenario", scenario_name,
                  "very-low|low|medium|high|very-high|all|custom|dirichlet|separate")
      ->required();
  gen->add_option("--keff-min", keff_min, "Custom scenario: minimum effective classes");
  gen->add_option("--keff-max", keff_max, "Custom scenario: maximum effective classes");
  gen->add_option("--gamma", gamma, "Dirichlet concentration")->capture_default_str();
  gen->add_option("--batch-size", batch_size)->capture_default_str();
  gen->add_option("--n-tasks", n_tasks)->capture_default_str();
  gen->add_option("--seed", seed_flag)->capture_default_str();
  gen->add_option("--output", f.output, "Directory for task JSON files")->required();

  // synth
  auto* synth = app.add_subcommand("synth", "Generate synthetic verification data");
  int sy_k = 10, sy_d = 32, sy_npc = 100;
  double sy_sep = 6.0, sy_noise = 0.0, zs_lo = 0.0, zs_hi = 0.0;
  synth->add_option("--classes", sy_k)->capture_default_str();
  synth->add_option("--dim", sy_d)->capture_default_str();
  synth->add_option("--n-per-class", sy_npc)->capture_default_str();
  synth->add_option("--separation", sy_sep)->capture_default_str();
  synth->add_option("--anchor-noise", sy_noise)->capture_default_str();
  synth->add_option("--target-zs-lo", zs_lo, "Tune anchor noise: zero-shot lower bound");
  synth->add_option("--target-zs-hi", zs_hi, "Tune anchor noise: zero-shot upper bound");
  synth->add_option("--tau", f.tau)->capture_default_str();
  synth->add_option("--seed", seed_flag)->capture_default_str();
  synth->add_option("--output", f.output, "Output prefix")->required();

  // eval
  auto* eval = app.add_subcommand("eval", "Score a prediction CSV against labels");
  eval->add_option("--pred", pred_path, "Prediction CSV")->required();
  eval->add_option("--labels", f.labels)->required();
  eval->add_option("--num-classes", num_classes);
  eval->add_option("--output", f.output);

  // bench
  auto* bench = app.add_subcommand("bench", "End-to-end scenario benchmark");
  bench->add_option("--features", f.features)->required();
  bench->add_option("--anchors", f.anchors)->required();
  bench->add_option("--labels", f.labels)->required();
  bench->add_option("--scenario", scenario_name)->required();
  bench->add_option("--keff-min", keff_min);
  bench->add_option("--keff-max", keff_max);
  bench->add_option("--gamma", gamma)->capture_default_str();
  bench->add_option("--batch-size", batch_size)->capture_default_str();
  bench->add_option("--n-tasks", n_tasks)->capture_default_str();
  bench->add_option("--seed", seed_flag)->capture_default_str();
  bench->add_option("--jobs", jobs, "Parallel tasks")->capture_default_str();
  bench->add_option("--output", f.output);
  bench->add_option("--format", f.format)->check(CLI::IsMember({"csv", "json"}));
  add_solver_flags(bench, f, /*allow_both_beta=*/true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (app.got_subcommand(adapt)) return run_adapt(f);
    if (app.got_subcommand(stream)) return run_stream(f);

    if (app.got_subcommand(gen)) {
      const stata::LabelVector labels = stata::load_labels(
          f.labels, num_classes > 0 ? num_classes
                                    : std::numeric_limits<int32_t>::max());
      const int k = infer_num_classes(labels, num_classes);
      std::filesystem::create_directories(f.output);
      stata::Rng rng(static_cast<uint64_t>(seed_flag));
      const bool is_stream = scenario_name == "dirichlet" || scenario_name == "separate";
      for (int t = 0; t < n_tasks; ++t) {
        stata::Task task;
        if (is_stream) {
          stata::StreamScenario sc;
          sc.mode = scenario_name == "dirichlet" ? stata::StreamMode::kDirichlet
                                                 : stata::StreamMode::kSeparate;
          sc.gamma = gamma;
          sc.batch_size = batch_size;
          sc.n_tasks = n_tasks;
          sc.seed = static_cast<uint64_t>(seed_flag);
          task = stata::sample_stream_task(labels, sc, k, rng);
        } else {
          stata::BatchScenario sc;
          if (scenario_name == "custom") {
            if (keff_min < 1 || keff_max < keff_min) {
              throw CLI::ValidationError(
                  "--scenario custom needs --keff-min/--keff-max");
            }
            sc = stata::BatchScenario{stata::BatchScenarioName::kCustom, keff_min,
                                      keff_max, batch_size, n_tasks,
                                      static_cast<uint64_t>(seed_flag)};
          } else {
            stata::BatchScenarioName name;
            if (scenario_name == "very-low") name = stata::BatchScenarioName::kVeryLow;
            else if (scenario_name == "low") name = stata::BatchScenarioName::kLow;
            else if (scenario_name == "medium") name = stata::BatchScenarioName::kMedium;
            else if (scenario_name == "high") name = stata::BatchScenarioName::kHigh;
            else if (scenario_name == "very-high") name = stata::BatchScenarioName::kVeryHigh;
            else if (scenario_name == "all") name = stata::BatchScenarioName::kAll;
            else throw CLI::ValidationError("unknown scenario: " + scenario_name);
            sc = stata::BatchScenario::make(name, k, batch_size, n_tasks,
                                            static_cast<uint64_t>(seed_flag));
          }
          task = stata::sample_batch_task(labels, sc, k, rng);
        }
        char name[32];
        std::snprintf(name, sizeof(name), "task_%05d.json", t);
        emit((std::filesystem::path(f.output) / name).string(),
             stata::task_to_json(task).dump(2) + "\n");
      }
      return 0;
    }

    if (app.got_subcommand(synth)) {
      stata::SyntheticSpec spec{sy_k, sy_d, sy_npc, sy_sep, sy_noise,
                                static_cast<uint64_t>(seed_flag)};
      if (zs_hi > 0.0) {
        spec = stata::tune_anchor_noise(spec, zs_lo, zs_hi, f.tau);
      }
      const stata::SyntheticData data = stata::generate_synthetic(spec);
      stata::write_embeddings(f.output + "features.emb", data.features.data(),
                              stata::Dtype::kF64);
      stata::write_embeddings(f.output + "anchors.emb", data.anchors.data(),
                              stata::Dtype::kF64);
      stata::write_labels(f.output + "labels.txt", data.labels);
      const double zs = stata::zero_shot_accuracy(
          stata::zero_shot_predict(data.features, data.anchors, {f.tau}), data.labels);
      emit(f.output + "meta.json",
           json{{"k", spec.k},
                {"d", spec.d},
                {"n_per_class", spec.n_per_class},
                {"center_separation", spec.center_separation},
                {"anchor_noise", spec.anchor_noise},
                {"seed", spec.seed},
                {"bayes_accuracy", data.bayes_accuracy},
                {"zero_shot_accuracy", zs}}
               .dump(2) +
               "\n");
      return 0;
    }

    if (app.got_subcommand(eval)) {
      const stata::LabelVector labels = stata::load_labels(
          f.labels, num_classes > 0 ? num_classes
                                    : std::numeric_limits<int32_t>::max());
      std::ifstream in(pred_path);
      if (!in) throw stata::DataError(pred_path + ": cannot open for reading");
      std::string line;
      if (!std::getline(in, line)) throw stata::DataError(pred_path + ": empty file");
      int64_t hits = 0, total = 0;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        long long idx, cls;
        if (std::sscanf(line.c_str(), "%lld,%lld", &idx, &cls) != 2) {
          throw stata::DataError(pred_path + ": malformed row: " + line);
        }
        if (idx < 0 || idx >= labels.size()) {
          throw stata::DataError(pred_path + ": index out of range: " +
                                 std::to_string(idx));
        }
        hits += labels.labels[static_cast<size_t>(idx)] == cls;
        ++total;
      }
      if (total == 0) throw stata::DataError(pred_path + ": no prediction rows");
      emit(f.output, json{{"accuracy", static_cast<double>(hits) / total},
                          {"n_scored", total}}
                         .dump(2) +
                         "\n");
      return 0;
    }

    if (app.got_subcommand(bench)) {
      const stata::EmbeddingSet features = stata::load_embeddings(f.features);
      const stata::AnchorSet anchors = stata::load_anchors(f.anchors);
      const stata::LabelVector labels = stata::load_labels(f.labels, anchors.k());
      const int k = static_cast<int>(anchors.k());
      const bool is_stream = scenario_name == "dirichlet" || scenario_name == "separate";

      auto run_one = [&](const std::string& beta) -> stata::RunReport {
        CommonFlags fl = f;
        fl.beta_mode = beta;
        const stata::SolverConfig cfg = make_solver_config(fl);
        if (is_stream) {
          stata::StreamScenario sc;
          sc.mode = scenario_name == "dirichlet" ? stata::StreamMode::kDirichlet
                                                 : stata::StreamMode::kSeparate;
          sc.gamma = gamma;
          sc.batch_size = batch_size;
          sc.n_tasks = n_tasks;
          sc.seed = static_cast<uint64_t>(seed_flag);
          return stata::run_stream_benchmark(features, anchors, labels, sc, cfg, jobs);
        }
        stata::BatchScenario sc;
        if (scenario_name == "custom") {
          if (keff_min < 1 || keff_max < keff_min) {
            throw CLI::ValidationError("--scenario custom needs --keff-min/--keff-max");
          }
          sc = stata::BatchScenario{stata::BatchScenarioName::kCustom, keff_min,
                                    keff_max, batch_size, n_tasks,
                                    static_cast<uint64_t>(seed_flag)};
        } else {
          stata::BatchScenarioName name;
          if (scenario_name == "very-low") name = stata::BatchScenarioName::kVeryLow;
          else if (scenario_name == "low") name = stata::BatchScenarioName::kLow;
          else if (scenario_name == "medium") name = stata::BatchScenarioName::kMedium;
          else if (scenario_name == "high") name = stata::BatchScenarioName::kHigh;
          else if (scenario_name == "very-high") name = stata::BatchScenarioName::kVeryHigh;
          else if (scenario_name == "all") name = stata::BatchScenarioName::kAll;
          else throw CLI::ValidationError("unknown scenario: " + scenario_name);
          sc = stata::BatchScenario::make(name, k, batch_size, n_tasks,
                                          static_cast<uint64_t>(seed_flag));
        }
        return stata::run_batch_benchmark(features, anchors, labels, sc, cfg, jobs);
      };

      auto report_json = [](const stata::RunReport& r) {
        return json{{"per_task_accuracy", r.per_task_accuracy},
                    {"mean_accuracy", r.mean_accuracy},
                    {"delta_vs_zeroshot", r.delta_vs_zeroshot},
                    {"wall_time_seconds", r.wall_time_seconds},
                    {"config", r.config_snapshot}};
      };
      auto report_csv = [](const stata::RunReport& r, const std::string& tag) {
        std::string out = "beta_mode,task,accuracy\n";
        char line[64];
        for (size_t t = 0; t < r.per_task_accuracy.size(); ++t) {
          std::snprintf(line, sizeof(line), "%s,%zu,%.17g\n", tag.c_str(), t,
                        r.per_task_accuracy[t]);
          out += line;
        }
        return out;
      };

      if (f.beta_mode == "both") {
        const stata::RunReport hard = run_one("hard");
        const stata::RunReport soft = run_one("soft");
        if (f.format == "json") {
          emit(f.output, json{{"hard", report_json(hard)}, {"soft", report_json(soft)}}
                             .dump(2) +
                             "\n");
        } else {
          std::string csv = report_csv(hard, "hard");
          csv += report_csv(soft, "soft").substr(std::string("beta_mode,task,accuracy\n").size());
          emit(f.output, csv);
        }
        std::cerr << "hard mean_accuracy: " << hard.mean_accuracy
                  << "  soft mean_accuracy: " << soft.mean_accuracy << "\n";
      } else {
        const stata::RunReport r = run_one(f.beta_mode);
        emit(f.output, f.format == "json" ? report_json(r).dump(2) + "\n"
                                          : report_csv(r, f.beta_mode));
        std::cerr << "mean_accuracy: " << r.mean_accuracy
                  << "  delta_vs_zeroshot: " << r.delta_vs_zeroshot << "\n";
      }
      return 0;
    }
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
