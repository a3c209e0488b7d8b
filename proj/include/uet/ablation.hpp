#pragma once

#include <string>
#include <vector>

#include "uet/train.hpp"

namespace uet {

struct AblationCell {
  std::string grid;   // which study this cell belongs to
  std::string label;  // row label inside the study
  bool scratch = false;  // train the student without any distillation
  DistillConfig distill;
  int width = 16;
  int depth = 2;
};

struct AblationSuite {
  std::vector<AblationCell> cells;
  std::vector<uint64_t> seeds{0, 1, 2, 3, 4};
  TrainConfig student_train;  // epochs/optimizer defaults for every cell
  TrainConfig teacher_train;
  DataConfig data;

  AblationSuite();
};

// shipped grids
std::vector<AblationCell> grid_n_sweep();          // N in {0,1,5,10,15}
std::vector<AblationCell> grid_strategies();       // ratio strategies a/b/c
std::vector<AblationCell> grid_sources_residual(); // five source/residual rows
std::vector<AblationCell> grid_generalization();   // extraction x distance + logits
std::vector<AblationCell> grid_capacity();         // full vs lightweight student
std::vector<AblationCell> grid_scratch();          // no-distillation baseline
AblationSuite default_suite();

// cartesian expansion from axis lists (custom grids from config files)
struct AblationAxes {
  std::vector<int> n_values{5};
  std::vector<RatioStrategy> strategies{RatioStrategy::arithmetic_b};
  std::vector<KnowledgeSource> sources{KnowledgeSource::teacher};
  std::vector<bool> residuals{true};
  std::vector<ExtractKind> extractions{ExtractKind::identity};
  std::vector<DistanceKind> distances{DistanceKind::l2};
  std::vector<std::pair<int, int>> student_dims{{16, 2}};
};
std::vector<AblationCell> expand_axes(const AblationAxes& axes);

struct AblationRow {
  std::string grid, label;
  uint64_t seed = 0;
  std::string status;  // "ok" or "failed"
  std::string error;
  AblationCell cell;
  std::vector<double> final_eval_acc;
  double final_eval_acc_mean = 0.0;
  double final_task_loss = 0.0;
  std::string teacher_digest_before, teacher_digest_after;
  double wall_time = 0.0;
};

struct AblationResults {
  std::vector<AblationRow> rows;            // one per (cell, seed)
  std::vector<TrainReport> reports;         // aligned with rows
  std::vector<std::string> teacher_digests; // per seed
  double wall_time = 0.0;
};

// runs every (cell, seed); teachers are trained once per seed and cached in
// out_dir; emits results.csv (per-run + aggregate rows) and reports/*.json
AblationResults run_ablation(const AblationSuite& suite, const std::string& out_dir,
                             int jobs = 1, bool deterministic = false, bool verbose = false);

std::string results_csv(const AblationSuite& suite, const AblationResults& res);

}  // namespace uet
