#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "uet/ablation.hpp"

using namespace uet;
namespace fs = std::filesystem;

namespace {

AblationSuite tiny_suite(std::vector<AblationCell> cells, std::vector<uint64_t> seeds) {
  AblationSuite s;
  s.cells = std::move(cells);
  s.seeds = std::move(seeds);
  s.data.n_samples = 60;
  s.teacher_train.epochs = 2;
  s.teacher_train.width = 8;
  s.teacher_train.depth = 1;
  s.student_train.epochs = 1;
  s.student_train.width = 4;
  s.student_train.depth = 1;
  return s;
}

AblationCell uet_cell(int n = 1) {
  AblationCell c;
  c.grid = "t";
  c.label = "uet";
  c.width = 4;
  c.depth = 1;
  c.distill.n = n;
  return c;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const char* name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("shipped grids match the published cell sets") {
  auto n_cells = grid_n_sweep();
  REQUIRE(n_cells.size() == 5);
  std::vector<int> ns;
  for (const auto& c : n_cells) ns.push_back(c.distill.n);
  CHECK(ns == std::vector<int>{0, 1, 5, 10, 15});
  CHECK(n_cells[0].distill.source == KnowledgeSource::none);

  auto strat = grid_strategies();
  REQUIRE(strat.size() == 3);
  CHECK(strat[0].distill.schedule.strategy == RatioStrategy::fixed_a);
  CHECK(strat[1].distill.schedule.strategy == RatioStrategy::arithmetic_b);
  CHECK(strat[2].distill.schedule.strategy == RatioStrategy::epoch_growing_c);

  auto src = grid_sources_residual();
  REQUIRE(src.size() == 5);
  using P = std::pair<KnowledgeSource, bool>;
  std::vector<P> rows;
  for (const auto& c : src) rows.emplace_back(c.distill.source, c.distill.residual);
  CHECK(rows == std::vector<P>{{KnowledgeSource::none, false},
                               {KnowledgeSource::student, true},
                               {KnowledgeSource::teacher, true},
                               {KnowledgeSource::teacher, false},
                               {KnowledgeSource::both, true}});

  auto gen = grid_generalization();
  CHECK(gen.size() == 10);  // 3 extractions x 3 distances + logits
  CHECK(gen.back().distill.logits_mode);

  CHECK(grid_capacity().size() == 2);
  CHECK(grid_capacity()[1].width == 8);
  CHECK(grid_scratch().size() == 1);
  CHECK(grid_scratch()[0].scratch);

  CHECK(default_suite().cells.size() == 26);
  CHECK(default_suite().seeds == std::vector<uint64_t>{0, 1, 2, 3, 4});
}

TEST_CASE("axis expansion is cartesian") {
  AblationAxes axes;
  axes.n_values = {1, 5};
  axes.residuals = {true, false};
  axes.distances = {DistanceKind::l2, DistanceKind::pearson, DistanceKind::ssim};
  auto cells = expand_axes(axes);
  CHECK(cells.size() == 12);
  std::set<std::string> labels;
  for (const auto& c : cells) labels.insert(c.label);
  CHECK(labels.size() == 12);
}

TEST_CASE("run_ablation emits one row per cell and seed") {
  TempDir dir("uet_abl_test");
  AblationSuite suite = tiny_suite({uet_cell()}, {0, 1});
  AblationCell scratch;
  scratch.grid = "t";
  scratch.label = "scratch";
  scratch.scratch = true;
  scratch.width = 4;
  scratch.depth = 1;
  suite.cells.push_back(scratch);

  AblationResults res = run_ablation(suite, dir.path.string());
  REQUIRE(res.rows.size() == 4);
  for (const AblationRow& r : res.rows) CHECK(r.status == "ok");

  // teacher frozen across every run of a seed
  CHECK(res.rows[0].teacher_digest_before == res.teacher_digests[0]);
  CHECK(res.rows[0].teacher_digest_after == res.teacher_digests[0]);
  CHECK(res.rows[1].teacher_digest_after == res.teacher_digests[1]);

  CHECK(fs::exists(dir.path / "results.csv"));
  CHECK(fs::exists(dir.path / "teacher_seed0.ckpt"));
  std::ifstream csv(dir.path / "results.csv");
  std::string line;
  int rows = 0;
  std::getline(csv, line);  // header
  CHECK(line.rfind("grid,label,seed,status", 0) == 0);
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == 4 + 2);  // per-run rows plus one aggregate per cell
}

TEST_CASE("aggregate std is zero for a single seed") {
  TempDir dir("uet_abl_one_seed");
  AblationSuite suite = tiny_suite({uet_cell()}, {3});
  AblationResults res = run_ablation(suite, dir.path.string());
  const std::string csv = results_csv(suite, res);
  const auto pos = csv.find("aggregate");
  REQUIRE(pos != std::string::npos);
  // aggregate row: ...,acc_mean,acc_std,... with std printed as 0
  std::istringstream row(csv.substr(pos));
  std::string cell;
  std::vector<std::string> cols;
  while (std::getline(row, cell, ',')) cols.push_back(cell);
  bool found_zero_std = false;
  for (size_t i = 1; i + 1 < cols.size(); ++i)
    if (cols[i] == "0" && !cols[i - 1].empty() && cols[i - 1] != "0") found_zero_std = true;
  CHECK(found_zero_std);
}

TEST_CASE("a failing cell is recorded and the grid continues") {
  TempDir dir("uet_abl_fail");
  AblationCell bad = uet_cell();
  bad.label = "bad";
  bad.width = 2;  // below the minimum net width
  AblationSuite suite = tiny_suite({bad, uet_cell()}, {0});
  AblationResults res = run_ablation(suite, dir.path.string());
  REQUIRE(res.rows.size() == 2);
  CHECK(res.rows[0].status == "failed");
  CHECK_FALSE(res.rows[0].error.empty());
  CHECK(res.rows[1].status == "ok");
}

TEST_CASE("bad suites are rejected") {
  AblationSuite empty;
  CHECK_THROWS_AS(run_ablation(empty, "/tmp/uet_never"), ConfigError);
  AblationSuite no_seeds = tiny_suite({uet_cell()}, {});
  CHECK_THROWS_AS(run_ablation(no_seeds, "/tmp/uet_never"), ConfigError);
}
