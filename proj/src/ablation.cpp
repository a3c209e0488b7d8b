#include "uet/ablation.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include "uet/config_io.hpp"

namespace fs = std::filesystem;

namespace uet {

AblationSuite::AblationSuite() {
  student_train.epochs = 20;
  student_train.width = 16;
  student_train.depth = 2;
  teacher_train.epochs = 30;
  teacher_train.width = 32;
  teacher_train.depth = 3;
}

namespace {

DistillConfig uet_default() {
  DistillConfig c;
  c.n = 5;
  c.schedule.strategy = RatioStrategy::arithmetic_b;
  c.source = KnowledgeSource::teacher;
  c.residual = true;
  return c;
}

DistillConfig et_baseline() {
  DistillConfig c;
  c.n = 0;
  c.source = KnowledgeSource::none;
  return c;
}

}  // namespace

std::vector<AblationCell> grid_n_sweep() {
  std::vector<AblationCell> cells;
  for (int n : {0, 1, 5, 10, 15}) {
    AblationCell c;
    c.grid = "n_sweep";
    c.label = "N=" + std::to_string(n);
    c.distill = n == 0 ? et_baseline() : uet_default();
    c.distill.n = n;
    if (n == 0) c.distill.source = KnowledgeSource::none;
    cells.push_back(c);
  }
  return cells;
}

std::vector<AblationCell> grid_strategies() {
  std::vector<AblationCell> cells;
  for (auto s : {RatioStrategy::fixed_a, RatioStrategy::arithmetic_b,
                 RatioStrategy::epoch_growing_c}) {
    AblationCell c;
    c.grid = "strategies";
    c.label = "strategy_" + to_string(s);
    c.distill = uet_default();
    c.distill.schedule.strategy = s;
    cells.push_back(c);
  }
  return cells;
}

std::vector<AblationCell> grid_sources_residual() {
  // the five source/residual rows: baseline, student+res, teacher+res,
  // teacher without residual, both+res
  struct Row {
    KnowledgeSource src;
    bool residual;
    const char* label;
  };
  const Row rows[] = {{KnowledgeSource::none, false, "baseline"},
                      {KnowledgeSource::student, true, "student_residual"},
                      {KnowledgeSource::teacher, true, "teacher_residual"},
                      {KnowledgeSource::teacher, false, "teacher_no_residual"},
                      {KnowledgeSource::both, true, "both_residual"}};
  std::vector<AblationCell> cells;
  for (const Row& r : rows) {
    AblationCell c;
    c.grid = "sources_residual";
    c.label = r.label;
    c.distill = r.src == KnowledgeSource::none ? et_baseline() : uet_default();
    c.distill.source = r.src;
    c.distill.residual = r.residual;
    cells.push_back(c);
  }
  return cells;
}

std::vector<AblationCell> grid_generalization() {
  std::vector<AblationCell> cells;
  for (auto e : {ExtractKind::identity, ExtractKind::pearson_norm, ExtractKind::attention})
    for (auto d : {DistanceKind::l2, DistanceKind::pearson, DistanceKind::ssim}) {
      AblationCell c;
      c.grid = "generalization";
      c.label = to_string(e) + "+" + to_string(d);
      c.distill = uet_default();
      c.distill.extraction = e;
      c.distill.distance = d;
      cells.push_back(c);
    }
  AblationCell logits;
  logits.grid = "generalization";
  logits.label = "logits";
  logits.distill = uet_default();
  logits.distill.logits_mode = true;
  cells.push_back(logits);
  return cells;
}

std::vector<AblationCell> grid_capacity() {
  std::vector<AblationCell> cells;
  AblationCell full;
  full.grid = "capacity";
  full.label = "student_full";
  full.distill = uet_default();
  cells.push_back(full);
  AblationCell half;
  half.grid = "capacity";
  half.label = "student_half";
  half.distill = uet_default();
  half.width = 8;
  half.depth = 1;
  cells.push_back(half);
  return cells;
}

std::vector<AblationCell> grid_scratch() {
  AblationCell c;
  c.grid = "scratch";
  c.label = "student_scratch";
  c.scratch = true;
  return {c};
}

AblationSuite default_suite() {
  AblationSuite suite;
  for (auto grid : {grid_n_sweep(), grid_strategies(), grid_sources_residual(),
                    grid_generalization(), grid_capacity(), grid_scratch()})
    suite.cells.insert(suite.cells.end(), grid.begin(), grid.end());
  return suite;
}

std::vector<AblationCell> expand_axes(const AblationAxes& axes) {
  std::vector<AblationCell> cells;
  for (int n : axes.n_values)
    for (auto strat : axes.strategies)
      for (auto src : axes.sources)
        for (bool res : axes.residuals)
          for (auto e : axes.extractions)
            for (auto d : axes.distances)
              for (auto [w, dep] : axes.student_dims) {
                AblationCell c;
                c.grid = "custom";
                c.distill.n = n;
                c.distill.schedule.strategy = strat;
                c.distill.source = n == 0 ? KnowledgeSource::none : src;
                c.distill.residual = res;
                c.distill.extraction = e;
                c.distill.distance = d;
                c.width = w;
                c.depth = dep;
                validate(c.distill);
                std::ostringstream label;
                label << "N=" << n << " " << to_string(strat) << " " << to_string(c.distill.source)
                      << (res ? " res" : " nores") << " " << to_string(e) << " " << to_string(d)
                      << " w" << w << "d" << dep;
                c.label = label.str();
                cells.push_back(c);
              }
  return cells;
}

AblationResults run_ablation(const AblationSuite& suite, const std::string& out_dir, int jobs,
                             bool deterministic, bool verbose) {
  if (suite.cells.empty()) throw ConfigError("run_ablation: empty grid");
  if (suite.seeds.empty()) throw ConfigError("run_ablation: no seeds");
  const auto t0 = std::chrono::steady_clock::now();
  fs::create_directories(out_dir);
  fs::create_directories(fs::path(out_dir) / "reports");

  const size_t n_tasks = suite.cells.size() * suite.seeds.size();
  std::cout << "ablation grid: " << suite.cells.size() << " cells x " << suite.seeds.size()
            << " seeds = " << n_tasks << " runs\n";

  // datasets and frozen teachers are shared per seed across all cells
  std::vector<Dataset> datasets(suite.seeds.size());
  std::vector<DetNet> teachers(suite.seeds.size());
  AblationResults res;
  res.teacher_digests.resize(suite.seeds.size());
  for (size_t si = 0; si < suite.seeds.size(); ++si) {
    DataConfig dc = suite.data;
    dc.seed = suite.seeds[si];
    datasets[si] = gen_split(dc);
    const fs::path ckpt = fs::path(out_dir) / ("teacher_seed" + std::to_string(suite.seeds[si]) + ".ckpt");
    if (fs::exists(ckpt)) {
      teachers[si] = load_detnet(ckpt.string());
    } else {
      TrainConfig tc = suite.teacher_train;
      tc.seed = suite.seeds[si];
      tc.deterministic = deterministic;
      if (verbose) std::cout << "training teacher for seed " << suite.seeds[si] << "...\n";
      TrainResult tr = train_teacher(tc, datasets[si]);
      teachers[si] = std::move(tr.net);
      save_detnet(ckpt.string(), teachers[si]);
    }
    teachers[si].set_requires_grad(false);
    res.teacher_digests[si] = teachers[si].digest();
  }

  res.rows.resize(n_tasks);
  res.reports.resize(n_tasks);

  std::atomic<size_t> next{0};
  std::mutex io_mutex;
  auto worker = [&] {
    for (;;) {
      const size_t task = next.fetch_add(1);
      if (task >= n_tasks) return;
      const size_t ci = task / suite.seeds.size();
      const size_t si = task % suite.seeds.size();
      const AblationCell& cell = suite.cells[ci];
      AblationRow row;
      row.grid = cell.grid;
      row.label = cell.label;
      row.seed = suite.seeds[si];
      row.cell = cell;
      try {
        TrainConfig tc = suite.student_train;
        tc.seed = suite.seeds[si];
        tc.width = cell.width;
        tc.depth = cell.depth;
        tc.deterministic = deterministic;
        TrainResult tr;
        if (cell.scratch) {
          tc.distill.reset();
          tr = train_teacher(tc, datasets[si], Role::student);
        } else {
          tc.distill = cell.distill;
          tr = distill_student(tc, teachers[si], datasets[si]);
          row.teacher_digest_before = tr.report.teacher_digest_before;
          row.teacher_digest_after = tr.report.teacher_digest_after;
        }
        row.status = "ok";
        row.final_eval_acc = tr.report.final_eval_acc;
        row.final_eval_acc_mean = tr.report.final_eval_acc_mean;
        row.final_task_loss = tr.report.final_task_loss;
        row.wall_time = tr.report.wall_time;
        res.reports[task] = std::move(tr.report);
      } catch (const std::exception& e) {
        row.status = "failed";
        row.error = e.what();
      }
      if (verbose) {
        std::lock_guard<std::mutex> lock(io_mutex);
        std::cout << "[" << (task + 1) << "/" << n_tasks << "] " << cell.grid << "/" << cell.label
                  << " seed=" << row.seed << " status=" << row.status
                  << " acc=" << row.final_eval_acc_mean << "\n";
      }
      res.rows[task] = std::move(row);
    }
  };
  if (jobs <= 1 || deterministic) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < jobs; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  res.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  // results.csv + per-run reports
  std::ofstream csv(fs::path(out_dir) / "results.csv");
  csv << results_csv(suite, res);
  nlohmann::json jrows = nlohmann::json::array();
  for (size_t task = 0; task < n_tasks; ++task) {
    const AblationRow& row = res.rows[task];
    if (row.status == "ok") {
      std::ostringstream name;
      name << "run_c" << (task / suite.seeds.size()) << "_s" << row.seed << ".json";
      std::ofstream rf(fs::path(out_dir) / "reports" / name.str());
      rf << res.reports[task].to_json().dump(2) << "\n";
    }
    jrows.push_back({{"grid", row.grid},
                     {"label", row.label},
                     {"seed", row.seed},
                     {"status", row.status},
                     {"error", row.error},
                     {"final_eval_acc_mean", row.final_eval_acc_mean}});
  }
  std::ofstream jf(fs::path(out_dir) / "summary.json");
  jf << nlohmann::json{{"rows", jrows},
                       {"teacher_digests", res.teacher_digests},
                       {"wall_time", deterministic ? 0.0 : res.wall_time}}
            .dump(2)
     << "\n";
  return res;
}

std::string results_csv(const AblationSuite& suite, const AblationResults& res) {
  std::ostringstream os;
  os.precision(10);
  os << "grid,label,seed,status,n,strategy,source,residual,extraction,distance,logits_mode,"
        "width,depth";
  const int scales = 3;
  for (int s = 0; s < scales; ++s) os << ",acc_scale" << s;
  os << ",acc_mean,acc_std,task_loss,teacher_digest_before,teacher_digest_after\n";

  auto cell_cols = [&os](const AblationCell& c) {
    if (c.scratch)
      os << ",,,,,,";
    else
      os << c.distill.n << "," << to_string(c.distill.schedule.strategy) << ","
         << to_string(c.distill.source) << "," << (c.distill.residual ? "on" : "off") << ","
         << to_string(c.distill.extraction) << "," << to_string(c.distill.distance);
    os << "," << (!c.scratch && c.distill.logits_mode ? "true" : "false") << "," << c.width << ","
       << c.depth;
  };

  for (const AblationRow& row : res.rows) {
    os << row.grid << "," << row.label << "," << row.seed << "," << row.status << ",";
    cell_cols(row.cell);
    for (int s = 0; s < scales; ++s)
      os << "," << (s < static_cast<int>(row.final_eval_acc.size()) ? row.final_eval_acc[s] : 0.0);
    os << "," << row.final_eval_acc_mean << "," << 0.0 << "," << row.final_task_loss << ","
       << row.teacher_digest_before << "," << row.teacher_digest_after << "\n";
  }

  // aggregate rows: mean +- std over seeds of the final mean accuracy
  const size_t n_seeds = suite.seeds.size();
  for (size_t ci = 0; ci < suite.cells.size(); ++ci) {
    std::vector<double> accs;
    for (size_t si = 0; si < n_seeds; ++si) {
      const AblationRow& row = res.rows[ci * n_seeds + si];
      if (row.status == "ok") accs.push_back(row.final_eval_acc_mean);
    }
    double mean = 0.0, stddev = 0.0;
    if (!accs.empty()) {
      for (double a : accs) mean += a;
      mean /= static_cast<double>(accs.size());
      if (accs.size() > 1) {
        for (double a : accs) stddev += (a - mean) * (a - mean);
        stddev = std::sqrt(stddev / static_cast<double>(accs.size() - 1));
      }
    }
    const AblationCell& cell = suite.cells[ci];
    os << cell.grid << "," << cell.label << ",aggregate," << (accs.empty() ? "failed" : "ok")
       << ",";
    cell_cols(cell);
    for (int s = 0; s < scales; ++s) os << ",";
    os << "," << mean << "," << stddev << ",,,\n";
  }
  return os.str();
}

}  // namespace uet
