#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "uet/config_io.hpp"
#include "uet/train.hpp"

using namespace uet;

namespace {

DataConfig small_data(uint64_t seed) {
  DataConfig d;
  d.n_samples = 120;
  d.seed = seed;
  return d;
}

TrainConfig small_teacher() {
  TrainConfig t;
  t.epochs = 8;
  t.width = 8;
  t.depth = 1;
  t.learning_rate = 0.05;
  t.seed = 1;
  return t;
}

// accuracy of the all-background predictor under evaluate()'s equal-weight
// scale averaging; differs from background_fraction, which only reads scale 0
double all_background_accuracy(const std::vector<Sample>& samples) {
  const size_t scales = samples.front().labels.size();
  double mean = 0.0;
  for (size_t s = 0; s < scales; ++s) {
    int64_t bg = 0, total = 0;
    for (const Sample& sm : samples) {
      for (int c : sm.labels[s]) bg += c == 0;
      total += static_cast<int64_t>(sm.labels[s].size());
    }
    mean += static_cast<double>(bg) / static_cast<double>(total);
  }
  return mean / static_cast<double>(scales);
}

}  // namespace

TEST_CASE("teacher training beats the all-background baseline") {
  Dataset ds = gen_split(small_data(1));
  TrainResult tr = train_teacher(small_teacher(), ds);

  // predicting background everywhere scores exactly the background frequency
  const double baseline = background_fraction(ds.eval);
  CHECK(tr.report.final_eval_acc_mean > baseline);
  CHECK(tr.report.records.size() == 8);
  CHECK(tr.report.teacher_digest_before == tr.report.teacher_digest_after);
}

TEST_CASE("fixed seed reproduces the final digest") {
  Dataset ds = gen_split(small_data(2));
  TrainConfig cfg = small_teacher();
  cfg.deterministic = true;
  TrainResult a = train_teacher(cfg, ds);
  TrainResult b = train_teacher(cfg, ds);
  CHECK(a.net.digest() == b.net.digest());
  CHECK(a.report.to_json() == b.report.to_json());
}

TEST_CASE("task loss mostly decreases") {
  Dataset ds = gen_split(small_data(3));
  TrainConfig cfg = small_teacher();
  cfg.epochs = 10;
  TrainResult tr = train_teacher(cfg, ds);
  int ok = 0, windows = 0;
  for (size_t i = 5; i < tr.report.records.size(); ++i) {
    ++windows;
    ok += tr.report.records[i].task_loss <= tr.report.records[i - 5].task_loss;
  }
  CHECK(ok >= static_cast<int>(std::ceil(0.8 * windows)));
}

TEST_CASE("zero-weight net predicts all background") {
  Dataset ds = gen_split(small_data(4));
  PyramidSpec spec;
  Rng rng(5);
  DetNet net = build_detnet(spec, 8, 1, Role::student, rng);
  for (Tensor* p : net.params())
    for (double& v : p->mutable_data()) v = 0.0;
  EvalResult ev = evaluate(net, ds.eval);
  CHECK(ev.mean == doctest::Approx(all_background_accuracy(ds.eval)).epsilon(1e-12));

  EvalResult again = evaluate(net, ds.eval);
  CHECK(again.mean == ev.mean);  // idempotent
}

TEST_CASE("distillation loop contracts") {
  Dataset ds = gen_split(small_data(6));
  TrainResult teacher = train_teacher(small_teacher(), ds);
  teacher.net.set_requires_grad(false);

  TrainConfig scfg;
  scfg.epochs = 3;
  scfg.width = 4;
  scfg.depth = 1;
  scfg.seed = 6;
  scfg.distill = DistillConfig{};  // UET default

  const std::string before = teacher.net.digest();
  TrainResult student = distill_student(scfg, teacher.net, ds);
  CHECK(teacher.net.digest() == before);
  CHECK(student.report.teacher_digest_before == before);
  CHECK(student.report.teacher_digest_after == before);
  CHECK(student.report.label == "UET default");
  CHECK(student.report.records.size() == 3);
  for (const auto& rec : student.report.records) CHECK(rec.kd_loss >= 0.0);
  REQUIRE(student.report.ratios_used.size() == 3);
  CHECK(student.report.ratios_used[0] == std::vector<double>{0.05, 0.10, 0.15, 0.20, 0.25});

  // ET baseline labeling
  TrainConfig ecfg = scfg;
  ecfg.distill->n = 0;
  ecfg.distill->source = KnowledgeSource::none;
  ecfg.epochs = 1;
  TrainResult et = distill_student(ecfg, teacher.net, ds);
  CHECK(et.report.label == "ET baseline");

  // incompatible teacher is rejected before training
  PyramidSpec wrong;
  wrong.image_h = wrong.image_w = 16;
  Rng rng(7);
  DetNet small = build_detnet(wrong, 8, 1, Role::teacher, rng);
  small.set_requires_grad(false);
  CHECK_THROWS_AS(distill_student(scfg, small, ds), ConfigError);
}

TEST_CASE("deterministic distill reports are byte-identical") {
  Dataset ds = gen_split(small_data(8));
  TrainConfig tcfg = small_teacher();
  tcfg.deterministic = true;
  TrainResult teacher = train_teacher(tcfg, ds);
  teacher.net.set_requires_grad(false);

  TrainConfig scfg;
  scfg.epochs = 2;
  scfg.width = 4;
  scfg.depth = 1;
  scfg.seed = 9;
  scfg.deterministic = true;
  scfg.distill = DistillConfig{};

  const std::string a = distill_student(scfg, teacher.net, ds).report.to_json().dump();
  const std::string b = distill_student(scfg, teacher.net, ds).report.to_json().dump();
  CHECK(a == b);
}

TEST_CASE("convergence table") {
  Dataset ds = gen_split(small_data(10));
  TrainConfig cfg = small_teacher();
  cfg.epochs = 4;
  TrainResult a = train_teacher(cfg, ds);
  TrainResult b = train_teacher(cfg, ds);
  a.report.label = "run A";
  b.report.label = "run B";

  const std::string csv = emit_convergence({a.report, b.report});
  int rows = 0;
  for (char c : csv) rows += c == '\n';
  CHECK(rows == 5);  // header + one row per epoch
  CHECK(csv.find("run A") != std::string::npos);
  CHECK(csv.find("run B") != std::string::npos);

  TrainResult shorter = train_teacher([&] { TrainConfig c2 = cfg; c2.epochs = 2; return c2; }(), ds);
  CHECK_THROWS_AS(emit_convergence({a.report, shorter.report}), ConfigError);
}

TEST_CASE("strict config parsing") {
  auto j = nlohmann::json::parse(R"({"epochs": 3, "width": 8, "depth": 1})");
  TrainConfig cfg = train_config_from_json(j);
  CHECK(cfg.epochs == 3);

  auto bad = nlohmann::json::parse(R"({"epochs": 3, "widht": 8})");
  CHECK_THROWS_AS(train_config_from_json(bad), ConfigError);

  auto bad_nested = nlohmann::json::parse(R"({"distill": {"n": 5, "sauce": "teacher"}})");
  CHECK_THROWS_AS(train_config_from_json(bad_nested), ConfigError);

  auto bad_distill = nlohmann::json::parse(R"({"distill": {"n": 0, "source": "teacher"}})");
  CHECK_THROWS_AS(train_config_from_json(bad_distill), ConfigError);

  // round trip preserves every field
  TrainConfig full;
  full.epochs = 7;
  full.optimizer = OptimizerKind::adam;
  full.distill = DistillConfig{};
  full.distill->extraction = ExtractKind::attention;
  full.distill->distance = DistanceKind::ssim;
  TrainConfig back = train_config_from_json(to_json(full));
  CHECK(back.epochs == 7);
  CHECK(back.optimizer == OptimizerKind::adam);
  REQUIRE(back.distill.has_value());
  CHECK(back.distill->extraction == ExtractKind::attention);
  CHECK(back.distill->distance == DistanceKind::ssim);
}
