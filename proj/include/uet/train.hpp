#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "uet/data.hpp"
#include "uet/distill.hpp"
#include "uet/model.hpp"

namespace uet {

enum class OptimizerKind { sgd_momentum, adam };

struct TrainConfig {
  int epochs = 30;
  int batch_size = 16;
  double learning_rate = 0.05;
  OptimizerKind optimizer = OptimizerKind::sgd_momentum;
  uint64_t seed = 0;
  std::optional<DistillConfig> distill;  // absent for teacher / scratch training
  int width = 32;
  int depth = 3;
  bool deterministic = false;
};

void validate(const TrainConfig& cfg);

struct EpochRecord {
  int epoch = 0;
  double task_loss = 0.0;
  double kd_loss = 0.0;
  std::vector<double> eval_acc;  // per scale
  double eval_acc_mean = 0.0;
};

struct TrainReport {
  std::string label;
  nlohmann::json config_echo;
  std::vector<EpochRecord> records;
  std::vector<std::vector<double>> ratios_used;  // per epoch
  std::string teacher_digest_before;
  std::string teacher_digest_after;
  std::vector<double> final_eval_acc;
  double final_eval_acc_mean = 0.0;
  double final_task_loss = 0.0;
  double wall_time = 0.0;  // seconds; forced to 0 in deterministic mode

  nlohmann::json to_json() const;
  static TrainReport from_json(const nlohmann::json& j);
};

struct EvalResult {
  std::vector<double> per_scale;
  double mean = 0.0;
};

EvalResult evaluate(const DetNet& net, const std::vector<Sample>& eval_set);

struct TrainResult {
  DetNet net;
  Adapter adapter;  // empty unless distilled
  TrainReport report;
};

// task-loss-only training; used for the teacher and for from-scratch students
TrainResult train_teacher(const TrainConfig& cfg, const Dataset& data,
                          Role role = Role::teacher);

// distillation: loss = task + lambda_kd * kd; only student + adapter step.
// step_kd_losses, when given, receives the kd loss of every optimizer step.
TrainResult distill_student(const TrainConfig& cfg, const DetNet& teacher, const Dataset& data,
                            std::vector<double>* step_kd_losses = nullptr);

// aligned per-epoch eval-accuracy curves, one labeled column per report
std::string emit_convergence(const std::vector<TrainReport>& reports);

std::string run_label(const DistillConfig& cfg);

}  // namespace uet
