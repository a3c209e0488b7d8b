#include "uet/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "uet/config_io.hpp"

namespace uet {

void validate(const TrainConfig& cfg) {
  if (cfg.epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (cfg.batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (!(cfg.learning_rate > 0.0)) throw ConfigError("train: learning rate must be positive");
  if (cfg.distill) validate(*cfg.distill);
}

namespace {

class Optimizer {
 public:
  Optimizer(OptimizerKind kind, std::vector<Tensor*> params)
      : kind_(kind), params_(std::move(params)) {
    state1_.resize(params_.size());
    state2_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
      state1_[i].assign(params_[i]->data().size(), 0.0);
      if (kind_ == OptimizerKind::adam) state2_[i].assign(params_[i]->data().size(), 0.0);
    }
  }

  void step(double lr) {
    ++t_;
    for (size_t i = 0; i < params_.size(); ++i) {
      Tensor& p = *params_[i];
      if (!p.has_grad()) continue;
      auto w = p.mutable_data();
      auto g = p.grad();
      if (kind_ == OptimizerKind::sgd_momentum) {
        constexpr double kMomentum = 0.9;
        auto& v = state1_[i];
        for (size_t j = 0; j < w.size(); ++j) {
          v[j] = kMomentum * v[j] + g[j];
          w[j] -= lr * v[j];
        }
      } else {
        constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        auto& m = state1_[i];
        auto& v = state2_[i];
        const double bc1 = 1.0 - std::pow(b1, t_);
        const double bc2 = 1.0 - std::pow(b2, t_);
        for (size_t j = 0; j < w.size(); ++j) {
          m[j] = b1 * m[j] + (1.0 - b1) * g[j];
          v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
          w[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps);
        }
      }
    }
  }

 private:
  OptimizerKind kind_;
  std::vector<Tensor*> params_;
  std::vector<std::vector<double>> state1_, state2_;
  int t_ = 0;
};

double cosine_lr(double base, int epoch, int epochs) {
  return base * 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(epoch) / epochs));
}

Tensor task_loss(const DetNet& net, const FeaturePyramid& pyramid, const Sample& sample) {
  auto logits = net.forward_head(pyramid);
  Tensor loss = cross_entropy_loss(logits[0], sample.labels[0]);
  for (size_t s = 1; s < logits.size(); ++s)
    loss = add(loss, cross_entropy_loss(logits[s], sample.labels[s]));
  return scale(loss, 1.0 / static_cast<double>(logits.size()));
}

void shuffle_indices(std::vector<int>& idx, Rng& rng) {
  for (size_t i = idx.size(); i > 1; --i)
    std::swap(idx[i - 1], idx[rng.next_below(i)]);
}

}  // namespace

EvalResult evaluate(const DetNet& net, const std::vector<Sample>& eval_set) {
  // frozen copy so evaluation never records a graph
  DetNet frozen = net;
  frozen.set_requires_grad(false);

  const int scales = net.spec.scales;
  std::vector<int64_t> correct(scales, 0), total(scales, 0);
  for (const Sample& sample : eval_set) {
    auto logits = frozen.forward_head(frozen.forward_pyramid(sample.image));
    for (int s = 0; s < scales; ++s) {
      const int C = logits[s].shape()[0];
      const size_t npos = logits[s].data().size() / C;
      const double* l = logits[s].data().data();
      for (size_t pos = 0; pos < npos; ++pos) {
        int best = 0;
        for (int c = 1; c < C; ++c)
          if (l[c * npos + pos] > l[best * npos + pos]) best = c;  // ties -> lowest class
        correct[s] += best == sample.labels[s][pos];
        ++total[s];
      }
    }
  }
  EvalResult r;
  for (int s = 0; s < scales; ++s)
    r.per_scale.push_back(static_cast<double>(correct[s]) / static_cast<double>(total[s]));
  r.mean = std::accumulate(r.per_scale.begin(), r.per_scale.end(), 0.0) / scales;
  return r;
}

std::string run_label(const DistillConfig& cfg) {
  if (cfg.source == KnowledgeSource::none || cfg.n == 0) return "ET baseline";
  if (!cfg.logits_mode && cfg.source == KnowledgeSource::teacher && cfg.n == 5 &&
      cfg.schedule.strategy == RatioStrategy::arithmetic_b && cfg.residual)
    return "UET default";
  std::ostringstream os;
  os << "UET N=" << cfg.n << " strategy=" << to_string(cfg.schedule.strategy)
     << " source=" << to_string(cfg.source) << " residual=" << (cfg.residual ? "on" : "off")
     << " extraction=" << to_string(cfg.extraction) << " distance=" << to_string(cfg.distance);
  if (cfg.logits_mode) os << " logits";
  return os.str();
}

namespace {

struct LoopHooks {
  const DetNet* teacher = nullptr;
  Adapter* adapter = nullptr;
  std::vector<double>* step_kd_losses = nullptr;
};

TrainResult run_training(const TrainConfig& cfg, const Dataset& data, DetNet net,
                         const LoopHooks& hooks) {
  const auto t0 = std::chrono::steady_clock::now();
  const bool distilling = cfg.distill.has_value() && hooks.teacher != nullptr;
  const DistillConfig* dc = cfg.distill ? &*cfg.distill : nullptr;

  std::vector<Tensor*> params = net.params();
  if (distilling)
    for (Tensor* p : hooks.adapter->params()) params.push_back(p);
  Optimizer opt(cfg.optimizer, params);

  Rng shuffle_rng = Rng(cfg.seed).fork(1);
  Rng mc_rng = Rng(cfg.seed).fork(2);

  // the teacher is frozen and deterministic: one forward per train image
  std::vector<FeaturePyramid> teacher_cache;
  bool cache_teacher = false;
  if (distilling && !dc->logits_mode) {
    const int64_t pyr_elems = [&] {
      int64_t n = 0;
      const auto& spec = hooks.teacher->spec;
      for (int s = 0; s < spec.scales; ++s)
        n += static_cast<int64_t>(hooks.teacher->pyramid_channels()) * (spec.image_h >> s) *
             (spec.image_w >> s);
      return n;
    }();
    cache_teacher = pyr_elems * static_cast<int64_t>(data.train.size()) * 8 < 1'600'000'000;
    if (cache_teacher) teacher_cache.resize(data.train.size());
  }
  auto teacher_pyramid = [&](int idx) -> const FeaturePyramid& {
    if (cache_teacher) {
      if (teacher_cache[idx].empty())
        teacher_cache[idx] = hooks.teacher->forward_pyramid(data.train[idx].image);
      return teacher_cache[idx];
    }
    static thread_local FeaturePyramid tmp;
    tmp = hooks.teacher->forward_pyramid(data.train[idx].image);
    return tmp;
  };

  TrainResult result;
  result.report.config_echo = to_json(cfg);
  result.report.label = distilling ? run_label(*dc)
                                   : (net.role == Role::teacher ? "teacher" : "scratch student");
  if (distilling) result.report.teacher_digest_before = hooks.teacher->digest();

  std::vector<int> indices(data.train.size());
  std::iota(indices.begin(), indices.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cosine_lr(cfg.learning_rate, epoch, cfg.epochs);
    shuffle_indices(indices, shuffle_rng);

    double task_sum = 0.0, kd_sum = 0.0;
    int64_t n_seen = 0;
    std::vector<double> epoch_ratios;

    for (size_t start = 0; start < indices.size(); start += cfg.batch_size) {
      const size_t end = std::min(indices.size(), start + cfg.batch_size);
      Tensor batch_loss;
      double batch_kd = 0.0;
      for (size_t i = start; i < end; ++i) {
        const Sample& sample = data.train[indices[i]];
        Tensor sample_loss;
        if (distilling && dc->logits_mode) {
          FeaturePyramid pyr = net.forward_pyramid(sample.image);
          Tensor task = task_loss(net, pyr, sample);
          Tensor kd = kd_loss_logits(*hooks.teacher, net, sample.image, *dc, mc_rng, epoch,
                                     epoch_ratios.empty() ? &epoch_ratios : nullptr);
          task_sum += task.item();
          kd_sum += kd.item();
          batch_kd += kd.item();
          sample_loss = add(task, kd);
        } else if (distilling) {
          FeaturePyramid pyr = net.forward_pyramid(sample.image);
          Tensor task = task_loss(net, pyr, sample);
          const FeaturePyramid& t_pyr = teacher_pyramid(indices[i]);
          Tensor kd = kd_loss_uet(t_pyr, pyr, *hooks.adapter, *dc, mc_rng, epoch,
                                  epoch_ratios.empty() ? &epoch_ratios : nullptr);
          task_sum += task.item();
          kd_sum += kd.item();
          batch_kd += kd.item();
          sample_loss = add(task, kd);
        } else {
          FeaturePyramid pyr = net.forward_pyramid(sample.image);
          sample_loss = task_loss(net, pyr, sample);
          task_sum += sample_loss.item();
        }
        batch_loss = batch_loss.defined() ? add(batch_loss, sample_loss) : sample_loss;
        ++n_seen;
      }
      batch_loss = scale(batch_loss, 1.0 / static_cast<double>(end - start));
      if (!std::isfinite(batch_loss.item()))
        throw NumericError("training diverged: non-finite loss at epoch " +
                           std::to_string(epoch) + ", step " + std::to_string(start / cfg.batch_size));
      if (hooks.step_kd_losses)
        hooks.step_kd_losses->push_back(batch_kd / static_cast<double>(end - start));
      backward(batch_loss);
      opt.step(lr);
      net.zero_grads();
      if (distilling) hooks.adapter->zero_grads();
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.task_loss = task_sum / static_cast<double>(n_seen);
    rec.kd_loss = distilling ? kd_sum / static_cast<double>(n_seen) : 0.0;
    EvalResult ev = evaluate(net, data.eval);
    rec.eval_acc = ev.per_scale;
    rec.eval_acc_mean = ev.mean;
    result.report.records.push_back(std::move(rec));
    result.report.ratios_used.push_back(std::move(epoch_ratios));
  }

  const auto& last = result.report.records.back();
  result.report.final_eval_acc = last.eval_acc;
  result.report.final_eval_acc_mean = last.eval_acc_mean;
  result.report.final_task_loss = last.task_loss;
  if (distilling) result.report.teacher_digest_after = hooks.teacher->digest();
  result.report.wall_time =
      cfg.deterministic ? 0.0
                        : std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  result.net = std::move(net);
  return result;
}

}  // namespace

TrainResult train_teacher(const TrainConfig& cfg, const Dataset& data, Role role) {
  validate(cfg);
  if (cfg.distill) throw ConfigError("train_teacher: distill config must be absent");
  Rng rng = Rng(cfg.seed).fork(0);
  PyramidSpec spec;
  DetNet net = build_detnet(spec, cfg.width, cfg.depth, role, rng);
  net.set_requires_grad(true);
  TrainResult r = run_training(cfg, data, std::move(net), {});
  r.net.set_requires_grad(false);
  r.report.teacher_digest_before = r.report.teacher_digest_after = r.net.digest();
  return r;
}

TrainResult distill_student(const TrainConfig& cfg, const DetNet& teacher, const Dataset& data,
                            std::vector<double>* step_kd_losses) {
  validate(cfg);
  if (!cfg.distill) throw ConfigError("distill_student: distill config required");
  if (data.train.empty() ||
      teacher.spec.image_h != data.train[0].image.shape()[1] ||
      teacher.spec.image_w != data.train[0].image.shape()[2] ||
      static_cast<size_t>(teacher.spec.scales) != data.train[0].labels.size())
    throw ConfigError("distill_student: teacher pyramid spec incompatible with dataset");
  for (const Tensor* p : teacher.params())
    if (p->requires_grad()) throw ConfigError("distill_student: teacher must be frozen");

  Rng rng = Rng(cfg.seed).fork(0);
  DetNet student = build_detnet(teacher.spec, cfg.width, cfg.depth, Role::student, rng);
  // spec shared with the teacher except channel count follows student width
  student.spec.channels_per_scale = 0;
  Adapter adapter = make_adapter(teacher.spec.scales, student.pyramid_channels(),
                                 teacher.pyramid_channels(), rng);
  LoopHooks hooks;
  hooks.teacher = &teacher;
  hooks.adapter = &adapter;
  hooks.step_kd_losses = step_kd_losses;
  TrainResult r = run_training(cfg, data, std::move(student), hooks);
  r.adapter = std::move(adapter);
  return r;
}

// ---------------------------------------------------------------------------
// reports
// ---------------------------------------------------------------------------

nlohmann::json TrainReport::to_json() const {
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& r : records)
    recs.push_back({{"epoch", r.epoch},
                    {"task_loss", r.task_loss},
                    {"kd_loss", r.kd_loss},
                    {"eval_acc", r.eval_acc},
                    {"eval_acc_mean", r.eval_acc_mean}});
  return nlohmann::json{{"label", label},
                        {"config", config_echo},
                        {"records", recs},
                        {"ratios_used", ratios_used},
                        {"teacher_digest_before", teacher_digest_before},
                        {"teacher_digest_after", teacher_digest_after},
                        {"final_eval_acc", final_eval_acc},
                        {"final_eval_acc_mean", final_eval_acc_mean},
                        {"final_task_loss", final_task_loss},
                        {"wall_time", wall_time}};
}

TrainReport TrainReport::from_json(const nlohmann::json& j) {
  TrainReport r;
  r.label = j.at("label");
  r.config_echo = j.at("config");
  for (const auto& jr : j.at("records")) {
    EpochRecord rec;
    rec.epoch = jr.at("epoch");
    rec.task_loss = jr.at("task_loss");
    rec.kd_loss = jr.at("kd_loss");
    rec.eval_acc = jr.at("eval_acc").get<std::vector<double>>();
    rec.eval_acc_mean = jr.at("eval_acc_mean");
    r.records.push_back(std::move(rec));
  }
  r.ratios_used = j.at("ratios_used").get<std::vector<std::vector<double>>>();
  r.teacher_digest_before = j.at("teacher_digest_before");
  r.teacher_digest_after = j.at("teacher_digest_after");
  r.final_eval_acc = j.at("final_eval_acc").get<std::vector<double>>();
  r.final_eval_acc_mean = j.at("final_eval_acc_mean");
  r.final_task_loss = j.at("final_task_loss");
  r.wall_time = j.at("wall_time");
  return r;
}

std::string emit_convergence(const std::vector<TrainReport>& reports) {
  if (reports.empty()) throw ConfigError("emit_convergence: no reports");
  const size_t epochs = reports[0].records.size();
  for (const auto& r : reports)
    if (r.records.size() != epochs)
      throw ConfigError("emit_convergence: reports have mismatched epoch counts");
  std::ostringstream os;
  os << "epoch";
  for (const auto& r : reports) os << "," << r.label;
  os << "\n";
  os.precision(10);
  for (size_t e = 0; e < epochs; ++e) {
    os << e;
    for (const auto& r : reports) os << "," << r.records[e].eval_acc_mean;
    os << "\n";
  }
  return os.str();
}

}  // namespace uet
