#include "uet/config_io.hpp"

#include <fstream>
#include <set>

#include "uet/train.hpp"

namespace uet {

namespace {

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known,
                    const char* what) {
  if (!j.is_object()) throw ConfigError(std::string(what) + ": expected a JSON object");
  for (const auto& [key, _] : j.items())
    if (!known.count(key))
      throw ConfigError(std::string(what) + ": unknown field \"" + key + "\"");
}

template <typename T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad value for \"") + key + "\": " + e.what());
  }
}

}  // namespace

std::string to_string(RatioStrategy s) {
  switch (s) {
    case RatioStrategy::fixed_a: return "a";
    case RatioStrategy::arithmetic_b: return "b";
    case RatioStrategy::epoch_growing_c: return "c";
  }
  return "?";
}

std::string to_string(ExtractKind k) {
  switch (k) {
    case ExtractKind::identity: return "identity";
    case ExtractKind::pearson_norm: return "pearson-norm";
    case ExtractKind::attention: return "attention";
  }
  return "?";
}

std::string to_string(DistanceKind k) {
  switch (k) {
    case DistanceKind::l2: return "l2";
    case DistanceKind::pearson: return "pearson";
    case DistanceKind::ssim: return "ssim";
  }
  return "?";
}

std::string to_string(KnowledgeSource s) {
  switch (s) {
    case KnowledgeSource::none: return "none";
    case KnowledgeSource::teacher: return "teacher";
    case KnowledgeSource::student: return "student";
    case KnowledgeSource::both: return "both";
  }
  return "?";
}

std::string to_string(OptimizerKind k) {
  return k == OptimizerKind::sgd_momentum ? "sgd-momentum" : "adam";
}

RatioStrategy ratio_strategy_from(const std::string& s) {
  if (s == "a") return RatioStrategy::fixed_a;
  if (s == "b") return RatioStrategy::arithmetic_b;
  if (s == "c") return RatioStrategy::epoch_growing_c;
  throw ConfigError("unknown ratio strategy \"" + s + "\" (expected a, b, or c)");
}

ExtractKind extract_kind_from(const std::string& s) {
  if (s == "identity") return ExtractKind::identity;
  if (s == "pearson-norm") return ExtractKind::pearson_norm;
  if (s == "attention") return ExtractKind::attention;
  throw ConfigError("unknown extraction kind \"" + s + "\"");
}

DistanceKind distance_kind_from(const std::string& s) {
  if (s == "l2") return DistanceKind::l2;
  if (s == "pearson") return DistanceKind::pearson;
  if (s == "ssim") return DistanceKind::ssim;
  throw ConfigError("unknown distance kind \"" + s + "\"");
}

KnowledgeSource knowledge_source_from(const std::string& s) {
  if (s == "none") return KnowledgeSource::none;
  if (s == "teacher") return KnowledgeSource::teacher;
  if (s == "student") return KnowledgeSource::student;
  if (s == "both") return KnowledgeSource::both;
  throw ConfigError("unknown knowledge source \"" + s + "\"");
}

RatioSchedule ratio_schedule_from_json(const nlohmann::json& j) {
  reject_unknown(j, {"strategy", "n", "base", "step", "epoch_growth", "clamp_max"}, "schedule");
  RatioSchedule s;
  s.strategy = ratio_strategy_from(get_or<std::string>(j, "strategy", "b"));
  s.n = get_or(j, "n", s.n);
  s.base = get_or(j, "base", s.base);
  s.step = get_or(j, "step", s.step);
  s.epoch_growth = get_or(j, "epoch_growth", s.epoch_growth);
  s.clamp_max = get_or(j, "clamp_max", s.clamp_max);
  return s;
}

DistillConfig distill_config_from_json(const nlohmann::json& j) {
  reject_unknown(j,
                 {"n", "schedule", "extraction", "distance", "source", "residual",
                  "normalize_residual", "lambda_kd", "logits_mode", "temperature"},
                 "distill");
  DistillConfig c;
  c.n = get_or(j, "n", c.n);
  if (j.contains("schedule")) c.schedule = ratio_schedule_from_json(j.at("schedule"));
  c.extraction = extract_kind_from(get_or<std::string>(j, "extraction", "identity"));
  c.distance = distance_kind_from(get_or<std::string>(j, "distance", "l2"));
  c.source = knowledge_source_from(
      get_or<std::string>(j, "source", c.n == 0 ? "none" : "teacher"));
  c.residual = get_or(j, "residual", c.residual);
  c.normalize_residual = get_or(j, "normalize_residual", c.normalize_residual);
  c.lambda_kd = get_or(j, "lambda_kd", c.lambda_kd);
  c.logits_mode = get_or(j, "logits_mode", c.logits_mode);
  c.temperature = get_or(j, "temperature", c.temperature);
  validate(c);
  return c;
}

DataConfig data_config_from_json(const nlohmann::json& j) {
  reject_unknown(j,
                 {"n_samples", "label_noise_rate", "shapes_min", "shapes_max",
                  "overlap_allowed", "seed"},
                 "data");
  DataConfig c;
  c.n_samples = get_or(j, "n_samples", c.n_samples);
  c.label_noise_rate = get_or(j, "label_noise_rate", c.label_noise_rate);
  c.shapes_min = get_or(j, "shapes_min", c.shapes_min);
  c.shapes_max = get_or(j, "shapes_max", c.shapes_max);
  c.overlap_allowed = get_or(j, "overlap_allowed", c.overlap_allowed);
  c.seed = get_or(j, "seed", c.seed);
  validate(c);
  return c;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  reject_unknown(j,
                 {"epochs", "batch_size", "learning_rate", "optimizer", "seed", "distill",
                  "width", "depth", "deterministic"},
                 "train");
  TrainConfig c;
  c.epochs = get_or(j, "epochs", c.epochs);
  c.batch_size = get_or(j, "batch_size", c.batch_size);
  c.learning_rate = get_or(j, "learning_rate", c.learning_rate);
  const std::string opt = get_or<std::string>(j, "optimizer", "sgd-momentum");
  if (opt == "sgd-momentum")
    c.optimizer = OptimizerKind::sgd_momentum;
  else if (opt == "adam")
    c.optimizer = OptimizerKind::adam;
  else
    throw ConfigError("unknown optimizer \"" + opt + "\"");
  c.seed = get_or<uint64_t>(j, "seed", c.seed);
  if (j.contains("distill") && !j.at("distill").is_null())
    c.distill = distill_config_from_json(j.at("distill"));
  c.width = get_or(j, "width", c.width);
  c.depth = get_or(j, "depth", c.depth);
  c.deterministic = get_or(j, "deterministic", c.deterministic);
  validate(c);
  return c;
}

nlohmann::json to_json(const RatioSchedule& s) {
  return {{"strategy", to_string(s.strategy)}, {"n", s.n},
          {"base", s.base},                    {"step", s.step},
          {"epoch_growth", s.epoch_growth},    {"clamp_max", s.clamp_max}};
}

nlohmann::json to_json(const DistillConfig& c) {
  return {{"n", c.n},
          {"schedule", to_json(c.schedule)},
          {"extraction", to_string(c.extraction)},
          {"distance", to_string(c.distance)},
          {"source", to_string(c.source)},
          {"residual", c.residual},
          {"normalize_residual", c.normalize_residual},
          {"lambda_kd", c.lambda_kd},
          {"logits_mode", c.logits_mode},
          {"temperature", c.temperature}};
}

nlohmann::json to_json(const DataConfig& c) {
  return {{"n_samples", c.n_samples},
          {"label_noise_rate", c.label_noise_rate},
          {"shapes_min", c.shapes_min},
          {"shapes_max", c.shapes_max},
          {"overlap_allowed", c.overlap_allowed},
          {"seed", c.seed}};
}

nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json j{{"epochs", c.epochs},
                   {"batch_size", c.batch_size},
                   {"learning_rate", c.learning_rate},
                   {"optimizer", to_string(c.optimizer)},
                   {"seed", c.seed},
                   {"width", c.width},
                   {"depth", c.depth},
                   {"deterministic", c.deterministic}};
  if (c.distill) j["distill"] = to_json(*c.distill);
  return j;
}

nlohmann::json load_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path);
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("invalid JSON in " + path + ": " + e.what());
  }
}

}  // namespace uet
