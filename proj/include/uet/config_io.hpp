#pragma once

#include <string>

#include "json.hpp"
#include "uet/data.hpp"
#include "uet/distill.hpp"

namespace uet {

struct TrainConfig;       // train.hpp
enum class OptimizerKind;  // train.hpp

std::string to_string(RatioStrategy s);
std::string to_string(ExtractKind k);
std::string to_string(DistanceKind k);
std::string to_string(KnowledgeSource s);
std::string to_string(OptimizerKind k);

RatioStrategy ratio_strategy_from(const std::string& s);
ExtractKind extract_kind_from(const std::string& s);
DistanceKind distance_kind_from(const std::string& s);
KnowledgeSource knowledge_source_from(const std::string& s);

// strict parsers: unknown fields are rejected with ConfigError
RatioSchedule ratio_schedule_from_json(const nlohmann::json& j);
DistillConfig distill_config_from_json(const nlohmann::json& j);
DataConfig data_config_from_json(const nlohmann::json& j);
TrainConfig train_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const RatioSchedule& s);
nlohmann::json to_json(const DistillConfig& c);
nlohmann::json to_json(const DataConfig& c);
nlohmann::json to_json(const TrainConfig& c);

nlohmann::json load_json_file(const std::string& path);

}  // namespace uet
