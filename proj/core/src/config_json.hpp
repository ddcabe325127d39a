#pragma once

#include "gasnext/trainer.hpp"
#include <nlohmann/json.hpp>

namespace gasnext {

nlohmann::ordered_json model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::ordered_json& j);

}  // namespace gasnext
