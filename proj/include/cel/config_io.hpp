#pragma once

// JSON conversions for the model and training configs. Used by checkpoint
// manifests and by the command-line config file. Parsing accepts partial
// objects (missing keys keep defaults) and rejects unknown keys by name.

#include "json.hpp"

#include "cel/network.hpp"
#include "cel/trainer.hpp"

namespace cel::cfgio {

nlohmann::json model_config_to_json(const net::ModelConfig& cfg);
net::ModelConfig model_config_from_json(const nlohmann::json& j);

nlohmann::json train_config_to_json(const train::TrainConfig& cfg);
train::TrainConfig train_config_from_json(const nlohmann::json& j);

}  // namespace cel::cfgio
