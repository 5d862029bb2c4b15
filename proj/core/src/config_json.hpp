#pragma once

#include <json.hpp>

#include "bisvp/trainer.hpp"

namespace bisvp::detail {

nlohmann::ordered_json train_config_json(const train::TrainConfig& cfg);
train::TrainConfig train_config_from(const nlohmann::json& j);

}  // namespace bisvp::detail
