#pragma once

#include <json.hpp>

#include "otdr/sim.hpp"

namespace otdr {

nlohmann::json sim_config_to_json(const sim::SimConfig& cfg);

/// Missing keys keep their defaults; unknown keys are rejected.
sim::SimConfig sim_config_from_json(const nlohmann::json& j);

/// Doubles that may be +-inf are written as the strings "inf" / "-inf".
nlohmann::json number_to_json(double v);
double number_from_json(const nlohmann::json& j);

}  // namespace otdr
