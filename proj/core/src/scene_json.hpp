#pragma once

// Internal JSON conversions shared by the serialization code; not installed.

#include <nlohmann/json.hpp>

#include "tplab/scene.hpp"

namespace tplab {

nlohmann::json scene_to_json(const DrivingScene& scene);
DrivingScene scene_from_json(const nlohmann::json& j);

nlohmann::json trajectory_to_json(const Trajectory& t);
Trajectory trajectory_from_json(const nlohmann::json& j);

}  // namespace tplab
