#pragma once

#include <string>

#include "scenediff/scene/scene.hpp"

namespace scenediff {

// Scene JSON (schema documented in docs/scene_schema.md). Lengths in meters,
// angles in radians, speeds in m/s. Throws DataError naming the offending
// field on schema violations.
SceneRecord load_scene(const std::string& path);
void save_scene(const SceneRecord& record, const std::string& path);

SceneRecord scene_from_json_text(const std::string& text);
std::string scene_to_json_text(const SceneRecord& record);

}  // namespace scenediff
