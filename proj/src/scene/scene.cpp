#include "scenediff/scene/scene.hpp"

#include <cmath>

#include "scenediff/common.hpp"

namespace scenediff {

const Lane* Scene::lane_by_id(int id) const {
  for (const Lane& l : lanes) {
    if (l.id == id) return &l;
  }
  return nullptr;
}

void Scene::validate() const {
  if (dt <= 0.0) throw DataError("scene: dt must be > 0");
  if (agents.empty()) throw DataError("scene: agents must be non-empty");
  for (std::size_t i = 0; i < lanes.size(); ++i) {
    const Lane& l = lanes[i];
    if (l.waypoints.size() < 2) {
      throw DataError("scene: lane " + std::to_string(l.id) +
                      " needs >= 2 waypoints");
    }
    if (l.half_width <= 0.0) {
      throw DataError("scene: lane " + std::to_string(l.id) +
                      " half_width must be > 0");
    }
    for (std::size_t w = 1; w < l.waypoints.size(); ++w) {
      double dx = l.waypoints[w].x - l.waypoints[w - 1].x;
      double dy = l.waypoints[w].y - l.waypoints[w - 1].y;
      if (dx * dx + dy * dy == 0.0) {
        throw DataError("scene: lane " + std::to_string(l.id) +
                        " has duplicate consecutive waypoints");
      }
    }
    if (l.left_id && !lane_by_id(*l.left_id)) {
      throw DataError("scene: lane " + std::to_string(l.id) +
                      " left_id refers to missing lane");
    }
    if (l.right_id && !lane_by_id(*l.right_id)) {
      throw DataError("scene: lane " + std::to_string(l.id) +
                      " right_id refers to missing lane");
    }
  }
  for (std::size_t i = 0; i < agents.size(); ++i) {
    const AgentState& s = agents[i].state;
    if (!(std::isfinite(s.x) && std::isfinite(s.y) && std::isfinite(s.v) &&
          std::isfinite(s.yaw))) {
      throw DataError("scene: agent " + std::to_string(i) +
                      " state must be finite");
    }
    if (s.v < 0.0) {
      throw DataError("scene: agent " + std::to_string(i) + " speed must be >= 0");
    }
    if (agents[i].length <= 0.0 || agents[i].width <= 0.0) {
      throw DataError("scene: agent " + std::to_string(i) +
                      " extents must be > 0");
    }
  }
  if (history.size() != agents.size()) {
    throw DataError("scene: history must have one track per agent");
  }
  std::size_t hl = history.empty() ? 0 : history[0].size();
  for (std::size_t i = 0; i < history.size(); ++i) {
    if (history[i].size() != hl) {
      throw DataError("scene: history tracks must have equal length");
    }
    if (history[i].empty()) {
      throw DataError("scene: history must be non-empty");
    }
  }
  if (!goals.empty() && goals.size() != agents.size()) {
    throw DataError("scene: goals must have one entry per agent");
  }
}

}  // namespace scenediff
