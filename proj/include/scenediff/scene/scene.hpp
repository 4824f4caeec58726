#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "scenediff/tensor/array.hpp"

namespace scenediff {

// Trajectory block channel layout: (B, N, T, 6).
enum Channel : std::int64_t {
  kChX = 0,
  kChY = 1,
  kChVel = 2,
  kChYaw = 3,
  kChAcc = 4,
  kChYawVel = 5,
};
inline constexpr std::int64_t kNumChannels = 6;

struct AgentState {
  double x = 0.0;   // meters, world frame
  double y = 0.0;   // meters, world frame
  double v = 0.0;   // m/s, >= 0
  double yaw = 0.0; // radians in (-pi, pi]
};

struct Action {
  double acc = 0.0;      // m/s^2
  double yaw_rate = 0.0; // rad/s
};

struct LaneWaypoint {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;
};

struct Lane {
  int id = 0;
  std::vector<LaneWaypoint> waypoints;  // >= 2, consecutive points distinct
  double half_width = 1.75;
  std::optional<int> left_id;
  std::optional<int> right_id;
};

struct Agent {
  AgentState state;
  double length = 4.0;  // footprint, meters
  double width = 2.0;
};

struct GoalSpec {
  double x = 0.0;
  double y = 0.0;
  double target_speed = 0.0;
};

struct StopRegion {
  double x_min = 0.0, x_max = 0.0;
  double y_min = 0.0, y_max = 0.0;
  bool contains(double x, double y) const {
    return x >= x_min && x <= x_max && y >= y_min && y <= y_max;
  }
};

// Map, agents, and history: the conditioning context for the denoiser.
// History runs oldest-first and its last entry is the current state (also
// mirrored in agents[i].state, which anchors the agent's frame).
struct Scene {
  std::vector<Lane> lanes;
  std::vector<Agent> agents;
  std::vector<std::vector<AgentState>> history;
  double dt = 0.1;
  std::vector<GoalSpec> goals;            // optional; empty when unset
  std::optional<StopRegion> stop_region;  // optional

  int num_agents() const { return static_cast<int>(agents.size()); }
  int history_len() const {
    return history.empty() ? 0 : static_cast<int>(history[0].size());
  }
  const Lane* lane_by_id(int id) const;

  // Throws DataError on any invariant violation, naming the field.
  void validate() const;
};

enum class Frame { agent_centric, world };

// The (B, N, T, 6) block all trajectory math operates on.
struct SceneTrajectory {
  DenseArray block;
  Frame frame = Frame::agent_centric;

  std::int64_t num_agents() const { return block.dim(0); }
  std::int64_t num_samples() const { return block.dim(1); }
  std::int64_t horizon() const { return block.dim(2); }
};

// Ground-truth future produced by the expert policy, paired with a scene.
struct ExpertTrack {
  // World-frame states per agent per future step: (B, T, 4) as [x, y, v, yaw].
  DenseArray states;
  // Actions per agent per step: (B, T, 2) as [acc, yaw_rate].
  DenseArray actions;
};

struct SceneRecord {
  Scene scene;
  std::optional<ExpertTrack> expert;
};

}  // namespace scenediff
