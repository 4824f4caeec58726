#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "scenediff/scene/scene.hpp"
#include "scenediff/tensor/graph.hpp"

namespace scenediff::dynamics {

// An agent's frame anchor: its pose at the current timestep.
struct FramePose {
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;
};

inline FramePose anchor_of(const Scene& scene, int i) {
  const AgentState& s = scene.agents[static_cast<std::size_t>(i)].state;
  return {s.x, s.y, s.yaw};
}

// Explicit Euler with position updated from the pre-update speed/yaw; speed
// clamped at zero (no reverse).
AgentState step(const AgentState& s, const Action& a, double dt);

// s0: one state per agent (any frame). actions: (B, N, T, 2). Returns
// (B, N, T, 4) states after each action.
DenseArray rollout(const std::vector<AgentState>& s0, const DenseArray& actions,
                   double dt);

// Differentiable rollout; gradients flow from every state to every earlier
// action. actions: Var of shape (B, N, T, 2).
Var rollout(Graph& g, const std::vector<AgentState>& s0, Var actions, double dt);

// Per-agent initial states in each agent's own frame: (0, 0, v_i, 0).
std::vector<AgentState> agent_frame_starts(const Scene& scene);

struct InverseResult {
  DenseArray actions;       // (B, T, 2)
  double position_residual; // max |re-rollout - input| over positions, meters
};

// states: (B, T+1, 4) including the initial state. Re-rollout of the result
// reproduces v and yaw exactly; positions within the reported residual.
InverseResult inverse_actions(const DenseArray& states, double dt);

// Each agent holds its current speed and yaw for T steps: (B, T, 4), world.
DenseArray constant_velocity_forecast(const Scene& scene, std::int64_t T);

// ---- coordinate transforms (Appendix-style helpers) ----
// All differentiable versions operate on pos (B, N, T, 2) / yaw (B, N, T, 1).

std::pair<Var, Var> transform_coord_agents_to_world(Graph& g, Var pos, Var yaw,
                                                    const Scene& scene);
std::pair<Var, Var> transform_coord_world_to_agent_i(Graph& g, Var pos_world,
                                                     Var yaw_world,
                                                     const Scene& scene, int i);

// Plain-array twins used by map queries and metrics.
std::pair<DenseArray, DenseArray> transform_coord_agents_to_world(
    const DenseArray& pos, const DenseArray& yaw, const Scene& scene);
std::pair<DenseArray, DenseArray> transform_coord_world_to_agent_i(
    const DenseArray& pos_world, const DenseArray& yaw_world, const Scene& scene,
    int i);

// Slice of x with agent index i: (B, N, T, k) -> (N, T, k).
Var select_agent_ind(Var x, int i);

// Point transforms for single coordinates.
inline void agent_to_world_point(const FramePose& f, double xa, double ya,
                                 double& xw, double& yw) {
  double c = std::cos(f.yaw), s = std::sin(f.yaw);
  xw = c * xa - s * ya + f.x;
  yw = s * xa + c * ya + f.y;
}

inline void world_to_agent_point(const FramePose& f, double xw, double yw,
                                 double& xa, double& ya) {
  double c = std::cos(f.yaw), s = std::sin(f.yaw);
  double dx = xw - f.x, dy = yw - f.y;
  xa = c * dx + s * dy;
  ya = -s * dx + c * dy;
}

// Converts a world-frame SceneTrajectory to agent-centric or back.
SceneTrajectory to_world(const SceneTrajectory& traj, const Scene& scene);
SceneTrajectory to_agent_centric(const SceneTrajectory& traj, const Scene& scene);

}  // namespace scenediff::dynamics
