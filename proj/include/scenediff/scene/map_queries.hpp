#pragma once

#include <optional>
#include <vector>

#include "scenediff/scene/scene.hpp"

namespace scenediff {

// Agents farther than this from every centerline have no current lane.
inline constexpr double kOffMapThreshold = 50.0;

struct LaneProjection {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;  // segment direction at the projected point
  double arc = 0.0;      // arc length from the lane start
  double distance = 0.0; // euclidean point-to-centerline distance
};

// Closest point on the piecewise-linear centerline (closed-form per segment;
// ties resolved to the lowest arc length).
LaneProjection project_to_lane(const Lane& lane, double x, double y);

// Lane minimizing (centerline distance, |heading difference|) lexicographically;
// nullopt when the agent is beyond kOffMapThreshold from every centerline.
std::optional<int> current_lane(const Scene& scene, int agent);

enum class LaneKind { current, left, right };

struct LaneProjectionBlock {
  DenseArray block;                // (B, N, T, 3): x, y, yaw in agent frames
  std::vector<bool> fell_back;     // per agent: true when input was echoed
};

// Projects predicted agent-centric trajectories onto each agent's chosen lane
// and returns the result in each agent's frame. A missing neighbor lane (or no
// current lane) echoes the input trajectory for that agent.
LaneProjectionBlock lane_projection(LaneKind kind, const DenseArray& pos_pred,
                                    const DenseArray& yaw_pred,
                                    const Scene& scene);

// True iff the point is farther from the nearest lane centerline than that
// lane's half width.
bool offroad_test(double x, double y, const Scene& scene);

// Distance to the nearest centerline and that lane's half width; used by the
// off-road guidance loss and metrics.
struct NearestLaneInfo {
  int lane_index = -1;  // index into scene.lanes
  double distance = 0.0;
  double half_width = 0.0;
};
NearestLaneInfo nearest_lane(const Scene& scene, double x, double y);

}  // namespace scenediff
