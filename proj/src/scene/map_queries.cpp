#include "scenediff/scene/map_queries.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "scenediff/common.hpp"
#include "scenediff/dynamics/unicycle.hpp"

namespace scenediff {

LaneProjection project_to_lane(const Lane& lane, double x, double y) {
  LaneProjection best;
  best.distance = std::numeric_limits<double>::infinity();
  double arc_start = 0.0;
  for (std::size_t i = 0; i + 1 < lane.waypoints.size(); ++i) {
    const auto& a = lane.waypoints[i];
    const auto& b = lane.waypoints[i + 1];
    const double ex = b.x - a.x, ey = b.y - a.y;
    const double len2 = ex * ex + ey * ey;
    double t = ((x - a.x) * ex + (y - a.y) * ey) / len2;
    t = std::min(1.0, std::max(0.0, t));
    const double px = a.x + t * ex, py = a.y + t * ey;
    const double d = std::hypot(x - px, y - py);
    if (d < best.distance) {
      best.distance = d;
      best.x = px;
      best.y = py;
      best.heading = std::atan2(ey, ex);
      best.arc = arc_start + t * std::sqrt(len2);
    }
    arc_start += std::sqrt(len2);
  }
  return best;
}

std::optional<int> current_lane(const Scene& scene, int agent) {
  if (agent < 0 || agent >= scene.num_agents()) {
    throw std::out_of_range("current_lane: agent index " + std::to_string(agent));
  }
  const AgentState& s = scene.agents[static_cast<std::size_t>(agent)].state;
  std::optional<int> best_id;
  double best_dist = kOffMapThreshold;
  double best_hdg = std::numeric_limits<double>::infinity();
  for (const Lane& lane : scene.lanes) {
    LaneProjection p = project_to_lane(lane, s.x, s.y);
    if (p.distance > kOffMapThreshold) continue;
    double hdg = std::abs(wrap_angle(s.yaw - p.heading));
    constexpr double kDistTie = 1e-9;
    if (p.distance < best_dist - kDistTie ||
        (std::abs(p.distance - best_dist) <= kDistTie && hdg < best_hdg)) {
      best_dist = p.distance;
      best_hdg = hdg;
      best_id = lane.id;
    }
  }
  return best_id;
}

LaneProjectionBlock lane_projection(LaneKind kind, const DenseArray& pos_pred,
                                    const DenseArray& yaw_pred,
                                    const Scene& scene) {
  if (pos_pred.ndim() != 4 || pos_pred.dim(3) != 2) {
    throw std::invalid_argument("lane_projection: pos must be (B, N, T, 2)");
  }
  const std::int64_t B = pos_pred.dim(0), N = pos_pred.dim(1),
                     T = pos_pred.dim(2);
  if (B != scene.num_agents()) {
    throw std::invalid_argument("lane_projection: agent dim " +
                                std::to_string(B) + " does not match scene");
  }

  LaneProjectionBlock out;
  out.block = DenseArray({B, N, T, 3});
  out.fell_back.assign(static_cast<std::size_t>(B), false);

  auto echo_agent = [&](std::int64_t b) {
    out.fell_back[static_cast<std::size_t>(b)] = true;
    for (std::int64_t n = 0; n < N; ++n) {
      for (std::int64_t t = 0; t < T; ++t) {
        const std::int64_t pi = ((b * N + n) * T + t) * 2;
        const std::int64_t yi = (b * N + n) * T + t;
        const std::int64_t oi = ((b * N + n) * T + t) * 3;
        out.block[oi + 0] = pos_pred[pi + 0];
        out.block[oi + 1] = pos_pred[pi + 1];
        out.block[oi + 2] = yaw_pred[yi];
      }
    }
  };

  for (std::int64_t b = 0; b < B; ++b) {
    std::optional<int> lane_id = current_lane(scene, static_cast<int>(b));
    if (lane_id && kind != LaneKind::current) {
      const Lane* cur = scene.lane_by_id(*lane_id);
      lane_id = (kind == LaneKind::left) ? cur->left_id : cur->right_id;
    }
    if (!lane_id) {
      echo_agent(b);
      continue;
    }
    const Lane* lane = scene.lane_by_id(*lane_id);
    const dynamics::FramePose anchor = dynamics::anchor_of(scene, static_cast<int>(b));
    for (std::int64_t n = 0; n < N; ++n) {
      for (std::int64_t t = 0; t < T; ++t) {
        const std::int64_t pi = ((b * N + n) * T + t) * 2;
        double wx, wy;
        dynamics::agent_to_world_point(anchor, pos_pred[pi], pos_pred[pi + 1], wx,
                                       wy);
        LaneProjection p = project_to_lane(*lane, wx, wy);
        double ax, ay;
        dynamics::world_to_agent_point(anchor, p.x, p.y, ax, ay);
        const std::int64_t oi = ((b * N + n) * T + t) * 3;
        out.block[oi + 0] = ax;
        out.block[oi + 1] = ay;
        out.block[oi + 2] = wrap_angle(p.heading - anchor.yaw);
      }
    }
  }
  return out;
}

NearestLaneInfo nearest_lane(const Scene& scene, double x, double y) {
  NearestLaneInfo info;
  info.distance = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < scene.lanes.size(); ++i) {
    LaneProjection p = project_to_lane(scene.lanes[i], x, y);
    if (p.distance < info.distance) {
      info.distance = p.distance;
      info.lane_index = static_cast<int>(i);
      info.half_width = scene.lanes[i].half_width;
    }
  }
  return info;
}

bool offroad_test(double x, double y, const Scene& scene) {
  NearestLaneInfo info = nearest_lane(scene, x, y);
  if (info.lane_index < 0) return true;
  return info.distance > info.half_width;
}

}  // namespace scenediff
