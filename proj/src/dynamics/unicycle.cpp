#include "scenediff/dynamics/unicycle.hpp"

#include <cmath>
#include <stdexcept>

#include "scenediff/common.hpp"
#include "scenediff/tensor/kernels.hpp"

namespace scenediff::dynamics {

AgentState step(const AgentState& s, const Action& a, double dt) {
  if (dt <= 0.0) throw std::invalid_argument("step: dt must be > 0");
  if (!(std::isfinite(s.x) && std::isfinite(s.y) && std::isfinite(s.v) &&
        std::isfinite(s.yaw) && std::isfinite(a.acc) &&
        std::isfinite(a.yaw_rate))) {
    throw NumericError("step: non-finite state or action");
  }
  AgentState out;
  out.x = s.x + s.v * std::cos(s.yaw) * dt;
  out.y = s.y + s.v * std::sin(s.yaw) * dt;
  out.v = std::max(0.0, s.v + a.acc * dt);
  out.yaw = wrap_angle(s.yaw + a.yaw_rate * dt);
  return out;
}

DenseArray rollout(const std::vector<AgentState>& s0, const DenseArray& actions,
                   double dt) {
  if (actions.ndim() != 4 || actions.dim(3) != 2) {
    throw std::invalid_argument("rollout: actions must be (B, N, T, 2), got " +
                                actions.shape_str());
  }
  const std::int64_t B = actions.dim(0), N = actions.dim(1), T = actions.dim(2);
  if (static_cast<std::int64_t>(s0.size()) != B) {
    throw std::invalid_argument("rollout: s0 size must match agent dim");
  }
  DenseArray out({B, N, T, 4});
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t n = 0; n < N; ++n) {
      AgentState s = s0[static_cast<std::size_t>(b)];
      for (std::int64_t t = 0; t < T; ++t) {
        const std::int64_t ai = ((b * N + n) * T + t) * 2;
        s = step(s, {actions[ai], actions[ai + 1]}, dt);
        const std::int64_t oi = ((b * N + n) * T + t) * 4;
        out[oi + 0] = s.x;
        out[oi + 1] = s.y;
        out[oi + 2] = s.v;
        out[oi + 3] = s.yaw;
      }
    }
  }
  return out;
}

Var rollout(Graph& g, const std::vector<AgentState>& s0, Var actions, double dt) {
  const auto& ash = g.shape(actions);
  if (ash.size() != 4 || ash[3] != 2) {
    throw std::invalid_argument("rollout: actions must be (B, N, T, 2)");
  }
  const std::int64_t B = ash[0], N = ash[1], T = ash[2];
  if (static_cast<std::int64_t>(s0.size()) != B) {
    throw std::invalid_argument("rollout: s0 size must match agent dim");
  }
  DenseArray x0({B, 1, 1, 1}), y0({B, 1, 1, 1}), v0({B, 1, 1, 1}),
      yaw0({B, 1, 1, 1});
  for (std::int64_t b = 0; b < B; ++b) {
    x0[b] = s0[b].x;
    y0[b] = s0[b].y;
    v0[b] = s0[b].v;
    yaw0[b] = s0[b].yaw;
  }
  std::vector<std::int64_t> lane_shape{B, N, 1, 1};
  Var x = g.constant(kernels::expand_to(x0, lane_shape));
  Var y = g.constant(kernels::expand_to(y0, lane_shape));
  Var v = g.constant(kernels::expand_to(v0, lane_shape));
  Var yaw = g.constant(kernels::expand_to(yaw0, lane_shape));

  Var acc_all = slice(actions, 3, 0, 1);   // (B, N, T, 1)
  Var rate_all = slice(actions, 3, 1, 2);  // (B, N, T, 1)

  std::vector<Var> states;
  states.reserve(static_cast<std::size_t>(T));
  for (std::int64_t t = 0; t < T; ++t) {
    Var acc = slice(acc_all, 2, t, t + 1);
    Var rate = slice(rate_all, 2, t, t + 1);
    Var c = cos_of(yaw);
    Var s = sin_of(yaw);
    x = add(x, mul(mul(v, c), dt));
    y = add(y, mul(mul(v, s), dt));
    v = clip_min(add(v, mul(acc, dt)), 0.0);
    yaw = wrap_angle_of(add(yaw, mul(rate, dt)));
    states.push_back(concat({x, y, v, yaw}, 3));  // (B, N, 1, 4)
  }
  return concat(states, 2);  // (B, N, T, 4)
}

std::vector<AgentState> agent_frame_starts(const Scene& scene) {
  std::vector<AgentState> out(scene.agents.size());
  for (std::size_t i = 0; i < scene.agents.size(); ++i) {
    out[i] = AgentState{0.0, 0.0, scene.agents[i].state.v, 0.0};
  }
  return out;
}

InverseResult inverse_actions(const DenseArray& states, double dt) {
  if (states.ndim() != 3 || states.dim(2) != 4) {
    throw std::invalid_argument("inverse_actions: states must be (B, T+1, 4)");
  }
  const std::int64_t B = states.dim(0), Tp1 = states.dim(1);
  if (Tp1 < 2) {
    throw std::invalid_argument("inverse_actions: need at least two states");
  }
  const std::int64_t T = Tp1 - 1;
  DenseArray actions({B, T, 2});
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t t = 0; t < T; ++t) {
      const std::int64_t i0 = (b * Tp1 + t) * 4;
      const std::int64_t i1 = (b * Tp1 + t + 1) * 4;
      actions[(b * T + t) * 2 + 0] = (states[i1 + 2] - states[i0 + 2]) / dt;
      actions[(b * T + t) * 2 + 1] =
          wrap_angle(states[i1 + 3] - states[i0 + 3]) / dt;
    }
  }
  // Measure how non-unicycle the input positions are.
  double residual = 0.0;
  std::vector<AgentState> s0(static_cast<std::size_t>(B));
  for (std::int64_t b = 0; b < B; ++b) {
    const std::int64_t i0 = b * Tp1 * 4;
    s0[b] = {states[i0], states[i0 + 1], states[i0 + 2], states[i0 + 3]};
  }
  DenseArray re = rollout(s0, actions.reshaped({B, 1, T, 2}), dt);
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t t = 0; t < T; ++t) {
      const std::int64_t ri = (b * T + t) * 4;
      const std::int64_t si = (b * Tp1 + t + 1) * 4;
      residual = std::max(residual, std::abs(re[ri] - states[si]));
      residual = std::max(residual, std::abs(re[ri + 1] - states[si + 1]));
    }
  }
  return {std::move(actions), residual};
}

DenseArray constant_velocity_forecast(const Scene& scene, std::int64_t T) {
  const std::int64_t B = scene.num_agents();
  std::vector<AgentState> s0(static_cast<std::size_t>(B));
  for (std::int64_t b = 0; b < B; ++b) s0[b] = scene.agents[b].state;
  DenseArray zero({B, 1, T, 2});
  DenseArray states = rollout(s0, zero, scene.dt);  // (B, 1, T, 4)
  return states.reshaped({B, T, 4});
}

namespace {

struct AnchorArrays {
  DenseArray c, s, tx, ty, yaw;  // each (B, 1, 1, 1)
};

AnchorArrays anchors_of(const Scene& scene) {
  const std::int64_t B = scene.num_agents();
  AnchorArrays a{DenseArray({B, 1, 1, 1}), DenseArray({B, 1, 1, 1}),
                 DenseArray({B, 1, 1, 1}), DenseArray({B, 1, 1, 1}),
                 DenseArray({B, 1, 1, 1})};
  for (std::int64_t b = 0; b < B; ++b) {
    FramePose f = anchor_of(scene, static_cast<int>(b));
    a.c[b] = std::cos(f.yaw);
    a.s[b] = std::sin(f.yaw);
    a.tx[b] = f.x;
    a.ty[b] = f.y;
    a.yaw[b] = f.yaw;
  }
  return a;
}

void check_pos_yaw(const std::vector<std::int64_t>& ps,
                   const std::vector<std::int64_t>& ys) {
  if (ps.size() != 4 || ps[3] != 2) {
    throw std::invalid_argument("transform: pos must be (B, N, T, 2), got " +
                                shape_to_string(ps));
  }
  if (ys.size() != 4 || ys[3] != 1) {
    throw std::invalid_argument("transform: yaw must be (B, N, T, 1), got " +
                                shape_to_string(ys));
  }
}

}  // namespace

std::pair<Var, Var> transform_coord_agents_to_world(Graph& g, Var pos, Var yaw,
                                                    const Scene& scene) {
  check_pos_yaw(g.shape(pos), g.shape(yaw));
  AnchorArrays a = anchors_of(scene);
  Var c = g.constant(a.c), s = g.constant(a.s);
  Var tx = g.constant(a.tx), ty = g.constant(a.ty), ayaw = g.constant(a.yaw);
  Var x = slice(pos, 3, 0, 1);
  Var y = slice(pos, 3, 1, 2);
  Var xw = add(sub(mul(x, c), mul(y, s)), tx);
  Var yw = add(add(mul(x, s), mul(y, c)), ty);
  return {concat({xw, yw}, 3), wrap_angle_of(add(yaw, ayaw))};
}

std::pair<Var, Var> transform_coord_world_to_agent_i(Graph& g, Var pos_world,
                                                     Var yaw_world,
                                                     const Scene& scene, int i) {
  check_pos_yaw(g.shape(pos_world), g.shape(yaw_world));
  if (i < 0 || i >= scene.num_agents()) {
    throw std::out_of_range("transform_coord_world_to_agent_i: index " +
                            std::to_string(i));
  }
  FramePose f = anchor_of(scene, i);
  Var c = g.constant_scalar(std::cos(f.yaw));
  Var s = g.constant_scalar(std::sin(f.yaw));
  Var dx = sub(slice(pos_world, 3, 0, 1), f.x);
  Var dy = sub(slice(pos_world, 3, 1, 2), f.y);
  Var xa = add(mul(dx, c), mul(dy, s));
  Var ya = sub(mul(dy, c), mul(dx, s));
  return {concat({xa, ya}, 3), wrap_angle_of(sub(yaw_world, f.yaw))};
}

std::pair<DenseArray, DenseArray> transform_coord_agents_to_world(
    const DenseArray& pos, const DenseArray& yaw, const Scene& scene) {
  Graph g(/*recording=*/false);
  auto [p, y] = transform_coord_agents_to_world(g, g.constant(pos),
                                                g.constant(yaw), scene);
  return {g.value(p), g.value(y)};
}

std::pair<DenseArray, DenseArray> transform_coord_world_to_agent_i(
    const DenseArray& pos_world, const DenseArray& yaw_world, const Scene& scene,
    int i) {
  Graph g(/*recording=*/false);
  auto [p, y] = transform_coord_world_to_agent_i(
      g, g.constant(pos_world), g.constant(yaw_world), scene, i);
  return {g.value(p), g.value(y)};
}

Var select_agent_ind(Var x, int i) {
  const auto& s = x.g->shape(x);
  if (s.empty()) throw std::invalid_argument("select_agent_ind: rank 0 input");
  if (i < 0 || i >= s[0]) {
    throw std::out_of_range("select_agent_ind: index " + std::to_string(i) +
                            " out of range for " + shape_to_string(s));
  }
  return select_index(x, 0, i);
}

namespace {

SceneTrajectory convert_frame(const SceneTrajectory& traj, const Scene& scene,
                              bool to_world_frame) {
  const DenseArray& blk = traj.block;
  const std::int64_t B = blk.dim(0), N = blk.dim(1), T = blk.dim(2);
  SceneTrajectory out;
  out.block = blk;
  out.frame = to_world_frame ? Frame::world : Frame::agent_centric;
  for (std::int64_t b = 0; b < B; ++b) {
    FramePose f = anchor_of(scene, static_cast<int>(b));
    for (std::int64_t n = 0; n < N; ++n) {
      for (std::int64_t t = 0; t < T; ++t) {
        const std::int64_t i = ((b * N + n) * T + t) * kNumChannels;
        double nx, ny, nyaw;
        if (to_world_frame) {
          agent_to_world_point(f, blk[i + kChX], blk[i + kChY], nx, ny);
          nyaw = wrap_angle(blk[i + kChYaw] + f.yaw);
        } else {
          world_to_agent_point(f, blk[i + kChX], blk[i + kChY], nx, ny);
          nyaw = wrap_angle(blk[i + kChYaw] - f.yaw);
        }
        out.block[i + kChX] = nx;
        out.block[i + kChY] = ny;
        out.block[i + kChYaw] = nyaw;
      }
    }
  }
  return out;
}

}  // namespace

SceneTrajectory to_world(const SceneTrajectory& traj, const Scene& scene) {
  if (traj.frame == Frame::world) return traj;
  return convert_frame(traj, scene, true);
}

SceneTrajectory to_agent_centric(const SceneTrajectory& traj, const Scene& scene) {
  if (traj.frame == Frame::agent_centric) return traj;
  return convert_frame(traj, scene, false);
}

}  // namespace scenediff::dynamics
