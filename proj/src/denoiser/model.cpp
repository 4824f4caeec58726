#include "scenediff/denoiser/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "scenediff/common.hpp"
#include "scenediff/dynamics/unicycle.hpp"
#include "scenediff/scene/map_queries.hpp"
#include "scenediff/tensor/kernels.hpp"

namespace scenediff::denoiser {

namespace dyn = scenediff::dynamics;

DenseArray sinusoid_embedding(double position, std::int64_t dim) {
  DenseArray out({dim});
  for (std::int64_t i = 0; i < dim / 2; ++i) {
    const double freq =
        std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
    out[2 * i] = std::sin(position * freq);
    if (2 * i + 1 < dim) out[2 * i + 1] = std::cos(position * freq);
  }
  return out;
}

DenseArray edge_states_training(const Scene& scene,
                                const DenseArray& expert_states,
                                std::int64_t t_hist) {
  const std::int64_t B = scene.num_agents();
  if (expert_states.ndim() != 3 || expert_states.dim(0) != B ||
      expert_states.dim(2) != 4) {
    throw std::invalid_argument("edge_states: expert states must be (B, T, 4)");
  }
  const std::int64_t T = expert_states.dim(1);
  DenseArray out({B, t_hist + T, 4});
  for (std::int64_t b = 0; b < B; ++b) {
    const auto& track = scene.history[static_cast<std::size_t>(b)];
    const std::int64_t hl = static_cast<std::int64_t>(track.size());
    for (std::int64_t t = 0; t < t_hist; ++t) {
      // pad by repeating the oldest entry when the window is short
      const AgentState& s =
          track[static_cast<std::size_t>(std::max<std::int64_t>(0, hl - t_hist + t))];
      const std::int64_t o = (b * (t_hist + T) + t) * 4;
      out[o] = s.x;
      out[o + 1] = s.y;
      out[o + 2] = s.v;
      out[o + 3] = s.yaw;
    }
    for (std::int64_t t = 0; t < T; ++t) {
      const std::int64_t o = (b * (t_hist + T) + t_hist + t) * 4;
      const std::int64_t e = (b * T + t) * 4;
      for (int k = 0; k < 4; ++k) out[o + k] = expert_states[e + k];
    }
  }
  return out;
}

DenseArray edge_states_inference(const Scene& scene, std::int64_t t_hist,
                                 std::int64_t horizon) {
  DenseArray forecast = dyn::constant_velocity_forecast(scene, horizon);
  return edge_states_training(scene, forecast, t_hist);
}

DenseArray history_block(const Scene& scene, std::int64_t t_hist) {
  const std::int64_t B = scene.num_agents();
  DenseArray out({B, t_hist, 6});
  const double dt = scene.dt;
  for (std::int64_t b = 0; b < B; ++b) {
    const auto& track = scene.history[static_cast<std::size_t>(b)];
    const std::int64_t hl = static_cast<std::int64_t>(track.size());
    const dyn::FramePose anchor = dyn::anchor_of(scene, static_cast<int>(b));
    std::vector<AgentState> window(static_cast<std::size_t>(t_hist));
    for (std::int64_t t = 0; t < t_hist; ++t) {
      window[t] = track[static_cast<std::size_t>(std::max<std::int64_t>(0, hl - t_hist + t))];
    }
    double prev_acc = 0.0, prev_rate = 0.0;
    for (std::int64_t t = 0; t < t_hist; ++t) {
      double ax, ay;
      dyn::world_to_agent_point(anchor, window[t].x, window[t].y, ax, ay);
      double acc, rate;
      if (t + 1 < t_hist) {
        acc = (window[t + 1].v - window[t].v) / dt;
        rate = wrap_angle(window[t + 1].yaw - window[t].yaw) / dt;
        prev_acc = acc;
        prev_rate = rate;
      } else {
        acc = prev_acc;  // current step's action is not yet known
        rate = prev_rate;
      }
      const std::int64_t o = (b * t_hist + t) * 6;
      out[o + kChX] = ax;
      out[o + kChY] = ay;
      out[o + kChVel] = window[t].v;
      out[o + kChYaw] = wrap_angle(window[t].yaw - anchor.yaw);
      out[o + kChAcc] = acc;
      out[o + kChYawVel] = rate;
    }
  }
  return out;
}

namespace {

Var linear(Graph& g, Var x, Var w, Var b) { return add(matmul(x, w), b); }
Var relu(Var x) { return clip_min(x, 0.0); }

}  // namespace

Var embed_inputs(Graph& g, Var tau_k, std::int64_t k, const Scene& scene,
                 const ParamVars& pv, const DenoiserDims& dims) {
  const auto& shape = g.shape(tau_k);
  if (shape.size() != 4 || shape[3] != kNumChannels) {
    throw std::invalid_argument("embed_inputs: tau_k must be (B, N, T, 6)");
  }
  const std::int64_t B = shape[0], N = shape[1], T = shape[2];
  if (B != scene.num_agents()) {
    throw std::invalid_argument("embed_inputs: agent dim mismatch with scene");
  }
  const std::int64_t Th = dims.t_hist;
  const std::int64_t Ttot = Th + T;

  DenseArray hist = history_block(scene, Th);  // (B, Th, 6)
  Var hist_v = expand(reshape(g.constant(hist), {B, 1, Th, 6}), {B, N, Th, 6});
  Var full = concat({hist_v, tau_k}, 2);  // (B, N, Ttot, 6)

  Var h = linear(g, relu(linear(g, full, pv["rffn.w1"], pv["rffn.b1"])),
                 pv["rffn.w2"], pv["rffn.b2"]);

  Var step = matmul(reshape(g.constant(sinusoid_embedding(
                                static_cast<double>(k), dims.d_h)),
                            {1, dims.d_h}),
                    pv["step.w"]);  // (1, d_h), broadcasts over all positions
  h = add(h, reshape(step, {dims.d_h}));

  DenseArray pos({Ttot, dims.d_h});
  for (std::int64_t t = 0; t < Ttot; ++t) {
    DenseArray e = sinusoid_embedding(static_cast<double>(t), dims.d_h);
    for (std::int64_t i = 0; i < dims.d_h; ++i) pos[t * dims.d_h + i] = e[i];
  }
  return add(h, g.constant(pos));
}

Var temporal_attention(Graph& g, Var h, const ParamVars& pv,
                       const DenoiserDims& dims, std::int64_t layer) {
  const std::string lp = "layer" + std::to_string(layer) + ".t.";
  const auto& s = g.shape(h);
  const std::int64_t B = s[0], N = s[1], T = s[2];
  const std::int64_t H = dims.heads, dk = dims.d_k;

  auto heads_split = [&](Var x) {
    return permute(reshape(x, {B, N, T, H, dk}), {0, 1, 3, 2, 4});
  };
  Var q = heads_split(matmul(h, pv[lp + "wq"]));
  Var kk = heads_split(matmul(h, pv[lp + "wk"]));
  Var v = heads_split(matmul(h, pv[lp + "wv"]));

  Var scores = mul(matmul(q, transpose_last2(kk)), 1.0 / std::sqrt(double(dk)));
  Var alpha = softmax(scores, -1);                       // (B, N, H, T, T)
  Var ctx = permute(matmul(alpha, v), {0, 1, 3, 2, 4});  // (B, N, T, H, dk)
  Var attn = matmul(reshape(ctx, {B, N, T, dims.d_h}), pv[lp + "wo"]);

  Var h1 = layer_norm(add(h, attn), pv[lp + "ln1.gain"], pv[lp + "ln1.bias"]);
  Var ffn = linear(g, relu(linear(g, h1, pv[lp + "ffn_w1"], pv[lp + "ffn_b1"])),
                   pv[lp + "ffn_w2"], pv[lp + "ffn_b2"]);
  return layer_norm(add(h1, ffn), pv[lp + "ln2.gain"], pv[lp + "ln2.bias"]);
}

DenseArray edge_raw_features(const DenseArray& edge_states, const Scene& scene) {
  const std::int64_t B = edge_states.dim(0), Ttot = edge_states.dim(1);
  DenseArray raw({B, B, Ttot, 7});
  for (std::int64_t i = 0; i < B; ++i) {
    const dyn::FramePose anchor = dyn::anchor_of(scene, static_cast<int>(i));
    const double ci = std::cos(anchor.yaw), si = std::sin(anchor.yaw);
    const double vi0 = scene.agents[static_cast<std::size_t>(i)].state.v;
    for (std::int64_t j = 0; j < B; ++j) {
      for (std::int64_t t = 0; t < Ttot; ++t) {
        const std::int64_t ei = (j * Ttot + t) * 4;
        const std::int64_t si_t = (i * Ttot + t) * 4;
        const double xj = edge_states[ei], yj = edge_states[ei + 1];
        const double vj = edge_states[ei + 2], yawj = edge_states[ei + 3];
        const double dx = xj - anchor.x, dy = yj - anchor.y;
        const double dtheta = wrap_angle(yawj - anchor.yaw);
        const std::int64_t o = ((i * B + j) * Ttot + t) * 7;
        raw[o + 0] = ci * dx + si * dy;
        raw[o + 1] = -si * dx + ci * dy;
        raw[o + 2] = std::cos(dtheta);
        raw[o + 3] = std::sin(dtheta);
        raw[o + 4] = vj * std::cos(dtheta) - vi0;
        raw[o + 5] = vj * std::sin(dtheta);
        raw[o + 6] = std::hypot(xj - edge_states[si_t],
                                yj - edge_states[si_t + 1]);
      }
    }
  }
  return raw;
}

DenseArray social_mask(const DenseArray& edge_states, double radius) {
  const std::int64_t B = edge_states.dim(0), Ttot = edge_states.dim(1);
  DenseArray mask({B, B, Ttot});
  for (std::int64_t i = 0; i < B; ++i) {
    for (std::int64_t j = 0; j < B; ++j) {
      if (i == j) continue;
      for (std::int64_t t = 0; t < Ttot; ++t) {
        const double dx =
            edge_states[(i * Ttot + t) * 4] - edge_states[(j * Ttot + t) * 4];
        const double dy = edge_states[(i * Ttot + t) * 4 + 1] -
                          edge_states[(j * Ttot + t) * 4 + 1];
        mask[(i * B + j) * Ttot + t] = std::hypot(dx, dy) <= radius ? 1.0 : 0.0;
      }
    }
  }
  return mask;
}

Var edge_features(Graph& g, const DenseArray& edge_states, const Scene& scene,
                  const ParamVars& pv, const DenoiserDims& dims) {
  Var raw = g.constant(edge_raw_features(edge_states, scene));
  return linear(g, relu(linear(g, raw, pv["edge.w1"], pv["edge.b1"])),
                pv["edge.w2"], pv["edge.b2"]);
}

Var spatial_attention(Graph& g, Var h, Var edges, const DenseArray& mask,
                      const ParamVars& pv, const DenoiserDims& dims,
                      std::int64_t layer) {
  const std::string lp = "layer" + std::to_string(layer) + ".s.";
  const auto& s = g.shape(h);
  const std::int64_t B = s[0], N = s[1], T = s[2], dh = s[3];
  const std::int64_t H = dims.heads, dk = dims.d_k;

  Var q = matmul(h, pv[lp + "wq"]);  // (B, N, T, dh)
  Var hj = expand(reshape(h, {1, B, N, T, dh}), {B, B, N, T, dh});
  Var eij = expand(reshape(edges, {B, B, 1, T, dh}), {B, B, N, T, dh});
  Var kv_in = concat({hj, eij}, 4);  // (B, B, N, T, 2*dh)
  Var kk = matmul(kv_in, pv[lp + "wk"]);
  Var vv = matmul(kv_in, pv[lp + "wv"]);

  Var kq = permute(reshape(kk, {B, B, N, T, H, dk}), {0, 2, 3, 4, 5, 1});
  Var qq = reshape(q, {B, N, T, H, 1, dk});
  Var scores = mul(reshape(matmul(qq, kq), {B, N, T, H, B}),
                   1.0 / std::sqrt(double(dk)));

  Var mask_v = reshape(permute(g.constant(mask), {0, 2, 1}), {B, 1, T, 1, B});
  Var alpha = masked_softmax(scores, mask_v, -1);  // (B, N, T, H, Bj)

  Var vq = permute(reshape(vv, {B, B, N, T, H, dk}), {0, 2, 3, 4, 1, 5});
  Var m = reshape(matmul(reshape(alpha, {B, N, T, H, 1, B}), vq),
                  {B, N, T, dh});

  Var gate = sigmoid(matmul(concat({h, m}, 3), pv[lp + "wgate"]));
  Var hhat = add(mul(gate, matmul(h, pv[lp + "wself"])),
                 mul(sub(1.0, gate), m));
  return layer_norm(add(h, hhat), pv[lp + "ln.gain"], pv[lp + "ln.bias"]);
}

std::vector<Var> encode_map(Graph& g, const Scene& scene, const ParamVars& pv,
                            const DenoiserDims& dims) {
  const std::int64_t B = scene.num_agents();
  std::vector<Var> tokens(static_cast<std::size_t>(B));
  for (std::int64_t b = 0; b < B; ++b) {
    const dyn::FramePose anchor = dyn::anchor_of(scene, static_cast<int>(b));
    // nearby lanes, nearest-first
    std::vector<std::pair<double, std::size_t>> near;
    for (std::size_t li = 0; li < scene.lanes.size(); ++li) {
      LaneProjection p = project_to_lane(scene.lanes[li], anchor.x, anchor.y);
      if (p.distance <= dims.map_radius) near.emplace_back(p.distance, li);
    }
    std::stable_sort(near.begin(), near.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    if (near.size() > static_cast<std::size_t>(dims.max_lane_tokens)) {
      near.resize(static_cast<std::size_t>(dims.max_lane_tokens));
    }
    if (near.empty()) continue;  // empty token set

    std::vector<Var> lane_vecs;
    for (const auto& [dist, li] : near) {
      const Lane& lane = scene.lanes[li];
      // waypoint window centered on the nearest waypoint
      std::size_t c = 0;
      double best = 1e300;
      for (std::size_t w = 0; w < lane.waypoints.size(); ++w) {
        double d = std::hypot(lane.waypoints[w].x - anchor.x,
                              lane.waypoints[w].y - anchor.y);
        if (d < best) {
          best = d;
          c = w;
        }
      }
      const std::int64_t half = dims.lane_waypoint_window / 2;
      std::int64_t lo = static_cast<std::int64_t>(c) - half;
      std::int64_t hi = lo + dims.lane_waypoint_window;
      const std::int64_t n_wp = static_cast<std::int64_t>(lane.waypoints.size());
      if (lo < 0) {
        lo = 0;
        hi = std::min(n_wp, dims.lane_waypoint_window);
      } else if (hi > n_wp) {
        hi = n_wp;
        lo = std::max<std::int64_t>(0, n_wp - dims.lane_waypoint_window);
      }
      const std::int64_t W = hi - lo;
      DenseArray feat({W, 4});
      for (std::int64_t w = 0; w < W; ++w) {
        const auto& wp = lane.waypoints[static_cast<std::size_t>(lo + w)];
        double ax, ay;
        dyn::world_to_agent_point(anchor, wp.x, wp.y, ax, ay);
        const double rel_h = wrap_angle(wp.heading - anchor.yaw);
        feat[w * 4 + 0] = ax;
        feat[w * 4 + 1] = ay;
        feat[w * 4 + 2] = std::cos(rel_h);
        feat[w * 4 + 3] = std::sin(rel_h);
      }
      Var emb = relu(linear(g, g.constant(feat), pv["lane.enc"],
                            pv["lane.enc_b"]));                 // (W, d_h)
      Var score = matmul(emb, reshape(pv["lane.pool_q"], {dims.d_h, 1}));
      Var alpha = softmax(score, 0);                            // (W, 1)
      Var pooled = matmul(transpose_last2(alpha), emb);         // (1, d_h)
      lane_vecs.push_back(pooled);
    }
    tokens[static_cast<std::size_t>(b)] =
        lane_vecs.size() == 1 ? lane_vecs[0] : concat(lane_vecs, 0);
  }
  return tokens;
}

Var map_attention(Graph& g, Var h, const std::vector<Var>& lane_tokens,
                  const ParamVars& pv, const DenoiserDims& dims,
                  std::int64_t layer) {
  const std::string lp = "layer" + std::to_string(layer) + ".m.";
  const auto& s = g.shape(h);
  const std::int64_t B = s[0], N = s[1], T = s[2], dh = s[3];
  const std::int64_t H = dims.heads, dk = dims.d_k;

  std::vector<Var> rows;
  rows.reserve(static_cast<std::size_t>(B));
  for (std::int64_t b = 0; b < B; ++b) {
    Var hi = select_index(h, 0, b);  // (N, T, dh)
    const Var& tok = lane_tokens[static_cast<std::size_t>(b)];
    if (!tok.valid()) {
      rows.push_back(reshape(hi, {1, N, T, dh}));
      continue;
    }
    const std::int64_t L = g.shape(tok)[0];
    Var q = permute(reshape(matmul(hi, pv[lp + "wq"]), {N, T, H, dk}),
                    {0, 2, 1, 3});  // (N, H, T, dk)
    Var kmat = permute(reshape(matmul(tok, pv[lp + "wk"]), {L, H, dk}),
                       {1, 2, 0});  // (H, dk, L)
    Var vmat = permute(reshape(matmul(tok, pv[lp + "wv"]), {L, H, dk}),
                       {1, 0, 2});  // (H, L, dk)
    Var scores = mul(matmul(q, expand(reshape(kmat, {1, H, dk, L}), {N, H, dk, L})),
                     1.0 / std::sqrt(double(dk)));
    Var alpha = softmax(scores, -1);  // (N, H, T, L)
    Var ctx = matmul(alpha, expand(reshape(vmat, {1, H, L, dk}), {N, H, L, dk}));
    Var merged = reshape(permute(ctx, {0, 2, 1, 3}), {N, T, dh});
    Var out = matmul(merged, pv[lp + "wo"]);
    Var res = layer_norm(add(hi, out), pv[lp + "ln.gain"], pv[lp + "ln.bias"]);
    rows.push_back(reshape(res, {1, N, T, dh}));
  }
  return rows.size() == 1 ? rows[0] : concat(rows, 0);
}

Var forward(Graph& g, Var tau_k, std::int64_t k, const ForwardContext& ctx,
            const DenoiserParams& params, const ParamVars& pv) {
  if (ctx.scene == nullptr) {
    throw std::invalid_argument("forward: missing scene in context");
  }
  const DenoiserDims& dims = params.dims;
  const auto& s = g.shape(tau_k);
  if (s.size() != 4 || s[3] != kNumChannels) {
    throw std::invalid_argument("forward: tau_k must be (B, N, T, 6), got " +
                                shape_to_string(s));
  }
  const std::int64_t B = s[0], N = s[1], T = s[2];
  const std::int64_t Ttot = dims.t_hist + T;
  if (ctx.edge_states.ndim() != 3 || ctx.edge_states.dim(0) != B ||
      ctx.edge_states.dim(1) != Ttot) {
    throw std::invalid_argument("forward: edge_states must be (B, T_hist+T, 4)");
  }

  Var h = embed_inputs(g, tau_k, k, *ctx.scene, pv, dims);

  Var edges = ctx.ablate_edges
                  ? g.constant(DenseArray({B, B, Ttot, dims.d_h}))
                  : edge_features(g, ctx.edge_states, *ctx.scene, pv, dims);
  DenseArray mask = social_mask(ctx.edge_states, dims.social_radius);
  std::vector<Var> lane_tokens = encode_map(g, *ctx.scene, pv, dims);

  for (std::int64_t l = 0; l < dims.layers; ++l) {
    h = temporal_attention(g, h, pv, dims, l);
    h = spatial_attention(g, h, edges, mask, pv, dims, l);
    h = map_attention(g, h, lane_tokens, pv, dims, l);
  }

  Var future = slice(h, 2, dims.t_hist, Ttot);
  return add(matmul(future, pv["out.w"]), pv["out.b"]);
}

DenseArray forward_eval(const DenseArray& tau_k, std::int64_t k,
                        const ForwardContext& ctx, const DenoiserParams& params) {
  Graph g(/*recording=*/false);
  ParamVars pv(g, params, /*trainable=*/false);
  Var out = forward(g, g.constant(tau_k), k, ctx, params, pv);
  return g.value(out);
}

}  // namespace scenediff::denoiser
