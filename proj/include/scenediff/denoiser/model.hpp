#pragma once

#include <optional>
#include <vector>

#include "scenediff/denoiser/params.hpp"
#include "scenediff/scene/scene.hpp"
#include "scenediff/tensor/graph.hpp"

namespace scenediff::denoiser {

// World-frame states (B, T_hist + T, 4) backing the edge features and social
// mask: the history window followed by the future. Training uses ground-truth
// future states; inference uses a constant-velocity forecast.
DenseArray edge_states_training(const Scene& scene,
                                const DenseArray& expert_states,
                                std::int64_t t_hist);
DenseArray edge_states_inference(const Scene& scene, std::int64_t t_hist,
                                 std::int64_t horizon);

struct ForwardContext {
  const Scene* scene = nullptr;
  DenseArray edge_states;  // (B, T_hist + T, 4), world frame
  bool ablate_edges = false;
};

// Interleaved sin/cos positional encoding, base 10000: [sin, cos, sin, ...].
DenseArray sinusoid_embedding(double position, std::int64_t dim);

// Agent-centric (B, T_hist, 6) block: history states in each agent's frame
// plus per-step actions recovered from consecutive states (the final entry
// repeats the previous action).
DenseArray history_block(const Scene& scene, std::int64_t t_hist);

// tau_k: (B, N, T, 6) agent-centric. Output: (B, N, T_hist + T, d_h).
Var embed_inputs(Graph& g, Var tau_k, std::int64_t k, const Scene& scene,
                 const ParamVars& pv, const DenoiserDims& dims);

// Standard pre-residual multi-head self-attention + feed-forward over the
// time axis, per agent and sample. No causal mask.
Var temporal_attention(Graph& g, Var h, const ParamVars& pv,
                       const DenoiserDims& dims, std::int64_t layer);

// phi_r applied to the 7-component relative-state vectors: (B, B, Ttot, d_h).
Var edge_features(Graph& g, const DenseArray& edge_states, const Scene& scene,
                  const ParamVars& pv, const DenoiserDims& dims);

// The raw 7-component block before phi_r; exposed for oracle tests.
DenseArray edge_raw_features(const DenseArray& edge_states, const Scene& scene);

// 1 where j != i and their distance at t is within the social radius.
DenseArray social_mask(const DenseArray& edge_states, double radius);

// Gated edge-aware attention over agents, per timestep.
Var spatial_attention(Graph& g, Var h, Var edges, const DenseArray& mask,
                      const ParamVars& pv, const DenoiserDims& dims,
                      std::int64_t layer);

// Per-agent pooled lane tokens: (L_i, d_h), invalid Var when no lane is in
// range (empty token set).
std::vector<Var> encode_map(Graph& g, const Scene& scene, const ParamVars& pv,
                            const DenoiserDims& dims);

// Per-agent cross-attention into that agent's lane tokens; empty token set
// leaves the agent's rows unchanged.
Var map_attention(Graph& g, Var h, const std::vector<Var>& lane_tokens,
                  const ParamVars& pv, const DenoiserDims& dims,
                  std::int64_t layer);

// Full denoiser: embed -> [temporal -> spatial -> map] x layers -> output
// projection, sliced to the T future steps. Returns (B, N, T, 2).
Var forward(Graph& g, Var tau_k, std::int64_t k, const ForwardContext& ctx,
            const DenoiserParams& params, const ParamVars& pv);

// Convenience: non-recording forward on plain arrays.
DenseArray forward_eval(const DenseArray& tau_k, std::int64_t k,
                        const ForwardContext& ctx, const DenoiserParams& params);

}  // namespace scenediff::denoiser
