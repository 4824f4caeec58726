#pragma once

#include <functional>
#include <string>

#include "scenediff/scene/scene.hpp"
#include "scenediff/tensor/graph.hpp"

namespace scenediff {

// A compiled, differentiable loss program: maps a full 6-channel agent-centric
// trajectory block (as a graph Var) to per-sample losses of shape (N) or
// (B, N). Pure and deterministic; gradients flow to the block.
struct GuidanceLoss {
  std::function<Var(Graph&, Var block6, const Scene&)> eval;
  std::string name;

  bool valid() const { return static_cast<bool>(eval); }
};

// Aggregates a loss value of shape (N) or (B, N) to per-sample values (N):
// identity for (N), mean over agents for (B, N).
Var aggregate_per_sample(Graph& g, Var loss);

}  // namespace scenediff
