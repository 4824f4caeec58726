#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "scenediff/tensor/array.hpp"

namespace scenediff {

class Graph;

// Lightweight handle to a node in a Graph.
struct Var {
  Graph* g = nullptr;
  std::int32_t id = -1;
  bool valid() const { return g != nullptr && id >= 0; }
};

// Reverse-mode autodiff tape. Nodes are recorded in evaluation order, so the
// recording order is already a topological order; backward() walks it in
// reverse. One tape per forward pass; recording is single-threaded.
class Graph {
 public:
  explicit Graph(bool recording = true) : recording_(recording) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return recording_; }

  // Tracked leaf: participates in gradients.
  Var leaf(DenseArray v);
  // Constant: never receives a gradient.
  Var constant(DenseArray v);
  Var constant_scalar(double v) { return constant(DenseArray::scalar(v)); }

  const DenseArray& value(Var v) const { return nodes_[v.id].value; }
  const std::vector<std::int64_t>& shape(Var v) const {
    return nodes_[v.id].value.shape();
  }

  // Gradient of the last backward() root w.r.t. `v`. Zero-filled if the node
  // never received a gradient.
  const DenseArray& grad(Var v);

  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  // Backpropagates from a scalar root. Deterministic: fixed reverse
  // recording order, fixed accumulation order.
  void backward(Var root);

  std::size_t node_count() const { return nodes_.size(); }

  // --- internals used by op implementations ---
  struct Node {
    DenseArray value;
    DenseArray grad;
    bool requires_grad = false;
    bool has_grad = false;
    std::vector<std::int32_t> inputs;
    // Receives (graph, own id); adds contributions to input grads.
    std::function<void(Graph&, std::int32_t)> backward_fn;
  };

  Var emplace(DenseArray value, std::vector<std::int32_t> inputs,
              std::function<void(Graph&, std::int32_t)> backward_fn);

  Node& node(std::int32_t id) { return nodes_[id]; }
  const Node& node(std::int32_t id) const { return nodes_[id]; }

  // Accumulates `g` into node `id`'s gradient (allocating on first touch).
  void accumulate_grad(std::int32_t id, const DenseArray& g);

 private:
  bool recording_ = true;
  std::vector<Node> nodes_;
};

// ---- elementwise ----
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var divide(Var a, Var b);
Var neg(Var a);
Var abs_of(Var a);
Var sin_of(Var a);
Var cos_of(Var a);
Var sqrt_of(Var a);
Var exp_of(Var a);
Var log_of(Var a);
Var sigmoid(Var a);
// Subgradient 0 at the clipped boundary.
Var clip_min(Var a, double bound);
Var clip_max(Var a, double bound);
Var minimum(Var a, Var b);  // ties: gradient to a
Var maximum(Var a, Var b);
Var fmod_of(Var a, double m);
Var pow_of(Var a, double e);
// Wraps to (-pi, pi]; gradient 1 everywhere.
Var wrap_angle_of(Var a);
// mask is not differentiated.
Var where(Var mask, Var a, Var b);

// scalar conveniences
Var add(Var a, double b);
Var sub(Var a, double b);
Var sub(double a, Var b);
Var mul(Var a, double b);
Var divide(Var a, double b);

// ---- structure ----
Var matmul(Var a, Var b);
Var transpose_last2(Var a);
// General axis permutation: out dim d = in dim perm[d].
Var permute(Var a, std::vector<std::int64_t> perm);
Var reshape(Var a, std::vector<std::int64_t> shape);
Var expand(Var a, std::vector<std::int64_t> shape);
Var concat(const std::vector<Var>& parts, std::int64_t dim);
Var slice(Var a, std::int64_t dim, std::int64_t lo, std::int64_t hi);
// slice + remove the dim.
Var select_index(Var a, std::int64_t dim, std::int64_t index);

// ---- reductions ----
Var reduce_sum(Var a, std::vector<std::int64_t> dims);
Var reduce_mean(Var a, std::vector<std::int64_t> dims);
Var reduce_min(Var a, std::vector<std::int64_t> dims);
Var reduce_max(Var a, std::vector<std::int64_t> dims);
// Euclidean norm over dims; subgradient 0 at the origin.
Var norm2(Var a, std::vector<std::int64_t> dims);

// ---- normalization / attention ----
Var softmax(Var a, std::int64_t dim);
// Softmax over entries where mask==1 (mask broadcastable to a's shape,
// constant). Rows with no valid entry produce zeros.
Var masked_softmax(Var a, Var mask, std::int64_t dim);
// Normalizes the last dim; gain/bias shaped (last_dim).
Var layer_norm(Var a, Var gain, Var bias, double eps = 1e-5);

}  // namespace scenediff
