#include "scenediff/tensor/graph.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "scenediff/common.hpp"
#include "scenediff/tensor/kernels.hpp"

namespace scenediff {

namespace {

void check_same_graph(Var a, Var b) {
  if (a.g != b.g) {
    throw std::invalid_argument("ops require Vars from the same Graph");
  }
}

// Shape of `reduced` re-inflated with 1s at the reduced dims of `full`.
std::vector<std::int64_t> keepdims_shape(const std::vector<std::int64_t>& full,
                                         const std::vector<std::int64_t>& dims) {
  std::vector<std::int64_t> out(full);
  for (auto d : dims) out[static_cast<std::size_t>(d)] = 1;
  return out;
}

}  // namespace

Var Graph::emplace(DenseArray value, std::vector<std::int32_t> inputs,
                   std::function<void(Graph&, std::int32_t)> backward_fn) {
  Node n;
  n.value = std::move(value);
  bool any_grad = false;
  for (auto i : inputs) any_grad = any_grad || nodes_[i].requires_grad;
  if (recording_ && any_grad && backward_fn) {
    n.requires_grad = true;
    n.inputs = std::move(inputs);
    n.backward_fn = std::move(backward_fn);
  }
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<std::int32_t>(nodes_.size() - 1)};
}

Var Graph::leaf(DenseArray v) {
  Node n;
  n.value = std::move(v);
  n.requires_grad = recording_;
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<std::int32_t>(nodes_.size() - 1)};
}

Var Graph::constant(DenseArray v) {
  Node n;
  n.value = std::move(v);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<std::int32_t>(nodes_.size() - 1)};
}

void Graph::accumulate_grad(std::int32_t id, const DenseArray& g) {
  Node& n = nodes_[id];
  DenseArray contrib = kernels::reduce_to(g, n.value.shape());
  if (!n.has_grad) {
    n.grad = std::move(contrib);
    n.has_grad = true;
  } else {
    double* pg = n.grad.data();
    const double* pc = contrib.data();
    const std::int64_t sz = n.grad.size();
    for (std::int64_t i = 0; i < sz; ++i) pg[i] += pc[i];
  }
}

const DenseArray& Graph::grad(Var v) {
  Node& n = nodes_[v.id];
  if (!n.has_grad) {
    n.grad = DenseArray(n.value.shape());
    n.has_grad = true;
  }
  return n.grad;
}

void Graph::backward(Var root) {
  if (root.g != this) {
    throw std::invalid_argument("backward: root from different graph");
  }
  Node& r = nodes_[root.id];
  if (r.value.size() != 1) {
    throw std::invalid_argument("backward: root must be scalar, got shape " +
                                r.value.shape_str());
  }
  r.grad = DenseArray(r.value.shape());
  r.grad[0] = 1.0;
  r.has_grad = true;
  for (std::int32_t i = root.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.has_grad && n.backward_fn) n.backward_fn(*this, i);
  }
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

namespace {

// Binary op with broadcast; dfa/dfb give the local partials as functions of
// (grad_out, a, b) evaluated elementwise on the broadcast shape.
template <class F, class DA, class DB>
Var binary_op(Var a, Var b, F f, DA dfa, DB dfb) {
  check_same_graph(a, b);
  Graph& g = *a.g;
  DenseArray out = kernels::ew_binary(g.value(a), g.value(b), f);
  return g.emplace(std::move(out), {a.id, b.id},
                   [dfa, dfb](Graph& gg, std::int32_t id) {
                     const auto& n = gg.node(id);
                     const DenseArray& go = n.grad;
                     const DenseArray& av = gg.node(n.inputs[0]).value;
                     const DenseArray& bv = gg.node(n.inputs[1]).value;
                     if (gg.node(n.inputs[0]).requires_grad) {
                       gg.accumulate_grad(n.inputs[0],
                                          kernels::ew_ternary(go, av, bv, dfa));
                     }
                     if (gg.node(n.inputs[1]).requires_grad) {
                       gg.accumulate_grad(n.inputs[1],
                                          kernels::ew_ternary(go, av, bv, dfb));
                     }
                   });
}

// Unary op; df gives the partial as a function of (grad_out, a, out).
template <class F, class DF>
Var unary_op(Var a, F f, DF df) {
  Graph& g = *a.g;
  DenseArray out = kernels::ew_unary(g.value(a), f);
  return g.emplace(std::move(out), {a.id},
                   [df](Graph& gg, std::int32_t id) {
                     const auto& n = gg.node(id);
                     const DenseArray& av = gg.node(n.inputs[0]).value;
                     gg.accumulate_grad(
                         n.inputs[0], kernels::ew_ternary(n.grad, av, n.value, df));
                   });
}

}  // namespace

Var add(Var a, Var b) {
  return binary_op(
      a, b, [](double x, double y) { return x + y; },
      [](double go, double, double) { return go; },
      [](double go, double, double) { return go; });
}

Var sub(Var a, Var b) {
  return binary_op(
      a, b, [](double x, double y) { return x - y; },
      [](double go, double, double) { return go; },
      [](double go, double, double) { return -go; });
}

Var mul(Var a, Var b) {
  return binary_op(
      a, b, [](double x, double y) { return x * y; },
      [](double go, double, double y) { return go * y; },
      [](double go, double x, double) { return go * x; });
}

Var divide(Var a, Var b) {
  return binary_op(
      a, b, [](double x, double y) { return x / y; },
      [](double go, double, double y) { return go / y; },
      [](double go, double x, double y) { return -go * x / (y * y); });
}

Var minimum(Var a, Var b) {
  return binary_op(
      a, b, [](double x, double y) { return std::min(x, y); },
      [](double go, double x, double y) { return x <= y ? go : 0.0; },
      [](double go, double x, double y) { return x <= y ? 0.0 : go; });
}

Var maximum(Var a, Var b) {
  return binary_op(
      a, b, [](double x, double y) { return std::max(x, y); },
      [](double go, double x, double y) { return x >= y ? go : 0.0; },
      [](double go, double x, double y) { return x >= y ? 0.0 : go; });
}

Var neg(Var a) {
  return unary_op(
      a, [](double x) { return -x; },
      [](double go, double, double) { return -go; });
}

Var abs_of(Var a) {
  return unary_op(
      a, [](double x) { return std::abs(x); },
      [](double go, double x, double) {
        return x > 0 ? go : (x < 0 ? -go : 0.0);
      });
}

Var sin_of(Var a) {
  return unary_op(
      a, [](double x) { return std::sin(x); },
      [](double go, double x, double) { return go * std::cos(x); });
}

Var cos_of(Var a) {
  return unary_op(
      a, [](double x) { return std::cos(x); },
      [](double go, double x, double) { return -go * std::sin(x); });
}

Var sqrt_of(Var a) {
  return unary_op(
      a, [](double x) { return std::sqrt(x); },
      [](double go, double, double o) { return o > 0 ? go / (2.0 * o) : 0.0; });
}

Var exp_of(Var a) {
  return unary_op(
      a, [](double x) { return std::exp(x); },
      [](double go, double, double o) { return go * o; });
}

Var log_of(Var a) {
  return unary_op(
      a, [](double x) { return std::log(x); },
      [](double go, double x, double) { return go / x; });
}

Var sigmoid(Var a) {
  return unary_op(
      a,
      [](double x) {
        return x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                      : std::exp(x) / (1.0 + std::exp(x));
      },
      [](double go, double, double o) { return go * o * (1.0 - o); });
}

Var clip_min(Var a, double bound) {
  return unary_op(
      a, [bound](double x) { return std::max(x, bound); },
      [bound](double go, double x, double) { return x > bound ? go : 0.0; });
}

Var clip_max(Var a, double bound) {
  return unary_op(
      a, [bound](double x) { return std::min(x, bound); },
      [bound](double go, double x, double) { return x < bound ? go : 0.0; });
}

Var fmod_of(Var a, double m) {
  return unary_op(
      a, [m](double x) { return std::fmod(x, m); },
      [](double go, double, double) { return go; });
}

Var pow_of(Var a, double e) {
  return unary_op(
      a, [e](double x) { return std::pow(x, e); },
      [e](double go, double x, double) { return go * e * std::pow(x, e - 1.0); });
}

Var wrap_angle_of(Var a) {
  return unary_op(
      a, [](double x) { return wrap_angle(x); },
      [](double go, double, double) { return go; });
}

Var where(Var mask, Var a, Var b) {
  check_same_graph(mask, a);
  check_same_graph(a, b);
  Graph& g = *a.g;
  DenseArray out = kernels::ew_ternary(
      g.value(mask), g.value(a), g.value(b),
      [](double m, double x, double y) { return m != 0.0 ? x : y; });
  return g.emplace(
      std::move(out), {mask.id, a.id, b.id},
      [](Graph& gg, std::int32_t id) {
        const auto& n = gg.node(id);
        const DenseArray& go = n.grad;
        const DenseArray& mv = gg.node(n.inputs[0]).value;
        if (gg.node(n.inputs[1]).requires_grad) {
          gg.accumulate_grad(n.inputs[1],
                             kernels::ew_binary(go, mv, [](double g_, double m) {
                               return m != 0.0 ? g_ : 0.0;
                             }));
        }
        if (gg.node(n.inputs[2]).requires_grad) {
          gg.accumulate_grad(n.inputs[2],
                             kernels::ew_binary(go, mv, [](double g_, double m) {
                               return m != 0.0 ? 0.0 : g_;
                             }));
        }
      });
}

Var add(Var a, double b) { return add(a, a.g->constant_scalar(b)); }
Var sub(Var a, double b) { return sub(a, a.g->constant_scalar(b)); }
Var sub(double a, Var b) { return sub(b.g->constant_scalar(a), b); }
Var mul(Var a, double b) { return mul(a, a.g->constant_scalar(b)); }
Var divide(Var a, double b) { return divide(a, a.g->constant_scalar(b)); }

// ---------------------------------------------------------------------------
// structure
// ---------------------------------------------------------------------------

Var matmul(Var a, Var b) {
  check_same_graph(a, b);
  Graph& g = *a.g;
  DenseArray out = kernels::matmul(g.value(a), g.value(b));
  return g.emplace(
      std::move(out), {a.id, b.id}, [](Graph& gg, std::int32_t id) {
        const auto& n = gg.node(id);
        const DenseArray& go = n.grad;
        const DenseArray& av = gg.node(n.inputs[0]).value;
        const DenseArray& bv = gg.node(n.inputs[1]).value;
        if (gg.node(n.inputs[0]).requires_grad) {
          gg.accumulate_grad(n.inputs[0],
                             kernels::matmul(go, kernels::transpose_last2(bv)));
        }
        if (gg.node(n.inputs[1]).requires_grad) {
          if (bv.ndim() == 2 && av.ndim() > 2) {
            // Shared rhs: fold batch into rows, one product sums everything.
            const std::int64_t k = av.dim(-1);
            const std::int64_t no = go.dim(-1);
            DenseArray a2 = av.reshaped({av.size() / k, k});
            DenseArray g2 = go.reshaped({go.size() / no, no});
            gg.accumulate_grad(n.inputs[1],
                               kernels::matmul(kernels::transpose_last2(a2), g2));
          } else {
            gg.accumulate_grad(n.inputs[1],
                               kernels::matmul(kernels::transpose_last2(av), go));
          }
        }
      });
}

Var transpose_last2(Var a) {
  Graph& g = *a.g;
  return g.emplace(kernels::transpose_last2(g.value(a)), {a.id},
                   [](Graph& gg, std::int32_t id) {
                     const auto& n = gg.node(id);
                     gg.accumulate_grad(n.inputs[0],
                                        kernels::transpose_last2(n.grad));
                   });
}

namespace {

DenseArray permute_array(const DenseArray& a, const std::vector<std::int64_t>& perm) {
  const std::size_t rank = a.shape().size();
  if (perm.size() != rank) {
    throw std::invalid_argument("permute: perm rank mismatch for " + a.shape_str());
  }
  std::vector<bool> seen(rank, false);
  std::vector<std::int64_t> out_shape(rank);
  for (std::size_t d = 0; d < rank; ++d) {
    if (perm[d] < 0 || perm[d] >= static_cast<std::int64_t>(rank) ||
        seen[static_cast<std::size_t>(perm[d])]) {
      throw std::invalid_argument("permute: invalid permutation");
    }
    seen[static_cast<std::size_t>(perm[d])] = true;
    out_shape[d] = a.shape()[static_cast<std::size_t>(perm[d])];
  }
  std::vector<std::int64_t> in_strides(rank, 1);
  for (std::size_t i = rank; i-- > 1;) {
    in_strides[i - 1] = in_strides[i] * a.shape()[i];
  }
  DenseArray out(out_shape);
  const std::int64_t n = out.size();
  const double* pa = a.data();
  double* po = out.data();
  SD_PAR_FOR(n)
  for (std::int64_t i = 0; i < n; ++i) {
    std::int64_t rem = i, src = 0;
    for (std::size_t d = rank; d-- > 0;) {
      src += (rem % out_shape[d]) * in_strides[static_cast<std::size_t>(perm[d])];
      rem /= out_shape[d];
    }
    po[i] = pa[src];
  }
  return out;
}

}  // namespace

Var permute(Var a, std::vector<std::int64_t> perm) {
  Graph& g = *a.g;
  DenseArray out = permute_array(g.value(a), perm);
  return g.emplace(std::move(out), {a.id},
                   [perm](Graph& gg, std::int32_t id) {
                     const auto& n = gg.node(id);
                     std::vector<std::int64_t> inv(perm.size());
                     for (std::size_t d = 0; d < perm.size(); ++d) {
                       inv[static_cast<std::size_t>(perm[d])] =
                           static_cast<std::int64_t>(d);
                     }
                     gg.accumulate_grad(n.inputs[0], permute_array(n.grad, inv));
                   });
}

Var reshape(Var a, std::vector<std::int64_t> shape) {
  Graph& g = *a.g;
  DenseArray out = g.value(a).reshaped(shape);
  return g.emplace(std::move(out), {a.id},
                   [](Graph& gg, std::int32_t id) {
                     const auto& n = gg.node(id);
                     const auto& in_shape = gg.node(n.inputs[0]).value.shape();
                     gg.accumulate_grad(n.inputs[0], n.grad.reshaped(in_shape));
                   });
}

Var expand(Var a, std::vector<std::int64_t> shape) {
  Graph& g = *a.g;
  return g.emplace(kernels::expand_to(g.value(a), shape), {a.id},
                   [](Graph& gg, std::int32_t id) {
                     const auto& n = gg.node(id);
                     // reduce_to inside accumulate_grad handles the sum.
                     gg.accumulate_grad(n.inputs[0], n.grad);
                   });
}

Var concat(const std::vector<Var>& parts, std::int64_t dim) {
  if (parts.empty()) throw std::invalid_argument("concat: no parts");
  Graph& g = *parts[0].g;
  const auto& first = g.value(parts[0]);
  std::int64_t rank = first.ndim();
  if (dim < 0) dim += rank;
  if (dim < 0 || dim >= rank) {
    throw std::invalid_argument("concat: dim out of range for " +
                                first.shape_str());
  }
  std::vector<std::int64_t> out_shape = first.shape();
  std::int64_t total = 0;
  for (const Var& p : parts) {
    check_same_graph(parts[0], p);
    const auto& s = g.value(p).shape();
    if (static_cast<std::int64_t>(s.size()) != rank) {
      throw std::invalid_argument("concat: rank mismatch");
    }
    for (std::int64_t d = 0; d < rank; ++d) {
      if (d != dim && s[d] != out_shape[d]) {
        throw std::invalid_argument("concat: shape mismatch at dim " +
                                    std::to_string(d) + ": " +
                                    shape_to_string(s) + " vs " +
                                    shape_to_string(out_shape));
      }
    }
    total += s[dim];
  }
  out_shape[dim] = total;

  std::int64_t outer = 1, inner = 1;
  for (std::int64_t d = 0; d < dim; ++d) outer *= out_shape[d];
  for (std::int64_t d = dim + 1; d < rank; ++d) inner *= out_shape[d];

  DenseArray out(out_shape);
  std::int64_t offset = 0;
  for (const Var& p : parts) {
    const DenseArray& pv = g.value(p);
    const std::int64_t pd = pv.shape()[dim];
    for (std::int64_t o = 0; o < outer; ++o) {
      const double* src = pv.data() + o * pd * inner;
      double* dst = out.data() + (o * total + offset) * inner;
      std::copy(src, src + pd * inner, dst);
    }
    offset += pd;
  }

  std::vector<std::int32_t> ids;
  ids.reserve(parts.size());
  for (const Var& p : parts) ids.push_back(p.id);
  return g.emplace(
      std::move(out), std::move(ids),
      [dim, outer, inner, total](Graph& gg, std::int32_t id) {
        const auto& n = gg.node(id);
        std::int64_t off = 0;
        for (auto in_id : n.inputs) {
          const DenseArray& iv = gg.node(in_id).value;
          const std::int64_t pd = iv.shape()[dim];
          if (gg.node(in_id).requires_grad) {
            DenseArray gi(iv.shape());
            for (std::int64_t o = 0; o < outer; ++o) {
              const double* src = n.grad.data() + (o * total + off) * inner;
              std::copy(src, src + pd * inner, gi.data() + o * pd * inner);
            }
            gg.accumulate_grad(in_id, gi);
          }
          off += pd;
        }
      });
}

Var slice(Var a, std::int64_t dim, std::int64_t lo, std::int64_t hi) {
  Graph& g = *a.g;
  const DenseArray& av = g.value(a);
  std::int64_t rank = av.ndim();
  if (dim < 0) dim += rank;
  if (dim < 0 || dim >= rank) {
    throw std::invalid_argument("slice: dim out of range for " + av.shape_str());
  }
  const std::int64_t d = av.shape()[dim];
  if (lo < 0 || hi > d || lo >= hi) {
    throw std::invalid_argument("slice: range [" + std::to_string(lo) + ", " +
                                std::to_string(hi) + ") invalid for extent " +
                                std::to_string(d));
  }
  std::int64_t outer = 1, inner = 1;
  for (std::int64_t i = 0; i < dim; ++i) outer *= av.shape()[i];
  for (std::int64_t i = dim + 1; i < rank; ++i) inner *= av.shape()[i];
  std::vector<std::int64_t> out_shape = av.shape();
  out_shape[dim] = hi - lo;
  DenseArray out(out_shape);
  const std::int64_t w = hi - lo;
  for (std::int64_t o = 0; o < outer; ++o) {
    const double* src = av.data() + (o * d + lo) * inner;
    std::copy(src, src + w * inner, out.data() + o * w * inner);
  }
  return g.emplace(std::move(out), {a.id},
                   [dim, lo, w, outer, inner, d](Graph& gg, std::int32_t id) {
                     const auto& n = gg.node(id);
                     const auto& iv = gg.node(n.inputs[0]).value;
                     DenseArray gi(iv.shape());
                     for (std::int64_t o = 0; o < outer; ++o) {
                       const double* src = n.grad.data() + o * w * inner;
                       std::copy(src, src + w * inner,
                                 gi.data() + (o * d + lo) * inner);
                     }
                     gg.accumulate_grad(n.inputs[0], gi);
                   });
}

Var select_index(Var a, std::int64_t dim, std::int64_t index) {
  Graph& g = *a.g;
  const DenseArray& av = g.value(a);
  std::int64_t rank = av.ndim();
  if (dim < 0) dim += rank;
  if (dim < 0 || dim >= rank) {
    throw std::invalid_argument("select_index: dim out of range");
  }
  if (index < 0 || index >= av.shape()[dim]) {
    throw std::out_of_range("select_index: index " + std::to_string(index) +
                            " out of range for extent " +
                            std::to_string(av.shape()[dim]));
  }
  Var s = slice(a, dim, index, index + 1);
  std::vector<std::int64_t> shape = g.value(s).shape();
  shape.erase(shape.begin() + dim);
  return reshape(s, shape);
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

Var reduce_sum(Var a, std::vector<std::int64_t> dims) {
  Graph& g = *a.g;
  const DenseArray& av = g.value(a);
  dims = kernels::normalize_dims(std::move(dims), av.ndim());
  DenseArray out = kernels::reduce_sum(av, dims);
  return g.emplace(std::move(out), {a.id},
                   [dims](Graph& gg, std::int32_t id) {
                     const auto& n = gg.node(id);
                     const auto& in_shape = gg.node(n.inputs[0]).value.shape();
                     DenseArray go =
                         n.grad.reshaped(keepdims_shape(in_shape, dims));
                     gg.accumulate_grad(n.inputs[0],
                                        kernels::expand_to(go, in_shape));
                   });
}

Var reduce_mean(Var a, std::vector<std::int64_t> dims) {
  Graph& g = *a.g;
  const DenseArray& av = g.value(a);
  auto nd = kernels::normalize_dims(dims, av.ndim());
  std::int64_t count = 1;
  for (auto d : nd) count *= av.shape()[static_cast<std::size_t>(d)];
  return divide(reduce_sum(a, std::move(dims)), static_cast<double>(count));
}

namespace {

Var reduce_extremum(Var a, std::vector<std::int64_t> dims, bool take_min) {
  Graph& g = *a.g;
  const DenseArray& av = g.value(a);
  dims = kernels::normalize_dims(std::move(dims), av.ndim());
  std::vector<std::int64_t> argsel;
  DenseArray out = kernels::reduce_minmax(av, dims, take_min,
                                          g.recording() ? &argsel : nullptr);
  return g.emplace(std::move(out), {a.id},
                   [argsel](Graph& gg, std::int32_t id) {
                     const auto& n = gg.node(id);
                     const auto& iv = gg.node(n.inputs[0]).value;
                     DenseArray gi(iv.shape());
                     for (std::size_t oi = 0; oi < argsel.size(); ++oi) {
                       gi[argsel[oi]] += n.grad[static_cast<std::int64_t>(oi)];
                     }
                     gg.accumulate_grad(n.inputs[0], gi);
                   });
}

}  // namespace

Var reduce_min(Var a, std::vector<std::int64_t> dims) {
  return reduce_extremum(a, std::move(dims), true);
}

Var reduce_max(Var a, std::vector<std::int64_t> dims) {
  return reduce_extremum(a, std::move(dims), false);
}

Var norm2(Var a, std::vector<std::int64_t> dims) {
  Graph& g = *a.g;
  const DenseArray& av = g.value(a);
  dims = kernels::normalize_dims(std::move(dims), av.ndim());
  DenseArray sq = kernels::ew_unary(av, [](double x) { return x * x; });
  DenseArray out = kernels::reduce_sum(sq, dims);
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(out[i]);
  return g.emplace(
      std::move(out), {a.id}, [dims](Graph& gg, std::int32_t id) {
        const auto& n = gg.node(id);
        const auto& iv = gg.node(n.inputs[0]).value;
        auto kshape = keepdims_shape(iv.shape(), dims);
        DenseArray go_k = n.grad.reshaped(kshape);
        DenseArray o_k = n.value.reshaped(kshape);
        // d|x|/dx = x / |x|; subgradient 0 at the origin.
        DenseArray scale = kernels::ew_binary(
            go_k, o_k, [](double g_, double o) { return o > 0 ? g_ / o : 0.0; });
        gg.accumulate_grad(n.inputs[0],
                           kernels::ew_binary(iv, kernels::expand_to(scale, iv.shape()),
                                              [](double x, double s) { return x * s; }));
      });
}

// ---------------------------------------------------------------------------
// normalization / attention
// ---------------------------------------------------------------------------

Var softmax(Var a, std::int64_t dim) {
  Graph& g = *a.g;
  const DenseArray& av = g.value(a);
  if (!av.all_finite()) {
    throw NumericError("softmax: non-finite input");
  }
  if (dim < 0) dim += av.ndim();
  DenseArray out = kernels::softmax(av, dim);
  return g.emplace(
      std::move(out), {a.id}, [dim](Graph& gg, std::int32_t id) {
        const auto& n = gg.node(id);
        const DenseArray& s = n.value;
        DenseArray gs = kernels::ew_binary(n.grad, s,
                                           [](double g_, double sv) { return g_ * sv; });
        DenseArray t = kernels::reduce_sum(gs, {dim});
        auto kshape = keepdims_shape(s.shape(), {dim});
        DenseArray t_exp = kernels::expand_to(t.reshaped(kshape), s.shape());
        DenseArray gi = kernels::ew_ternary(
            n.grad, s, t_exp,
            [](double g_, double sv, double tv) { return sv * (g_ - tv); });
        gg.accumulate_grad(n.inputs[0], gi);
      });
}

Var masked_softmax(Var a, Var mask, std::int64_t dim) {
  check_same_graph(a, mask);
  Graph& g = *a.g;
  const DenseArray& av = g.value(a);
  if (dim < 0) dim += av.ndim();
  DenseArray m = kernels::expand_to(g.value(mask), av.shape());

  std::int64_t outer = 1, inner = 1;
  const std::int64_t d = av.shape()[static_cast<std::size_t>(dim)];
  for (std::int64_t i = 0; i < dim; ++i) outer *= av.shape()[i];
  for (std::int64_t i = dim + 1; i < av.ndim(); ++i) inner *= av.shape()[i];

  DenseArray out(av.shape());
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t in = 0; in < inner; ++in) {
      const std::int64_t base = o * d * inner + in;
      double mx = -1e300;
      bool any = false;
      for (std::int64_t i = 0; i < d; ++i) {
        if (m[base + i * inner] != 0.0) {
          mx = std::max(mx, av[base + i * inner]);
          any = true;
        }
      }
      double sum = 0.0;
      for (std::int64_t i = 0; i < d; ++i) {
        double e = (any && m[base + i * inner] != 0.0)
                       ? std::exp(av[base + i * inner] - mx)
                       : 0.0;
        out[base + i * inner] = e;
        sum += e;
      }
      if (sum > 0.0) {
        for (std::int64_t i = 0; i < d; ++i) out[base + i * inner] /= sum;
      }
    }
  }
  return g.emplace(
      std::move(out), {a.id, mask.id}, [dim](Graph& gg, std::int32_t id) {
        // Same jacobian as softmax; masked/zero rows carry s == 0.
        const auto& n = gg.node(id);
        const DenseArray& s = n.value;
        DenseArray gs = kernels::ew_binary(n.grad, s,
                                           [](double g_, double sv) { return g_ * sv; });
        DenseArray t = kernels::reduce_sum(gs, {dim});
        auto kshape = keepdims_shape(s.shape(), {dim});
        DenseArray t_exp = kernels::expand_to(t.reshaped(kshape), s.shape());
        DenseArray gi = kernels::ew_ternary(
            n.grad, s, t_exp,
            [](double g_, double sv, double tv) { return sv * (g_ - tv); });
        gg.accumulate_grad(n.inputs[0], gi);
      });
}

Var layer_norm(Var a, Var gain, Var bias, double eps) {
  check_same_graph(a, gain);
  check_same_graph(a, bias);
  Graph& g = *a.g;
  const DenseArray& av = g.value(a);
  const std::int64_t d = av.dim(-1);
  if (g.value(gain).size() != d || g.value(bias).size() != d) {
    throw std::invalid_argument("layer_norm: gain/bias must have last-dim size " +
                                std::to_string(d));
  }
  const std::int64_t rows = av.size() / d;
  DenseArray xhat(av.shape());
  DenseArray inv_std({rows});
  const double* pa = av.data();
  const double* pg = g.value(gain).data();
  const double* pb = g.value(bias).data();
  DenseArray out(av.shape());
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* row = pa + r * d;
    double mean = 0.0;
    for (std::int64_t i = 0; i < d; ++i) mean += row[i];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::int64_t i = 0; i < d; ++i) {
      double c = row[i] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::int64_t i = 0; i < d; ++i) {
      double xh = (row[i] - mean) * is;
      xhat[r * d + i] = xh;
      out[r * d + i] = xh * pg[i] + pb[i];
    }
  }
  return g.emplace(
      std::move(out), {a.id, gain.id, bias.id},
      [xhat, inv_std, d](Graph& gg, std::int32_t id) {
        const auto& n = gg.node(id);
        const DenseArray& go = n.grad;
        const DenseArray& gv = gg.node(n.inputs[1]).value;
        const std::int64_t rows = go.size() / d;
        if (gg.node(n.inputs[1]).requires_grad) {
          DenseArray dgain({d});
          for (std::int64_t r = 0; r < rows; ++r) {
            for (std::int64_t i = 0; i < d; ++i) {
              dgain[i] += go[r * d + i] * xhat[r * d + i];
            }
          }
          gg.accumulate_grad(n.inputs[1], dgain);
        }
        if (gg.node(n.inputs[2]).requires_grad) {
          DenseArray dbias({d});
          for (std::int64_t r = 0; r < rows; ++r) {
            for (std::int64_t i = 0; i < d; ++i) dbias[i] += go[r * d + i];
          }
          gg.accumulate_grad(n.inputs[2], dbias);
        }
        if (gg.node(n.inputs[0]).requires_grad) {
          const auto& in_shape = gg.node(n.inputs[0]).value.shape();
          DenseArray da(in_shape);
          const double* pgain = gv.data();
          for (std::int64_t r = 0; r < rows; ++r) {
            double sum_dxh = 0.0, sum_dxh_xh = 0.0;
            for (std::int64_t i = 0; i < d; ++i) {
              double dxh = go[r * d + i] * pgain[i];
              sum_dxh += dxh;
              sum_dxh_xh += dxh * xhat[r * d + i];
            }
            const double inv_d = 1.0 / static_cast<double>(d);
            for (std::int64_t i = 0; i < d; ++i) {
              double dxh = go[r * d + i] * pgain[i];
              da[r * d + i] = inv_std[r] * (dxh - inv_d * sum_dxh -
                                            xhat[r * d + i] * inv_d * sum_dxh_xh);
            }
          }
          gg.accumulate_grad(n.inputs[0], da);
        }
      });
}

}  // namespace scenediff
