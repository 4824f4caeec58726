#include "scenediff/tensor/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>

namespace scenediff::kernels {

namespace {
std::atomic<bool> g_parallel{true};
}

void set_parallel(bool on) { g_parallel.store(on); }
bool parallel_enabled() { return g_parallel.load(); }

std::vector<std::int64_t> normalize_dims(std::vector<std::int64_t> dims,
                                         std::int64_t rank) {
  for (auto& d : dims) {
    if (d < 0) d += rank;
    if (d < 0 || d >= rank) {
      throw std::invalid_argument("reduce: dim " + std::to_string(d) +
                                  " out of range for rank " +
                                  std::to_string(rank));
    }
  }
  std::sort(dims.begin(), dims.end());
  if (std::adjacent_find(dims.begin(), dims.end()) != dims.end()) {
    throw std::invalid_argument("reduce: duplicate dims");
  }
  return dims;
}

namespace {

// Splits a matmul operand into (batch, rows, cols).
struct MatView {
  std::int64_t batch, rows, cols;
};

MatView mat_view(const DenseArray& a) {
  if (a.ndim() < 2) {
    throw std::invalid_argument("matmul: operand must have rank >= 2, got " +
                                a.shape_str());
  }
  std::int64_t batch = 1;
  for (std::int64_t i = 0; i + 2 < a.ndim(); ++i) batch *= a.shape()[i];
  return {batch, a.shape()[a.ndim() - 2], a.shape()[a.ndim() - 1]};
}

}  // namespace

DenseArray matmul(const DenseArray& a, const DenseArray& b) {
  MatView va = mat_view(a);
  MatView vb = mat_view(b);
  if (va.cols != vb.rows) {
    throw std::invalid_argument("matmul: inner extents disagree: " +
                                a.shape_str() + " x " + b.shape_str());
  }
  const bool b_shared = (vb.batch == 1 && b.ndim() == 2);
  if (!b_shared) {
    // Batched rhs must carry identical leading dims.
    if (va.batch != vb.batch ||
        std::vector<std::int64_t>(a.shape().begin(), a.shape().end() - 2) !=
            std::vector<std::int64_t>(b.shape().begin(), b.shape().end() - 2)) {
      throw std::invalid_argument("matmul: batch dims disagree: " +
                                  a.shape_str() + " x " + b.shape_str());
    }
  }
  std::vector<std::int64_t> out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.push_back(vb.cols);
  DenseArray out(out_shape);

  const std::int64_t m = va.rows, k = va.cols, n = vb.cols;
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  const std::int64_t total_rows = va.batch * m;
  SD_PAR_FOR(total_rows * n * k / 4)
  for (std::int64_t r = 0; r < total_rows; ++r) {
    const std::int64_t bi = r / m;
    const double* arow = pa + r * k;
    const double* bmat = pb + (b_shared ? 0 : bi * k * n);
    double* orow = po + r * n;
    for (std::int64_t j = 0; j < n; ++j) orow[j] = 0.0;
    for (std::int64_t kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      if (av == 0.0) continue;
      const double* brow = bmat + kk * n;
      for (std::int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

DenseArray transpose_last2(const DenseArray& a) {
  MatView v = mat_view(a);
  auto shape = a.shape();
  std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
  DenseArray out(shape);
  const double* pa = a.data();
  double* po = out.data();
  const std::int64_t plane = v.rows * v.cols;
  SD_PAR_FOR(v.batch * plane)
  for (std::int64_t b = 0; b < v.batch; ++b) {
    const double* src = pa + b * plane;
    double* dst = po + b * plane;
    for (std::int64_t i = 0; i < v.rows; ++i) {
      for (std::int64_t j = 0; j < v.cols; ++j) {
        dst[j * v.rows + i] = src[i * v.cols + j];
      }
    }
  }
  return out;
}

namespace {

// Geometry shared by the reductions: output shape plus the strides needed to
// enumerate, for each output element, its reduction set in the input.
struct ReduceGeom {
  std::vector<std::int64_t> out_shape;
  std::vector<std::int64_t> kept_stride;   // per output dim: input stride
  std::vector<std::int64_t> red_extent;    // per reduced dim
  std::vector<std::int64_t> red_stride;
  std::int64_t red_count = 1;
};

ReduceGeom reduce_geom(const std::vector<std::int64_t>& shape,
                       const std::vector<std::int64_t>& dims) {
  ReduceGeom g;
  std::vector<std::int64_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) {
    strides[i - 1] = strides[i] * shape[i];
  }
  std::vector<bool> reduced(shape.size(), false);
  for (auto d : dims) {
    reduced[static_cast<std::size_t>(d)] = true;
    if (shape[static_cast<std::size_t>(d)] == 0) {
      throw std::invalid_argument("reduce over zero-extent dim");
    }
  }
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (reduced[i]) {
      g.red_extent.push_back(shape[i]);
      g.red_stride.push_back(strides[i]);
      g.red_count *= shape[i];
    } else {
      g.out_shape.push_back(shape[i]);
      g.kept_stride.push_back(strides[i]);
    }
  }
  return g;
}

// Input base offset of output element `oi`.
inline std::int64_t base_offset(std::int64_t oi, const ReduceGeom& g) {
  std::int64_t rem = oi, off = 0;
  for (std::size_t d = g.out_shape.size(); d-- > 0;) {
    off += (rem % g.out_shape[d]) * g.kept_stride[d];
    rem /= g.out_shape[d];
  }
  return off;
}

// Input offset of reduction element `ri` relative to a base.
inline std::int64_t red_offset(std::int64_t ri, const ReduceGeom& g) {
  std::int64_t off = 0;
  for (std::size_t d = g.red_extent.size(); d-- > 0;) {
    off += (ri % g.red_extent[d]) * g.red_stride[d];
    ri /= g.red_extent[d];
  }
  return off;
}

}  // namespace

DenseArray reduce_sum(const DenseArray& a, std::vector<std::int64_t> dims) {
  dims = normalize_dims(std::move(dims), a.ndim());
  ReduceGeom g = reduce_geom(a.shape(), dims);
  DenseArray out(g.out_shape);
  const std::int64_t n_out = out.size();
  const double* pa = a.data();
  double* po = out.data();
  SD_PAR_FOR(n_out * g.red_count)
  for (std::int64_t oi = 0; oi < n_out; ++oi) {
    const std::int64_t base = base_offset(oi, g);
    double acc = 0.0;
    for (std::int64_t ri = 0; ri < g.red_count; ++ri) {
      acc += pa[base + red_offset(ri, g)];
    }
    po[oi] = acc;
  }
  return out;
}

DenseArray reduce_minmax(const DenseArray& a, std::vector<std::int64_t> dims,
                         bool take_min, std::vector<std::int64_t>* argsel) {
  dims = normalize_dims(std::move(dims), a.ndim());
  ReduceGeom g = reduce_geom(a.shape(), dims);
  DenseArray out(g.out_shape);
  const std::int64_t n_out = out.size();
  if (argsel) argsel->assign(static_cast<std::size_t>(n_out), 0);
  const double* pa = a.data();
  double* po = out.data();
  SD_PAR_FOR(n_out * g.red_count)
  for (std::int64_t oi = 0; oi < n_out; ++oi) {
    const std::int64_t base = base_offset(oi, g);
    std::int64_t best_idx = base + red_offset(0, g);
    double best = pa[best_idx];
    for (std::int64_t ri = 1; ri < g.red_count; ++ri) {
      std::int64_t idx = base + red_offset(ri, g);
      double v = pa[idx];
      if (take_min ? (v < best) : (v > best)) {
        best = v;
        best_idx = idx;
      }
    }
    po[oi] = best;
    if (argsel) (*argsel)[static_cast<std::size_t>(oi)] = best_idx;
  }
  return out;
}

DenseArray softmax(const DenseArray& a, std::int64_t dim) {
  if (dim < 0) dim += a.ndim();
  if (dim < 0 || dim >= a.ndim()) {
    throw std::invalid_argument("softmax: dim out of range for " + a.shape_str());
  }
  std::int64_t outer = 1, inner = 1;
  const std::int64_t d = a.shape()[static_cast<std::size_t>(dim)];
  for (std::int64_t i = 0; i < dim; ++i) outer *= a.shape()[i];
  for (std::int64_t i = dim + 1; i < a.ndim(); ++i) inner *= a.shape()[i];
  DenseArray out(a.shape());
  const double* pa = a.data();
  double* po = out.data();
  const std::int64_t slices = outer * inner;
  SD_PAR_FOR(slices * d)
  for (std::int64_t s = 0; s < slices; ++s) {
    const std::int64_t o = s / inner, in = s % inner;
    const std::int64_t base = o * d * inner + in;
    double mx = pa[base];
    for (std::int64_t i = 1; i < d; ++i) {
      mx = std::max(mx, pa[base + i * inner]);
    }
    double sum = 0.0;
    for (std::int64_t i = 0; i < d; ++i) {
      double e = std::exp(pa[base + i * inner] - mx);
      po[base + i * inner] = e;
      sum += e;
    }
    for (std::int64_t i = 0; i < d; ++i) po[base + i * inner] /= sum;
  }
  return out;
}

DenseArray reduce_to(const DenseArray& g, const std::vector<std::int64_t>& target) {
  if (g.shape() == target) return g;
  // Sum over leading extra dims and over dims where target extent is 1.
  std::vector<std::int64_t> dims;
  const std::int64_t extra = g.ndim() - static_cast<std::int64_t>(target.size());
  for (std::int64_t i = 0; i < extra; ++i) dims.push_back(i);
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target[i] == 1 && g.shape()[extra + static_cast<std::int64_t>(i)] != 1) {
      dims.push_back(extra + static_cast<std::int64_t>(i));
    }
  }
  DenseArray out = dims.empty() ? g : reduce_sum(g, dims);
  return out.reshaped(target);
}

DenseArray expand_to(const DenseArray& a, const std::vector<std::int64_t>& target) {
  if (a.shape() == target) return a;
  // Validate broadcastability.
  (void)broadcast_shape(a.shape(), target);
  DenseArray out(target);
  const std::size_t rank = target.size();
  auto sa = detail::bcast_strides(a.shape(), rank);
  const std::int64_t n = out.size();
  const double* pa = a.data();
  double* po = out.data();
  SD_PAR_FOR(n)
  for (std::int64_t i = 0; i < n; ++i) {
    std::int64_t rem = i, ia = 0;
    for (std::size_t d = rank; d-- > 0;) {
      ia += (rem % target[d]) * sa[d];
      rem /= target[d];
    }
    po[i] = pa[ia];
  }
  return out;
}

}  // namespace scenediff::kernels

namespace scenediff::refk {

DenseArray matmul(const DenseArray& a, const DenseArray& b) {
  if (a.ndim() < 2 || b.ndim() < 2) {
    throw std::invalid_argument("refk::matmul: rank >= 2 required");
  }
  const std::int64_t m = a.shape()[a.ndim() - 2];
  const std::int64_t k = a.shape()[a.ndim() - 1];
  const std::int64_t n = b.shape()[b.ndim() - 1];
  if (b.shape()[b.ndim() - 2] != k) {
    throw std::invalid_argument("refk::matmul: inner extents disagree");
  }
  std::int64_t batch = 1;
  for (std::int64_t i = 0; i + 2 < a.ndim(); ++i) batch *= a.shape()[i];
  const bool b_shared = (b.ndim() == 2);
  std::vector<std::int64_t> out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.push_back(n);
  DenseArray out(out_shape);
  for (std::int64_t bi = 0; bi < batch; ++bi) {
    for (std::int64_t i = 0; i < m; ++i) {
      for (std::int64_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::int64_t kk = 0; kk < k; ++kk) {
          acc += a[(bi * m + i) * k + kk] *
                 b[(b_shared ? 0 : bi * k * n) + kk * n + j];
        }
        out[(bi * m + i) * n + j] = acc;
      }
    }
  }
  return out;
}

DenseArray reduce_sum(const DenseArray& a, std::vector<std::int64_t> dims) {
  dims = kernels::normalize_dims(std::move(dims), a.ndim());
  // Accumulate by walking every input element once.
  std::vector<bool> reduced(a.shape().size(), false);
  for (auto d : dims) reduced[static_cast<std::size_t>(d)] = true;
  std::vector<std::int64_t> out_shape;
  for (std::size_t i = 0; i < a.shape().size(); ++i) {
    if (!reduced[i]) out_shape.push_back(a.shape()[i]);
  }
  DenseArray out(out_shape);
  std::vector<std::int64_t> idx(a.shape().size(), 0);
  for (std::int64_t i = 0; i < a.size(); ++i) {
    std::int64_t oi = 0;
    for (std::size_t d = 0; d < idx.size(); ++d) {
      if (!reduced[d]) oi = oi * a.shape()[d] + idx[d];
    }
    out[oi] += a[i];
    for (std::size_t d = idx.size(); d-- > 0;) {
      if (++idx[d] < a.shape()[d]) break;
      idx[d] = 0;
    }
  }
  return out;
}

DenseArray softmax(const DenseArray& a, std::int64_t dim) {
  if (dim < 0) dim += a.ndim();
  std::int64_t outer = 1, inner = 1;
  const std::int64_t d = a.shape()[static_cast<std::size_t>(dim)];
  for (std::int64_t i = 0; i < dim; ++i) outer *= a.shape()[i];
  for (std::int64_t i = dim + 1; i < a.ndim(); ++i) inner *= a.shape()[i];
  DenseArray out(a.shape());
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t in = 0; in < inner; ++in) {
      const std::int64_t base = o * d * inner + in;
      double mx = a[base];
      for (std::int64_t i = 1; i < d; ++i) mx = std::max(mx, a[base + i * inner]);
      double sum = 0.0;
      for (std::int64_t i = 0; i < d; ++i) sum += std::exp(a[base + i * inner] - mx);
      for (std::int64_t i = 0; i < d; ++i) {
        out[base + i * inner] = std::exp(a[base + i * inner] - mx) / sum;
      }
    }
  }
  return out;
}

}  // namespace scenediff::refk
