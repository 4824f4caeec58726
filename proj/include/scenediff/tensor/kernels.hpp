#pragma once

#include <cstdint>
#include <vector>

#include "scenediff/tensor/array.hpp"

#if defined(_OPENMP)
#define SCENEDIFF_PRAGMA(x) _Pragma(#x)
#define SD_PAR_FOR(n)                                                  \
  SCENEDIFF_PRAGMA(omp parallel for schedule(static) if (               \
      ::scenediff::kernels::parallel_enabled() &&                       \
      (n) >= ::scenediff::kernels::kParGrain))
#else
#define SD_PAR_FOR(n)
#endif

namespace scenediff::kernels {

// Minimum element count before a kernel goes parallel.
inline constexpr std::int64_t kParGrain = 8192;

void set_parallel(bool on);
bool parallel_enabled();

namespace detail {

inline bool is_suffix(const std::vector<std::int64_t>& small,
                      const std::vector<std::int64_t>& big) {
  if (small.size() > big.size()) return false;
  for (std::size_t i = 0; i < small.size(); ++i) {
    if (small[small.size() - 1 - i] != big[big.size() - 1 - i]) return false;
  }
  return true;
}

// Row-major strides padded to `rank`, with 0 on broadcast (size-1 or missing)
// dims so a flat output index maps to the operand's element.
inline std::vector<std::int64_t> bcast_strides(
    const std::vector<std::int64_t>& shape, std::size_t rank) {
  std::vector<std::int64_t> strides(rank, 0);
  std::int64_t s = 1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    std::size_t d = shape.size() - 1 - i;
    strides[rank - 1 - i] = (shape[d] == 1) ? 0 : s;
    s *= shape[d];
  }
  return strides;
}

}  // namespace detail

template <class F>
DenseArray ew_unary(const DenseArray& a, F f) {
  DenseArray out(a.shape());
  const std::int64_t n = out.size();
  const double* pa = a.data();
  double* po = out.data();
  SD_PAR_FOR(n)
  for (std::int64_t i = 0; i < n; ++i) po[i] = f(pa[i]);
  return out;
}

template <class F>
DenseArray ew_binary(const DenseArray& a, const DenseArray& b, F f) {
  auto out_shape = broadcast_shape(a.shape(), b.shape());
  DenseArray out(out_shape);
  const std::int64_t n = out.size();
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  if (a.shape() == b.shape()) {
    SD_PAR_FOR(n)
    for (std::int64_t i = 0; i < n; ++i) po[i] = f(pa[i], pb[i]);
  } else if (b.size() == 1) {
    const double bv = pb[0];
    SD_PAR_FOR(n)
    for (std::int64_t i = 0; i < n; ++i) po[i] = f(pa[i], bv);
  } else if (a.size() == 1) {
    const double av = pa[0];
    SD_PAR_FOR(n)
    for (std::int64_t i = 0; i < n; ++i) po[i] = f(av, pb[i]);
  } else if (a.shape() == out_shape && detail::is_suffix(b.shape(), out_shape)) {
    const std::int64_t m = b.size();
    SD_PAR_FOR(n)
    for (std::int64_t i = 0; i < n; ++i) po[i] = f(pa[i], pb[i % m]);
  } else if (b.shape() == out_shape && detail::is_suffix(a.shape(), out_shape)) {
    const std::int64_t m = a.size();
    SD_PAR_FOR(n)
    for (std::int64_t i = 0; i < n; ++i) po[i] = f(pa[i % m], pb[i]);
  } else {
    const std::size_t rank = out_shape.size();
    auto sa = detail::bcast_strides(a.shape(), rank);
    auto sb = detail::bcast_strides(b.shape(), rank);
    SD_PAR_FOR(n)
    for (std::int64_t i = 0; i < n; ++i) {
      std::int64_t rem = i, ia = 0, ib = 0;
      for (std::size_t d = rank; d-- > 0;) {
        std::int64_t idx = rem % out_shape[d];
        rem /= out_shape[d];
        ia += idx * sa[d];
        ib += idx * sb[d];
      }
      po[i] = f(pa[ia], pb[ib]);
    }
  }
  return out;
}

// out = f(a, b, c) with full broadcast; used by where().
template <class F>
DenseArray ew_ternary(const DenseArray& a, const DenseArray& b,
                      const DenseArray& c, F f) {
  auto s = broadcast_shape(broadcast_shape(a.shape(), b.shape()), c.shape());
  DenseArray out(s);
  const std::int64_t n = out.size();
  const std::size_t rank = s.size();
  auto sa = detail::bcast_strides(a.shape(), rank);
  auto sb = detail::bcast_strides(b.shape(), rank);
  auto sc = detail::bcast_strides(c.shape(), rank);
  const double* pa = a.data();
  const double* pb = b.data();
  const double* pc = c.data();
  double* po = out.data();
  SD_PAR_FOR(n)
  for (std::int64_t i = 0; i < n; ++i) {
    std::int64_t rem = i, ia = 0, ib = 0, ic = 0;
    for (std::size_t d = rank; d-- > 0;) {
      std::int64_t idx = rem % s[d];
      rem /= s[d];
      ia += idx * sa[d];
      ib += idx * sb[d];
      ic += idx * sc[d];
    }
    po[i] = f(pa[ia], pb[ib], pc[ic]);
  }
  return out;
}

// Batched matrix product. a: (..., m, k); b: (k, n) or (..., k, n) with
// identical leading dims. Throws on inner-extent mismatch.
DenseArray matmul(const DenseArray& a, const DenseArray& b);

// Swap the last two dims.
DenseArray transpose_last2(const DenseArray& a);

// Sum over `dims` (distinct, normalized); reduced dims are removed.
DenseArray reduce_sum(const DenseArray& a, std::vector<std::int64_t> dims);

// Min/max over `dims`; `argsel` (optional) receives, per output element, the
// flat input index of the first extremal element (ties -> lowest index).
DenseArray reduce_minmax(const DenseArray& a, std::vector<std::int64_t> dims,
                         bool take_min, std::vector<std::int64_t>* argsel);

// Max-shifted softmax along `dim`.
DenseArray softmax(const DenseArray& a, std::int64_t dim);

// Sum-reduce `g` down to `target` shape (inverse of broadcasting).
DenseArray reduce_to(const DenseArray& g, const std::vector<std::int64_t>& target);

// Broadcast-copy `a` up to `target` shape.
DenseArray expand_to(const DenseArray& a, const std::vector<std::int64_t>& target);

// Normalizes possibly-negative dims, checks distinctness and range.
std::vector<std::int64_t> normalize_dims(std::vector<std::int64_t> dims,
                                         std::int64_t rank);

}  // namespace scenediff::kernels

// Serial reference kernels: naive, loop-ordered implementations used by the
// test suite and the benchmark to cross-check the parallel paths.
namespace scenediff::refk {

DenseArray matmul(const DenseArray& a, const DenseArray& b);
DenseArray reduce_sum(const DenseArray& a, std::vector<std::int64_t> dims);
DenseArray softmax(const DenseArray& a, std::int64_t dim);

template <class F>
DenseArray ew_binary(const DenseArray& a, const DenseArray& b, F f) {
  auto out_shape = broadcast_shape(a.shape(), b.shape());
  DenseArray out(out_shape);
  const std::size_t rank = out_shape.size();
  auto sa = kernels::detail::bcast_strides(a.shape(), rank);
  auto sb = kernels::detail::bcast_strides(b.shape(), rank);
  for (std::int64_t i = 0; i < out.size(); ++i) {
    std::int64_t rem = i, ia = 0, ib = 0;
    for (std::size_t d = rank; d-- > 0;) {
      std::int64_t idx = rem % out_shape[d];
      rem /= out_shape[d];
      ia += idx * sa[d];
      ib += idx * sb[d];
    }
    out[i] = f(a[ia], b[ib]);
  }
  return out;
}

}  // namespace scenediff::refk
