#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace scenediff {

// Dense row-major array of 64-bit floats. Plain value type; all math lives in
// kernels.hpp (raw loops) and graph.hpp (autodiff ops).
class DenseArray {
 public:
  DenseArray() = default;

  // Zero-filled.
  explicit DenseArray(std::vector<std::int64_t> shape);
  DenseArray(std::vector<std::int64_t> shape, std::vector<double> data);

  static DenseArray scalar(double v) { return DenseArray({}, {v}); }
  static DenseArray full(std::vector<std::int64_t> shape, double v);

  const std::vector<std::int64_t>& shape() const { return shape_; }
  std::int64_t ndim() const { return static_cast<std::int64_t>(shape_.size()); }
  std::int64_t dim(std::int64_t i) const;  // supports negative indices
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& store() { return data_; }
  const std::vector<double>& store() const { return data_; }

  double& operator[](std::int64_t i) { return data_[i]; }
  double operator[](std::int64_t i) const { return data_[i]; }

  // Multi-index access; bounds-checked, for tests and small helpers.
  double& at(std::initializer_list<std::int64_t> idx);
  double at(std::initializer_list<std::int64_t> idx) const;

  bool same_shape(const DenseArray& o) const { return shape_ == o.shape_; }
  bool is_scalar() const { return data_.size() == 1 && shape_.empty(); }
  bool all_finite() const;

  // Returns a copy reshaped to `shape` (same element count).
  DenseArray reshaped(std::vector<std::int64_t> shape) const;

  std::string shape_str() const;

 private:
  std::int64_t flat_index(std::initializer_list<std::int64_t> idx) const;

  std::vector<std::int64_t> shape_;
  std::vector<double> data_;
};

std::string shape_to_string(const std::vector<std::int64_t>& shape);
std::int64_t shape_size(const std::vector<std::int64_t>& shape);

// Trailing-dimension broadcast of two shapes; throws std::invalid_argument
// naming both shapes when incompatible.
std::vector<std::int64_t> broadcast_shape(const std::vector<std::int64_t>& a,
                                          const std::vector<std::int64_t>& b);

}  // namespace scenediff
